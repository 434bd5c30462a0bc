#include "sglmm/sglmm.hpp"
#include <cstdio>
int main() { std::puts(sglmm::kVersion); return 0; }

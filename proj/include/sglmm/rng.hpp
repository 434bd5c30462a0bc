#pragma once

#include "sglmm/core.hpp"

#include <cstdint>
#include <random>

namespace sglmm {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Derives an independent stream seed from a base seed and tags.
inline uint64_t mix_seed(uint64_t seed, uint64_t tag0, uint64_t tag1 = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(tag0)) ^ splitmix64(~tag1));
}

// mt19937_64 with hand-rolled variate transforms so that draws are
// reproducible across platforms (the standard distributions are
// implementation-defined).
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // uniform on (0,1), 53-bit resolution, never exactly 0
  double uniform() { return (static_cast<double>(gen_() >> 11) + 0.5) * 0x1p-53; }

  // Box-Muller, two uniforms per variate
  double normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  VectorXd normal_vector(Eigen::Index n) {
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
    return v;
  }

  int bernoulli(double p) { return uniform() < p ? 1 : 0; }

  // Multiplicative inversion for small means, Hormann's PTRD transformed
  // rejection for large ones.
  long poisson(double mean) {
    require(mean >= 0 && std::isfinite(mean), Error::Kind::numerical,
            "poisson mean must be finite and nonnegative");
    if (mean == 0) return 0;
    if (mean < 10.0) {
      const double limit = std::exp(-mean);
      long k = 0;
      double prod = uniform();
      while (prod > limit) {
        ++k;
        prod *= uniform();
      }
      return k;
    }
    return poisson_ptrd(mean);
  }

 private:
  long poisson_ptrd(double mu) {
    const double smu = std::sqrt(mu);
    const double b = 0.931 + 2.53 * smu;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    const double log_mu = std::log(mu);
    for (;;) {
      double u = uniform() - 0.5;
      double v = uniform();
      const double us = 0.5 - std::abs(u);
      const double kf = std::floor((2.0 * a / us + b) * u + mu + 0.43);
      if (us >= 0.07 && v <= vr) return static_cast<long>(kf);
      if (kf < 0 || (us < 0.013 && v > us)) continue;
      const double k = kf;
      if (std::log(v * inv_alpha / (a / (us * us) + b)) <=
          k * log_mu - mu - std::lgamma(k + 1.0)) {
        return static_cast<long>(kf);
      }
    }
  }

  std::mt19937_64 gen_;
};

}  // namespace sglmm

#pragma once

#include "sglmm/basis.hpp"
#include "sglmm/bootstrap.hpp"
#include "sglmm/core.hpp"
#include "sglmm/covariance.hpp"
#include "sglmm/eigs.hpp"
#include "sglmm/em_common.hpp"
#include "sglmm/em_laplace.hpp"
#include "sglmm/em_mcmc.hpp"
#include "sglmm/glm.hpp"
#include "sglmm/io.hpp"
#include "sglmm/lattice.hpp"
#include "sglmm/mcmc.hpp"
#include "sglmm/predict.hpp"
#include "sglmm/rng.hpp"
#include "sglmm/simulate.hpp"
#include "sglmm/util.hpp"

#pragma once

// Umbrella header for the ursm library: hierarchical joint modeling of
// single-cell and bulk RNA-seq counts with dropout correction, imputation,
// and bulk deconvolution.

#include "ursm/baselines.hpp"
#include "ursm/benchmark.hpp"
#include "ursm/common.hpp"
#include "ursm/gem.hpp"
#include "ursm/gibbs.hpp"
#include "ursm/io.hpp"
#include "ursm/mstep.hpp"
#include "ursm/posterior.hpp"
#include "ursm/rng.hpp"
#include "ursm/samplers.hpp"
#include "ursm/simulate.hpp"
#include "ursm/types.hpp"

#pragma once

// Sparse-plus-low-rank dynamic network identification: everything in one
// include.  Individual headers are self-contained if you need less.

#include "slnet/estimator.hpp"
#include "slnet/hyperloop.hpp"
#include "slnet/io.hpp"
#include "slnet/kernel.hpp"
#include "slnet/likelihood.hpp"
#include "slnet/linalg.hpp"
#include "slnet/metrics.hpp"
#include "slnet/model_sim.hpp"
#include "slnet/noise_arx.hpp"
#include "slnet/pipeline.hpp"
#include "slnet/regression.hpp"
#include "slnet/util.hpp"

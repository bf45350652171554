#pragma once

// Umbrella header.

#include "sparsevd/adam.hpp"
#include "sparsevd/checkpoint.hpp"
#include "sparsevd/config.hpp"
#include "sparsevd/data_io.hpp"
#include "sparsevd/errors.hpp"
#include "sparsevd/layers.hpp"
#include "sparsevd/linear_ard.hpp"
#include "sparsevd/linreg_experiment.hpp"
#include "sparsevd/loss.hpp"
#include "sparsevd/model.hpp"
#include "sparsevd/objective.hpp"
#include "sparsevd/rng.hpp"
#include "sparsevd/tensor.hpp"
#include "sparsevd/train.hpp"
#include "sparsevd/variance.hpp"
#include "sparsevd/vd_core.hpp"

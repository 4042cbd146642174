#pragma once

// Umbrella header for the variational collaborative model library.

#include "vcm/common.hpp"
#include "vcm/rng.hpp"
#include "vcm/linalg.hpp"
#include "vcm/data.hpp"
#include "vcm/pipeline.hpp"
#include "vcm/model.hpp"
#include "vcm/objective.hpp"
#include "vcm/gradients.hpp"
#include "vcm/evaluator.hpp"
#include "vcm/trainer.hpp"
#include "vcm/manifest.hpp"

#pragma once

// Umbrella header.

#include "opera/checkpoint.hpp"
#include "opera/cli.hpp"
#include "opera/config.hpp"
#include "opera/data.hpp"
#include "opera/errors.hpp"
#include "opera/evaluation.hpp"
#include "opera/finite_diff.hpp"
#include "opera/gradcheck.hpp"
#include "opera/labels.hpp"
#include "opera/matrix.hpp"
#include "opera/model.hpp"
#include "opera/objectives.hpp"
#include "opera/rng.hpp"
#include "opera/theory.hpp"
#include "opera/training.hpp"
#include "opera/weights.hpp"

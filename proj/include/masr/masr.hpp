#pragma once

// Umbrella header.

#include "masr/analysis.hpp"
#include "masr/config.hpp"
#include "masr/dataset.hpp"
#include "masr/error.hpp"
#include "masr/eval.hpp"
#include "masr/io.hpp"
#include "masr/metric.hpp"
#include "masr/model.hpp"
#include "masr/pipeline.hpp"
#include "masr/rng.hpp"
#include "masr/tensor.hpp"
#include "masr/training.hpp"

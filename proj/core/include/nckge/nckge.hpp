#pragma once

#include "nckge/checkpoint.hpp"
#include "nckge/config.hpp"
#include "nckge/encoder.hpp"
#include "nckge/evaluator.hpp"
#include "nckge/kg.hpp"
#include "nckge/loss.hpp"
#include "nckge/model.hpp"
#include "nckge/ops.hpp"
#include "nckge/optim.hpp"
#include "nckge/rng.hpp"
#include "nckge/scorer.hpp"
#include "nckge/tensor.hpp"
#include "nckge/trainer.hpp"

// Umbrella header.
#pragma once

#include "lsd/autodiff.hpp"
#include "lsd/checkpoint.hpp"
#include "lsd/decoder.hpp"
#include "lsd/encoder.hpp"
#include "lsd/evaluate.hpp"
#include "lsd/geometry.hpp"
#include "lsd/grammar.hpp"
#include "lsd/hierarchy.hpp"
#include "lsd/hungarian.hpp"
#include "lsd/json_io.hpp"
#include "lsd/losses.hpp"
#include "lsd/metrics.hpp"
#include "lsd/model.hpp"
#include "lsd/nn.hpp"
#include "lsd/sampling.hpp"
#include "lsd/service.hpp"
#include "lsd/train.hpp"

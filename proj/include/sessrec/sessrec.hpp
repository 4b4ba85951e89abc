// SPDX-License-Identifier: Apache-2.0
//
// Umbrella header.
#pragma once

#include "sessrec/baselines.hpp"
#include "sessrec/batching.hpp"
#include "sessrec/checkpoint.hpp"
#include "sessrec/corpus.hpp"
#include "sessrec/evaluate.hpp"
#include "sessrec/gru.hpp"
#include "sessrec/hier_model.hpp"
#include "sessrec/losses.hpp"
#include "sessrec/pipeline.hpp"
#include "sessrec/scorers.hpp"
#include "sessrec/session_model.hpp"
#include "sessrec/synthetic.hpp"
#include "sessrec/tensor.hpp"
#include "sessrec/training.hpp"

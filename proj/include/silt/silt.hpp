#pragma once

#include "silt/checkpoint.hpp"
#include "silt/corpus.hpp"
#include "silt/embed_store.hpp"
#include "silt/error.hpp"
#include "silt/eval_report.hpp"
#include "silt/gradcheck.hpp"
#include "silt/head.hpp"
#include "silt/ops.hpp"
#include "silt/rng.hpp"
#include "silt/synth.hpp"
#include "silt/tensor.hpp"
#include "silt/trainer.hpp"

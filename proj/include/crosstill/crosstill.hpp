#pragma once

#include "crosstill/error.hpp"
#include "crosstill/rng.hpp"
#include "crosstill/tensor.hpp"
#include "crosstill/ops.hpp"
#include "crosstill/optim.hpp"
#include "crosstill/gradcheck.hpp"
#include "crosstill/losses.hpp"
#include "crosstill/corpus.hpp"
#include "crosstill/encoder.hpp"
#include "crosstill/checkpoint.hpp"
#include "crosstill/param_accountant.hpp"
#include "crosstill/eval.hpp"
#include "crosstill/pipeline.hpp"

#pragma once

#include "binsed/bench.hpp"
#include "binsed/errors.hpp"
#include "binsed/executor.hpp"
#include "binsed/frontend.hpp"
#include "binsed/kernels.hpp"
#include "binsed/model.hpp"
#include "binsed/model_io.hpp"
#include "binsed/network.hpp"
#include "binsed/popcount.hpp"
#include "binsed/qformat.hpp"
#include "binsed/quantizer.hpp"
#include "binsed/random.hpp"
#include "binsed/tensors.hpp"
#include "binsed/wav.hpp"

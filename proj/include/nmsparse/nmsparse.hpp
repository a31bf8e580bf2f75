#pragma once

#include "nmsparse/dwt_io.hpp"
#include "nmsparse/importance.hpp"
#include "nmsparse/json_io.hpp"
#include "nmsparse/log.hpp"
#include "nmsparse/patterns.hpp"
#include "nmsparse/pipeline.hpp"
#include "nmsparse/pruning.hpp"
#include "nmsparse/reconstruct.hpp"
#include "nmsparse/sparse_codec.hpp"
#include "nmsparse/tensor.hpp"

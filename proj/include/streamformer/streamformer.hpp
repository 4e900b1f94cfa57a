#pragma once

#include "streamformer/numerics.hpp"
#include "streamformer/attention.hpp"
#include "streamformer/conformer.hpp"
#include "streamformer/streaming.hpp"
#include "streamformer/cascade.hpp"
#include "streamformer/costmodel.hpp"
#include "streamformer/weights_io.hpp"
#include "streamformer/oracles.hpp"
#include "streamformer/bench.hpp"
#include "streamformer/config_file.hpp"
#include "streamformer/verify.hpp"

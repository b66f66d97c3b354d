#pragma once

// Umbrella header for the adagan library.

#include "adagan/adaconv.hpp"
#include "adagan/checkpoint.hpp"
#include "adagan/config.hpp"
#include "adagan/conv.hpp"
#include "adagan/data.hpp"
#include "adagan/eval.hpp"
#include "adagan/gan.hpp"
#include "adagan/models.hpp"
#include "adagan/nn.hpp"
#include "adagan/ops.hpp"
#include "adagan/parallel.hpp"
#include "adagan/rng.hpp"
#include "adagan/spectral_norm.hpp"
#include "adagan/tape.hpp"
#include "adagan/tensor.hpp"

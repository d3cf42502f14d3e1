#pragma once

// Small hand-built layers with known results.

#include "mscq/activation.hpp"
#include "mscq/quantizer.hpp"

namespace mscq {

/// One output row of 8 weights in two micro-blocks of 4 (bb=2, B_M=8).
/// Micro-block 0 holds inlier code 1 at k=2; micro-block 1 holds the outlier
/// 1.5 split into Upper 01 at k=6 and Lower 00 at k=7. All scales are 2^0.
QuantizedLayer walkthrough_layer();

/// Activations for the walkthrough: 8 at k=2, 32 at k=6, zero elsewhere, 8-bit, exponent 0.
ActQuant walkthrough_acts();

}  // namespace mscq

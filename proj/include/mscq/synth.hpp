#pragma once

// Seeded synthetic layers and activations.

#include <Eigen/Dense>
#include <cstdint>

namespace mscq {

Eigen::MatrixXd synth_gaussian(int rows, int cols, std::uint64_t seed, double sd = 1.0);

/// Uniform [-1, 1] weights with exactly round(pct% of all micro-blocks) one-outlier
/// micro-blocks; each planted outlier has magnitude in [8, 12).
Eigen::MatrixXd synth_planted_mubs(int rows, int cols, int mub, double pct, std::uint64_t seed);

}  // namespace mscq

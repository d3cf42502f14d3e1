#include "mscq/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mscq/error.hpp"

namespace mscq {

Eigen::MatrixXd synth_gaussian(int rows, int cols, std::uint64_t seed, double sd) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, sd);
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = nd(rng);
    }
    return m;
}

Eigen::MatrixXd synth_planted_mubs(int rows, int cols, int mub, double pct, std::uint64_t seed) {
    if (mub <= 0 || cols % mub != 0) throw ShapeError("cols must be a multiple of the micro-block size");
    if (pct < 0.0 || pct > 100.0) throw ConfigError("outlier micro-block percentage must be in [0, 100]");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Eigen::MatrixXd m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = u(rng);
    }
    const int per_row = cols / mub;
    std::vector<int> ids(static_cast<std::size_t>(rows) * per_row);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const auto n = static_cast<std::size_t>(std::lround(pct / 100.0 * static_cast<double>(ids.size())));
    std::uniform_int_distribution<int> slot(0, mub - 1);
    for (std::size_t i = 0; i < n; ++i) {
        const int r = ids[i] / per_row;
        const int c = ids[i] % per_row * mub + slot(rng);
        m(r, c) = (u(rng) < 0 ? -1.0 : 1.0) * (10.0 + 2.0 * u(rng));
    }
    return m;
}

}  // namespace mscq

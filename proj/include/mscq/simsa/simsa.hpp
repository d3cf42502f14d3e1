#pragma once

// Cycle-approximate functional model of a weight-stationary PE array with a
// ReCoN for outlier reconstruction.
//
// A tile holds one output channel (MODE_4b) or two output channels sharing
// each iAct (MODE_2b) over a chunk of rows*cols positions along d_in; PE(r, c)
// holds position chunk*rows*cols + r*cols + c. Partial sums flow down the
// columns and the bottom lanes are summed per output. Rows holding outlier
// halves hand their lanes to a ReCoN unit before the next row.

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "mscq/activation.hpp"
#include "mscq/quantizer.hpp"
#include "mscq/simsa/arbiter.hpp"
#include "mscq/simsa/pe.hpp"
#include "mscq/simsa/recon.hpp"

namespace mscq::simsa {

struct SimConfig {
    int rows = 16;
    int cols = 16;
    Mode mode = Mode::Mode4b;
    int num_recon = 1;
    int frac_bits = 2;

    /// Throws ConfigError.
    void validate() const;
};

struct SimStats {
    long total_cycles = 0;
    long recon_accesses = 0;
    long recon_conflicts = 0;
    double conflict_pct = 0.0;
    long pe_mac_count = 0;
    double utilization = 0.0;
    long saturations = 0;
    long tiles = 0;
    long recon_passes = 0;
    int switches_per_unit = 0;
};

struct RowInfo {
    bool outlier = false;
    std::array<RoutePlan, 2> plans;  ///< one per resident channel
    int passes = 0;
};

struct Tile {
    std::array<int, 2> channels{-1, -1};
    int chunk = 0;
    std::vector<PECell> cells;  ///< rows * cols, row-major
    std::vector<RowInfo> rows;

    int slots() const noexcept { return channels[1] >= 0 ? 2 : 1; }
};

struct LayerMap {
    SimConfig cfg;
    int bb = 2;
    int chunks = 0;
    std::vector<Tile> tiles;
};

/// Throws ConfigError for bb=4 in MODE_2b, ShapeError when cols is not a multiple of B_mu.
LayerMap map_layer(const QuantizedLayer& q, const SimConfig& cfg);

struct TraceEvent {
    long cycle = 0;
    int tile = 0;
    int row = 0;
    int token = 0;
    std::string event;
};

struct SimResult {
    Eigen::Matrix<std::int64_t, Eigen::Dynamic, Eigen::Dynamic> acc;  ///< d_out x tokens, units of 2^e0
    int e0 = 0;
    int frac_bits = 0;
    SimStats stats;
    std::vector<TraceEvent> trace;

    Eigen::MatrixXd values() const;
};

/// Cycle at which a granted row's reconstructed lanes leave the ReCoN.
long delivery_cycle(long grant, int passes, int stages) noexcept;

/// Exact accumulator anchor: min over weight exponents plus min activation exponent minus frac bits.
int accumulator_anchor(const QuantizedLayer& q, const ActQuant& a, int frac_bits);

SimResult simulate_gemm(const QuantizedLayer& q, const ActQuant& a, const SimConfig& cfg, bool trace = false);

/// Output activations: per group of 128 outputs and token, oAct_sf = O_sf_ref + iAct_sf
/// with O_sf_ref the largest outlier exponent feeding the group (largest I_sf without
/// outliers) and iAct_sf the largest activation exponent of the token. The raw sums
/// are right-shifted onto 2^oAct_sf with round-half-even, then requantized to
/// MX-INT out_bits with a non-negative extra exponent.
struct PostProcessed {
    ActQuant out;
    Eigen::MatrixXi oact_sf;  ///< n_groups x tokens
};
PostProcessed post_process(const SimResult& r, const QuantizedLayer& q, const ActQuant& a, int out_bits);

/// x * 2^-s rounded half to even, for s >= 0; plain left shift for s < 0.
std::int64_t shift_round_even(std::int64_t x, int s);

}  // namespace mscq::simsa

#pragma once

// Time-multiplexed access to the ReCoN units. Each PE row is statically bound
// to one unit; a unit grants one request per cycle and stays busy for the
// request's pass count. Oldest request wins, ties go round-robin by row index.

#include <cstdint>
#include <vector>

namespace mscq::simsa {

struct ReconRequest {
    long id = 0;
    int row = 0;
    long cycle = 0;     ///< cycle the row's payloads are ready
    int occupancy = 1;  ///< routing passes needed
};

struct ReconGrant {
    long id = 0;
    int row = 0;
    int unit = 0;
    long requested = 0;
    long granted = 0;
};

class ReconArbiter {
public:
    ReconArbiter(int rows, int units);

    int unit_of(int row) const noexcept { return static_cast<int>(static_cast<long>(row) * units_ / rows_); }
    void submit(const ReconRequest& r);
    /// Grants issued at `cycle`. Call once per cycle in increasing order.
    std::vector<ReconGrant> step(long cycle);
    bool idle() const noexcept;

private:
    struct Unit {
        long busy_until = 0;
        int last_row = -1;
        std::vector<ReconRequest> pending;
    };
    int rows_;
    int units_;
    std::vector<Unit> unit_;
};

}  // namespace mscq::simsa

#include "mscq/simsa/arbiter.hpp"

#include <stdexcept>

namespace mscq::simsa {

ReconArbiter::ReconArbiter(int rows, int units) : rows_(rows), units_(units), unit_(static_cast<std::size_t>(units)) {
    if (rows < 1 || units < 1 || units > rows) throw std::logic_error("ReCoN unit count must lie in [1, rows]");
}

void ReconArbiter::submit(const ReconRequest& r) { unit_[unit_of(r.row)].pending.push_back(r); }

std::vector<ReconGrant> ReconArbiter::step(long cycle) {
    std::vector<ReconGrant> out;
    for (int u = 0; u < units_; ++u) {
        auto& unit = unit_[u];
        if (unit.busy_until > cycle || unit.pending.empty()) continue;
        int best = -1;
        for (int i = 0; i < static_cast<int>(unit.pending.size()); ++i) {
            const auto& r = unit.pending[i];
            if (r.cycle > cycle) continue;
            if (best < 0) {
                best = i;
                continue;
            }
            const auto& b = unit.pending[best];
            const int dr = (r.row - unit.last_row - 1 + rows_) % rows_;
            const int db = (b.row - unit.last_row - 1 + rows_) % rows_;
            if (r.cycle < b.cycle || (r.cycle == b.cycle && dr < db)) best = i;
        }
        if (best < 0) continue;
        const ReconRequest r = unit.pending[best];
        unit.pending.erase(unit.pending.begin() + best);
        unit.busy_until = cycle + r.occupancy;
        unit.last_row = r.row;
        out.push_back({r.id, r.row, u, r.cycle, cycle});
    }
    return out;
}

bool ReconArbiter::idle() const noexcept {
    for (const auto& u : unit_) {
        if (!u.pending.empty()) return false;
    }
    return true;
}

}  // namespace mscq::simsa

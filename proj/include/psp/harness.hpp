#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psp/engine.hpp"

namespace psp {

/// Portable 64-bit splitmix generator; the documented PRNG for every seeded
/// experiment, so runs are bit-identical across platforms and processes.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 bits of randomness.
  double uniform() { return (next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  int uniform_int(int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(next() % static_cast<std::uint64_t>(hi - lo + 1));
  }

 private:
  std::uint64_t state_;
};

struct ExperimentSpec {
  int buyers = 8;
  int sellers = 2;
  std::vector<double> capacities{60.0, 40.0};
  double connectivity_percent = 50.0;
  std::uint64_t base_seed = 20405008;
  std::array<double, 2> q_bar_range{10.0, 60.0};
  std::array<double, 2> kappa_range{1.0, 3.5};
  std::array<double, 2> budget_range{50.0, 150.0};
  double epsilon = 2.5;
  double initial_reserve = 0.0;
};

struct SellerStats {
  double expected_revenue = 0.0;  // allocation-weighted mean price
  double revenue_variance = 0.0;
  double total_awarded = 0.0;
};

/// Seeded random market: each buyer has a home seller (buyer index mod J)
/// and joins each other seller with probability connectivity/100.
MarketState generate_market(const ExperimentSpec& spec, std::uint64_t seed);

/// Allocation-weighted revenue statistics; absent when nothing was awarded.
std::optional<SellerStats> seller_stats(const MarketState& market, AgentId j);

/// Fraction of buyers adjacent to more than one seller.
double shared_buyer_fraction(const MarketState& market);

// ---------------------------------------------------------------------------
// Price-ladder unit experiment

struct LadderReport {
  RunResult run;
  std::vector<LadderTuple> tuples;
  std::array<double, 3> margins{0.0, 0.0, 0.0};
  int violations = 0;
  int unique_seller_pairs = 0;
};

/// The fixed two-seller / four-buyer market: Q0=15, Q1=8 and bids
/// (0,1)=(8,40), (0,0)=(8,40), (1,0)=(2,4), (2,0)=(6,1).
MarketState ladder_market();

/// Runs the ladder market with static bids and evaluates every tuple.
LadderReport ladder_experiment();

// ---------------------------------------------------------------------------
// Two-round market-shift scenario

struct ScenarioStep {
  int round = 0;
  int tau = 0;
  AgentId seller = -1;
  AgentId buyer = -1;
  double quantity = 0.0;
  double payment = 0.0;
  double reserve_after = 0.0;
};

struct ScenarioReport {
  std::vector<ScenarioStep> steps;
  std::vector<ShiftEvent> shifts;
  double coupled_rebid_quantity = 0.0;  // B4's round-2 quantity at L2
  double expected_rebid_quantity = 0.0; // from the coupled-update rule
};

/// Scripted two-seller (L1=1, L2=2) / four-buyer (B3..B6) replay: round 1
/// serves both sellers step by step; round 2 injects B4's overtake on L1
/// (price raised by delta above B3) and the coupled rebid on L2.
ScenarioReport appendix_scenario(double epsilon = 0.1, double delta = 0.1);

// ---------------------------------------------------------------------------
// Connectivity sweep

struct SweepRow {
  double level = 0.0;
  std::uint64_t seed = 0;
  AgentId seller = -1;
  double clearing_price = 0.0;
  double expected_revenue = 0.0;
  double revenue_variance = 0.0;
  double total_awarded = 0.0;
  int winners = 0;
  int zero_allocation = 0;
  int opt_out = 0;
  double shared_fraction = 0.0;
  bool converged = false;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  // One (level, mean |p*_0 - p*_1|) point per level, for the trend series.
  std::vector<std::pair<double, double>> gap_series;
  double spearman_level_vs_gap = 0.0;
};

SweepReport connectivity_sweep(const ExperimentSpec& spec,
                               const std::vector<double>& levels,
                               int seeds_per_level,
                               const EngineConfig& engine_config);

/// Spearman rank correlation with tie-averaged ranks.
double spearman(const std::vector<double>& xs, const std::vector<double>& ys);

// ---------------------------------------------------------------------------
// Test oracles and exports

/// Independent allocation oracle for books of at most 5 bids: explicit tier
/// enumeration in long double, proportional split at the marginal tier.
AllocationResult brute_force_allocation_oracle(const std::vector<Bid>& bids,
                                               double capacity,
                                               double reserve = 0.0);

struct SurfacePoint {
  double z0 = 0.0;
  double z1 = 0.0;  // unused in single-seller mode
  double price = 0.0;
  double utility = 0.0;
};

/// Single buyer-seller surface u(z, w) = theta(z) - z w over a grid.
std::vector<SurfacePoint> utility_surface_export(const BuyerProfile& profile,
                                                 int resolution,
                                                 double w_max);

/// Shared two-seller surface u(z0, z1) = theta(zt) - theta'(zt) zt.
std::vector<SurfacePoint> shared_surface_export(const BuyerProfile& profile,
                                                int resolution);

}  // namespace psp

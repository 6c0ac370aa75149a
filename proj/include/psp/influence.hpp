#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "psp/market_state.hpp"

namespace psp {

enum class Side { Buyer, Seller };

/// The active bid index set: (buyer, seller) pairs with positive quantity.
struct ActiveIndex {
  std::set<std::pair<AgentId, AgentId>> pairs;

  bool contains(AgentId buyer, AgentId seller) const {
    return pairs.count({buyer, seller}) > 0;
  }
};

ActiveIndex active_index(const MarketState& market);

/// L_i(t): sellers receiving a positive bid from buyer i.
std::set<AgentId> sellers_of_buyer(const ActiveIndex& index, AgentId i);

/// B^j(t): buyers with a positive bid at seller j.
std::set<AgentId> buyers_of_seller(const ActiveIndex& index, AgentId j);

struct InfluenceShell {
  Side side = Side::Seller;
  AgentId center = -1;
  int depth = 0;
  std::set<AgentId> members;
};

/// One buyer-seller alternation from x; an isolated vertex influences itself.
InfluenceShell lambda_primary(const ActiveIndex& index, Side side, AgentId x);

/// n alternations; n = 0 is {x}. Equals the breadth-first ball of same-side
/// vertices within bipartite distance 2n.
InfluenceShell lambda_n(const ActiveIndex& index, Side side, AgentId x, int n);

/// Iterates lambda_n to its fixed point: the same-side vertex set of x's
/// connected component.
InfluenceShell component_closure(const ActiveIndex& index, Side side,
                                 AgentId x);

/// One (l, k, j, i) quadruple: sellers l and j bridged by buyer i, with k a
/// mid-tier buyer at l that does not reach j. Checks
/// p*_l <= p_k < p*_j <= p_i.
struct LadderTuple {
  AgentId seller_l = -1;
  AgentId buyer_k = -1;
  AgentId seller_j = -1;
  AgentId buyer_i = -1;
  double p_star_l = 0.0;
  double p_k = 0.0;
  double p_star_j = 0.0;
  double p_i = 0.0;
  bool violated = false;
  // (p_k - p*_l, p*_j - p_k, p_i - p*_j)
  std::array<double, 3> margins{0.0, 0.0, 0.0};
};

/// Enumerates ladder tuples over all bridged seller pairs of a cleared
/// market. Violations are reported as data, never as errors.
std::vector<LadderTuple> ladder_tuples(const MarketState& market);

/// Componentwise minima of tuple margins; zeros when no tuples exist.
std::array<double, 3> min_margins(const std::vector<LadderTuple>& tuples);

enum class ShiftKind { DemandShortfall, BidOvertake };

struct ShiftEvent {
  ShiftKind kind = ShiftKind::DemandShortfall;
  AgentId seller = -1;
  AgentId buyer = -1;
  double round = 0.0;
  std::string detail;  // old/new price or quantity plus recomputed winners
};

/// Compares two consecutive snapshots of the same agent universe and emits
/// DemandShortfall / BidOvertake events per seller.
std::vector<ShiftEvent> detect_market_shift(const MarketState& before,
                                            const MarketState& after);

/// Finite sampling of unilateral deviations for the saturation predicate.
struct DeviationGrid {
  std::vector<double> price_factors{-0.10, -0.05, -0.02, -0.01,
                                    0.01,  0.02,  0.05,  0.10};
  std::vector<double> quantity_factors{-0.10, -0.05, -0.02, -0.01,
                                       0.01,  0.02,  0.05,  0.10};
  bool include_withdrawal = true;
  bool include_overtake = true;
};

struct DeviationWitness {
  AgentId buyer = -1;
  std::string description;
  double utility_gain = 0.0;
};

struct SaturationResult {
  bool saturated = true;
  std::optional<DeviationWitness> witness;
};

/// Tests every buyer bidding inside a seller-side depth-1 shell against the
/// deviation grid, holding all other agents fixed. A deviation counts as
/// improving when it gains more than eps.
SaturationResult is_saturated(const MarketState& market,
                              const InfluenceShell& shell,
                              const DeviationGrid& grid, double eps);

struct MonotonicityResult {
  bool ok = true;
  int violation_index = -1;  // index into the trace where it first fails
  std::string what;
};

/// Verifies nondecreasing reserves and no ladder reversal along a trace,
/// optionally restricted to the sellers of a shell.
MonotonicityResult check_local_monotonicity(
    const std::vector<MarketState>& trace,
    const std::optional<InfluenceShell>& shell = std::nullopt);

}  // namespace psp

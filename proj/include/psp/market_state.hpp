#pragma once

#include <map>
#include <set>
#include <utility>

#include "psp/market_core.hpp"
#include "psp/strategy.hpp"

namespace psp {

/// Whole-market snapshot: biadjacency, per-seller books, the latest cleared
/// allocations and per-edge payments, and the simulation clock. Immutable
/// once a copy is taken; the engine mutates only its own working state.
struct MarketState {
  std::map<AgentId, BuyerProfile> buyers;
  std::map<AgentId, SellerBook> sellers;
  std::map<AgentId, std::set<AgentId>> adjacency;  // buyer -> feasible sellers
  std::map<AgentId, AllocationResult> allocations;  // seller -> latest clear
  std::map<std::pair<AgentId, AgentId>, double> costs;  // (buyer, seller)
  double clock = 0.0;

  std::set<AgentId> sellers_adjacent_to(AgentId buyer) const;
  double buyer_total_award(AgentId buyer) const;
  double buyer_total_cost(AgentId buyer) const;
  /// theta(total award) minus total payments for one buyer.
  double buyer_utility(AgentId buyer) const;
};

}  // namespace psp

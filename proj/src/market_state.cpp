#include "psp/market_state.hpp"

namespace psp {

std::set<AgentId> MarketState::sellers_adjacent_to(AgentId buyer) const {
  auto it = adjacency.find(buyer);
  return it == adjacency.end() ? std::set<AgentId>{} : it->second;
}

double MarketState::buyer_total_award(AgentId buyer) const {
  double sum = 0.0;
  for (const auto& [_, result] : allocations) sum += result.award_of(buyer);
  return sum;
}

double MarketState::buyer_total_cost(AgentId buyer) const {
  double sum = 0.0;
  for (const auto& [edge, cost] : costs) {
    if (edge.first == buyer) sum += cost;
  }
  return sum;
}

double MarketState::buyer_utility(AgentId buyer) const {
  auto it = buyers.find(buyer);
  if (it == buyers.end()) return 0.0;
  double z = std::min(buyer_total_award(buyer), it->second.q_bar);
  return utility(valuation(it->second, z), buyer_total_cost(buyer));
}

}  // namespace psp

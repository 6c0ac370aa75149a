#include "psp/engine.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <set>
#include <sstream>
#include <stdexcept>
#include <tuple>

namespace psp {

namespace {

struct EventOrder {
  bool operator()(const Event& a, const Event& b) const {
    if (a.time != b.time) return a.time > b.time;  // min-heap
    return a.seq > b.seq;
  }
};

void check_finite(const MarketState& market) {
  for (const auto& [j, book] : market.sellers) {
    if (!std::isfinite(book.reserve)) {
      throw std::runtime_error("non-finite reserve at seller " +
                               std::to_string(j));
    }
    for (const auto& b : book.bids) {
      if (!std::isfinite(b.quantity) || !std::isfinite(b.unit_price)) {
        throw std::runtime_error("non-finite bid from buyer " +
                                 std::to_string(b.buyer_id) + " at seller " +
                                 std::to_string(j));
      }
    }
  }
}

}  // namespace

BuyerComputeOutcome process_buyer_compute(MarketState& market, AgentId buyer,
                                          const EngineConfig& config) {
  BuyerComputeOutcome out;
  const BuyerProfile& profile = market.buyers.at(buyer);
  auto adjacent = market.sellers_adjacent_to(buyer);
  if (adjacent.empty()) return out;

  MarketView view;
  view.overtake_epsilon = config.epsilon;
  for (AgentId j : adjacent) {
    view.seller_staircases[j] =
        opponent_staircase_single(market.sellers.at(j), buyer);
  }

  BestResponse br = joint_best_response(profile, view);
  double u_old = market.buyer_utility(buyer);
  double u_new = utility(br.predicted_value, br.predicted_cost);
  if (!accept_update(u_new, u_old, profile.epsilon_improve)) return out;

  for (AgentId j : adjacent) {
    SellerBook& book = market.sellers.at(j);
    const Bid* current = book.find_bid(buyer);
    auto it = br.bids.entries.find(j);
    Bid proposed = it != br.bids.entries.end() ? it->second
                                               : Bid{buyer, 0.0, 0.0};
    double dq = proposed.quantity - (current ? current->quantity : 0.0);
    double dp = proposed.unit_price - (current ? current->unit_price : 0.0);
    if (std::abs(dq) > kQuantityEps || std::abs(dp) > kPriceEps) {
      if (proposed.active()) {
        book.upsert_bid(proposed);
      } else {
        book.remove_bid(buyer);
      }
      out.sellers_to_post.push_back(j);
      out.effective_change = true;
    }
  }
  return out;
}

PostBidOutcome process_post_bid(MarketState& market, AgentId seller,
                                const EngineConfig& config) {
  PostBidOutcome out;
  SellerBook& book = market.sellers.at(seller);
  AllocationResult result = allocate(book);

  const AllocationResult& previous = market.allocations[seller];
  for (const auto& [i, profile] : market.buyers) {
    double delta = result.award_of(i) - previous.award_of(i);
    if (std::abs(delta) > kQuantityEps) out.effective_change = true;
  }
  // An effective clear wakes every buyer that could bid here, not only the
  // ones whose award moved: a price shift alone can open an overtake for a
  // buyer that was priced out earlier and would otherwise never recompute.
  if (out.effective_change) {
    for (const auto& [i, adjacent] : market.adjacency) {
      if (adjacent.count(seller)) out.buyers_to_compute.push_back(i);
    }
  }

  // Exclusion payments against the opposing staircase strictly below each
  // winner's own price.
  for (AgentId i : result.winners) {
    const Bid* own = book.find_bid(i);
    auto st = opponent_staircase_below(book, i, own->unit_price);
    double awarded = std::min(result.award_of(i), st.total());
    market.costs[{i, seller}] = exclusion_cost(st, awarded);
  }
  for (const auto& b : book.bids) {
    if (!result.winners.count(b.buyer_id)) {
      market.costs.erase({b.buyer_id, seller});
    }
  }

  book.reserve = update_reserve(book, result, config.reserve_rule);
  market.allocations[seller] = result;

  // One tau step per served buyer, highest price first.
  std::vector<std::pair<double, AgentId>> order;
  for (AgentId i : result.winners) {
    order.push_back({book.find_bid(i)->unit_price, i});
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  int tau = 0;
  for (const auto& [price, i] : order) {
    double awarded = result.award_of(i);
    double payment = awarded > kQuantityEps
                         ? market.costs.at({i, seller}) / awarded
                         : 0.0;
    out.tau_steps.push_back(
        {++tau, seller, i, awarded, payment, book.reserve});
  }
  return out;
}

bool has_converged(const std::deque<bool>& recent_flags,
                   const EngineConfig& config, bool queue_empty) {
  if (queue_empty) return true;
  if (static_cast<int>(recent_flags.size()) < config.convergence_window) {
    return false;
  }
  return std::none_of(recent_flags.begin(), recent_flags.end(),
                      [](bool changed) { return changed; });
}

RunResult run(MarketState market, const EngineConfig& config,
              const std::vector<Event>& injected) {
  if (config.max_steps <= 0 || config.epsilon <= 0.0) {
    throw std::invalid_argument("run: max_steps and epsilon must be positive");
  }
  RunResult res;
  std::priority_queue<Event, std::vector<Event>, EventOrder> queue;
  std::uint64_t seq = 0;

  // Coalesce duplicate wakeups: a seller posted by five buyers at the same
  // tick still clears once. Without this the no-op repeats flood the
  // convergence window and can end the run with effective events pending.
  std::set<std::tuple<double, int, AgentId>> pending;
  int posts_pending = 0;
  auto push = [&](double time, EventKind kind, AgentId agent) {
    if (!pending.insert({time, static_cast<int>(kind), agent}).second) return;
    if (kind == EventKind::PostBid) ++posts_pending;
    queue.push(Event{time, seq++, kind, agent, {}, -1});
  };

  if (config.schedule_buyers) {
    for (const auto& [i, _] : market.buyers) push(0.0, EventKind::BuyerCompute, i);
  } else {
    for (const auto& [j, book] : market.sellers) {
      if (book.total_demand() > kQuantityEps) push(0.0, EventKind::PostBid, j);
    }
  }
  for (const Event& e : injected) {
    Event copy = e;
    copy.seq = seq++;
    queue.push(copy);
  }

  std::deque<bool> flags;
  auto note = [&](bool changed) {
    flags.push_back(changed);
    while (static_cast<int>(flags.size()) > config.convergence_window) {
      flags.pop_front();
    }
  };

  MarketState before_snapshot = market;  // previous cleared state, for shifts
  while (!queue.empty() && res.events_processed < config.max_steps) {
    // A quiet window only ends the run once every scheduled clear has
    // happened; otherwise a changed book could be left uncleared.
    if (posts_pending == 0 && has_converged(flags, config, false)) break;
    Event ev = queue.top();
    queue.pop();
    if (ev.kind != EventKind::InjectBid) {
      pending.erase({ev.time, static_cast<int>(ev.kind), ev.agent});
      if (ev.kind == EventKind::PostBid) --posts_pending;
    }
    market.clock = ev.time;
    ++res.events_processed;

    switch (ev.kind) {
      case EventKind::BuyerCompute: {
        ++res.compute_counts[ev.agent];
        auto outcome = process_buyer_compute(market, ev.agent, config);
        for (AgentId j : outcome.sellers_to_post) {
          push(ev.time + 1.0, EventKind::PostBid, j);
        }
        note(outcome.effective_change);
        break;
      }
      case EventKind::PostBid: {
        auto outcome = process_post_bid(market, ev.agent, config);
        if (config.schedule_buyers) {
          for (AgentId i : outcome.buyers_to_compute) {
            push(ev.time + 1.0, EventKind::BuyerCompute, i);
          }
        }
        for (auto& step : outcome.tau_steps) {
          res.trace.steps.push_back(step);
        }
        if (outcome.effective_change) {
          auto shifts = detect_market_shift(before_snapshot, market);
          res.shifts.insert(res.shifts.end(), shifts.begin(), shifts.end());
          before_snapshot = market;
        }
        if (config.record_snapshots) res.snapshots.push_back(market);
        note(outcome.effective_change);
        break;
      }
      case EventKind::InjectBid: {
        SellerBook& book = market.sellers.at(ev.bid_seller);
        if (ev.bid.active()) {
          book.upsert_bid(ev.bid);
        } else {
          book.remove_bid(ev.bid.buyer_id);
        }
        push(ev.time + 1.0, EventKind::PostBid, ev.bid_seller);
        note(true);
        break;
      }
    }
    check_finite(market);
  }

  res.converged = queue.empty() ||
                  (posts_pending == 0 && has_converged(flags, config, false));
  res.final_state = std::move(market);
  return res;
}

}  // namespace psp

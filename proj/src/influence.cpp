#include "psp/influence.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace psp {

ActiveIndex active_index(const MarketState& market) {
  ActiveIndex index;
  for (const auto& [j, book] : market.sellers) {
    for (const auto& b : book.bids) {
      if (b.active()) index.pairs.insert({b.buyer_id, j});
    }
  }
  return index;
}

std::set<AgentId> sellers_of_buyer(const ActiveIndex& index, AgentId i) {
  std::set<AgentId> out;
  for (const auto& [buyer, seller] : index.pairs) {
    if (buyer == i) out.insert(seller);
  }
  return out;
}

std::set<AgentId> buyers_of_seller(const ActiveIndex& index, AgentId j) {
  std::set<AgentId> out;
  for (const auto& [buyer, seller] : index.pairs) {
    if (seller == j) out.insert(buyer);
  }
  return out;
}

InfluenceShell lambda_primary(const ActiveIndex& index, Side side, AgentId x) {
  InfluenceShell shell{side, x, 1, {}};
  if (side == Side::Seller) {
    for (AgentId i : buyers_of_seller(index, x)) {
      auto sellers = sellers_of_buyer(index, i);
      shell.members.insert(sellers.begin(), sellers.end());
    }
  } else {
    for (AgentId j : sellers_of_buyer(index, x)) {
      auto buyers = buyers_of_seller(index, j);
      shell.members.insert(buyers.begin(), buyers.end());
    }
  }
  // Self-influence: a vertex with no active bids still influences itself.
  if (shell.members.empty()) shell.members.insert(x);
  return shell;
}

InfluenceShell lambda_n(const ActiveIndex& index, Side side, AgentId x, int n) {
  if (n < 0) throw std::invalid_argument("lambda_n: negative hop count");
  InfluenceShell shell{side, x, n, {x}};
  for (int hop = 0; hop < n; ++hop) {
    std::set<AgentId> next;
    for (AgentId y : shell.members) {
      auto one = lambda_primary(index, side, y);
      next.insert(one.members.begin(), one.members.end());
    }
    shell.members = std::move(next);
  }
  return shell;
}

InfluenceShell component_closure(const ActiveIndex& index, Side side,
                                 AgentId x) {
  InfluenceShell shell = lambda_n(index, side, x, 0);
  for (int n = 1;; ++n) {
    InfluenceShell next = lambda_n(index, side, x, n);
    if (next.members == shell.members) {
      next.depth = n;
      return next;
    }
    shell = std::move(next);
  }
}

namespace {

double seller_clearing(const MarketState& market, AgentId j) {
  auto it = market.allocations.find(j);
  if (it != market.allocations.end()) return it->second.clearing_price;
  return allocate(market.sellers.at(j)).clearing_price;
}

double posted_price(const MarketState& market, AgentId buyer, AgentId seller) {
  const Bid* b = market.sellers.at(seller).find_bid(buyer);
  return b ? b->unit_price : 0.0;
}

}  // namespace

std::vector<LadderTuple> ladder_tuples(const MarketState& market) {
  std::vector<LadderTuple> tuples;
  ActiveIndex index = active_index(market);
  for (const auto& [l, _book_l] : market.sellers) {
    auto buyers_l = buyers_of_seller(index, l);
    for (const auto& [j, _book_j] : market.sellers) {
      if (j == l) continue;
      auto buyers_j = buyers_of_seller(index, j);
      bool bridged = std::any_of(buyers_j.begin(), buyers_j.end(),
                                 [&](AgentId i) { return buyers_l.count(i); });
      if (!bridged) continue;
      for (AgentId i : buyers_j) {
        if (!buyers_l.count(i)) continue;
        for (AgentId k : buyers_l) {
          if (buyers_j.count(k)) continue;  // mid-tier buyers only
          LadderTuple t;
          t.seller_l = l;
          t.buyer_k = k;
          t.seller_j = j;
          t.buyer_i = i;
          t.p_star_l = seller_clearing(market, l);
          t.p_k = posted_price(market, k, l);
          t.p_star_j = seller_clearing(market, j);
          t.p_i = posted_price(market, i, j);
          t.margins = {t.p_k - t.p_star_l, t.p_star_j - t.p_k,
                       t.p_i - t.p_star_j};
          // Outer inequalities non-strict, central strict.
          t.violated = !(t.p_star_l <= t.p_k + kPriceEps &&
                         t.p_k < t.p_star_j - kPriceEps &&
                         t.p_star_j <= t.p_i + kPriceEps);
          tuples.push_back(t);
        }
      }
    }
  }
  return tuples;
}

std::array<double, 3> min_margins(const std::vector<LadderTuple>& tuples) {
  std::array<double, 3> out{0.0, 0.0, 0.0};
  for (std::size_t m = 0; m < tuples.size(); ++m) {
    for (int c = 0; c < 3; ++c) {
      out[c] = m == 0 ? tuples[m].margins[c]
                      : std::min(out[c], tuples[m].margins[c]);
    }
  }
  return out;
}

std::vector<ShiftEvent> detect_market_shift(const MarketState& before,
                                            const MarketState& after) {
  auto same_keys = [](const auto& a, const auto& b) {
    if (a.size() != b.size()) return false;
    auto it = b.begin();
    for (const auto& [k, _] : a) {
      if (it->first != k) return false;
      ++it;
    }
    return true;
  };
  if (!same_keys(before.sellers, after.sellers) ||
      !same_keys(before.buyers, after.buyers)) {
    throw std::invalid_argument("detect_market_shift: agent universes differ");
  }

  std::vector<ShiftEvent> events;
  for (const auto& [j, book_after] : after.sellers) {
    const SellerBook& book_before = before.sellers.at(j);
    AllocationResult alloc_before = allocate(book_before);
    AllocationResult alloc_after = allocate(book_after);

    std::ostringstream winners;
    for (AgentId w : alloc_after.winners) winners << " " << w;

    for (const auto& b_after : book_after.bids) {
      const Bid* b_before = book_before.find_bid(b_after.buyer_id);
      double q_before = b_before ? b_before->quantity : 0.0;
      double p_before = b_before ? b_before->unit_price : 0.0;

      // Demand shortfall: a quantity cut leaves supply slack at j.
      if (q_before - b_after.quantity > kQuantityEps &&
          alloc_after.total_awarded() < book_after.capacity - kQuantityEps &&
          alloc_before.total_awarded() >= book_before.capacity - kQuantityEps) {
        ShiftEvent e;
        e.kind = ShiftKind::DemandShortfall;
        e.seller = j;
        e.buyer = b_after.buyer_id;
        e.round = after.clock;
        std::ostringstream ss;
        ss << "quantity " << q_before << " -> " << b_after.quantity
           << "; winners:" << winners.str();
        e.detail = ss.str();
        events.push_back(e);
      }

      // Bid overtake: a raised price now strictly outranks a buyer that was
      // at or above it before and was winning.
      if (b_after.unit_price - p_before > kPriceEps && b_after.active()) {
        for (const auto& other : book_before.bids) {
          if (other.buyer_id == b_after.buyer_id || !other.active()) continue;
          const Bid* other_after = book_after.find_bid(other.buyer_id);
          if (!other_after) continue;
          bool was_at_or_above = other.unit_price >= p_before;
          bool now_below = other_after->unit_price <
                           b_after.unit_price - kPriceEps;
          bool was_winner = alloc_before.winners.count(other.buyer_id) > 0;
          if (was_at_or_above && now_below && was_winner) {
            ShiftEvent e;
            e.kind = ShiftKind::BidOvertake;
            e.seller = j;
            e.buyer = b_after.buyer_id;
            e.round = after.clock;
            std::ostringstream ss;
            ss << "price " << p_before << " -> " << b_after.unit_price
               << " overtakes buyer " << other.buyer_id << "; winners:"
               << winners.str();
            e.detail = ss.str();
            events.push_back(e);
            break;  // one event per raising buyer per seller
          }
        }
      }
    }
  }
  return events;
}

namespace {

// Re-clears every seller the buyer bids on and returns theta(award) minus
// the exclusion payments, holding all other agents fixed.
double evaluate_buyer(const MarketState& market, AgentId buyer) {
  const BuyerProfile& profile = market.buyers.at(buyer);
  double total_award = 0.0;
  double total_cost = 0.0;
  for (const auto& [j, book] : market.sellers) {
    const Bid* own = book.find_bid(buyer);
    if (!own || !own->active()) continue;
    AllocationResult result = allocate(book);
    double award = result.award_of(buyer);
    if (award <= kQuantityEps) continue;
    total_award += award;
    auto st = opponent_staircase_below(book, buyer, own->unit_price);
    total_cost += exclusion_cost(st, std::min(award, st.total()));
  }
  double z = std::min(total_award, profile.q_bar);
  return utility(valuation(profile, z), total_cost);
}

}  // namespace

SaturationResult is_saturated(const MarketState& market,
                              const InfluenceShell& shell,
                              const DeviationGrid& grid, double eps) {
  SaturationResult out;
  ActiveIndex index = active_index(market);

  std::set<AgentId> buyers;
  for (AgentId j : shell.members) {
    auto bs = buyers_of_seller(index, j);
    buyers.insert(bs.begin(), bs.end());
  }

  for (AgentId i : buyers) {
    double base = evaluate_buyer(market, i);

    auto try_deviation = [&](const MarketState& deviated,
                             const std::string& what) {
      double u = evaluate_buyer(deviated, i);
      if (u - base > eps &&
          (!out.witness || u - base > out.witness->utility_gain)) {
        out.saturated = false;
        out.witness = DeviationWitness{i, what, u - base};
      }
    };

    if (grid.include_withdrawal) {
      MarketState m = market;
      for (auto& [_, book] : m.sellers) book.remove_bid(i);
      try_deviation(m, "withdrawal");
    }
    for (AgentId j : sellers_of_buyer(index, i)) {
      const Bid* own = market.sellers.at(j).find_bid(i);
      if (!own) continue;
      for (double f : grid.price_factors) {
        MarketState m = market;
        Bid b = *own;
        b.unit_price = std::max(0.0, b.unit_price * (1.0 + f));
        m.sellers.at(j).upsert_bid(b);
        std::ostringstream ss;
        ss << "price *" << 1.0 + f << " at seller " << j;
        try_deviation(m, ss.str());
      }
      for (double f : grid.quantity_factors) {
        MarketState m = market;
        Bid b = *own;
        b.quantity = std::max(0.0, b.quantity * (1.0 + f));
        m.sellers.at(j).upsert_bid(b);
        std::ostringstream ss;
        ss << "quantity *" << 1.0 + f << " at seller " << j;
        try_deviation(m, ss.str());
      }
      if (grid.include_overtake) {
        MarketState m = market;
        Bid b = *own;
        b.unit_price = seller_clearing(market, j) + market.sellers.at(j).epsilon;
        m.sellers.at(j).upsert_bid(b);
        std::ostringstream ss;
        ss << "overtake at seller " << j << " to " << b.unit_price;
        try_deviation(m, ss.str());
      }
    }
  }
  return out;
}

MonotonicityResult check_local_monotonicity(
    const std::vector<MarketState>& trace,
    const std::optional<InfluenceShell>& shell) {
  MonotonicityResult out;
  auto in_shell = [&](AgentId j) {
    return !shell || shell->members.count(j) > 0;
  };

  using TupleKey = std::array<AgentId, 4>;
  std::map<TupleKey, bool> prev_ok;

  for (std::size_t t = 0; t < trace.size(); ++t) {
    if (t > 0) {
      for (const auto& [j, book] : trace[t].sellers) {
        if (!in_shell(j)) continue;
        double before = trace[t - 1].sellers.at(j).reserve;
        if (book.reserve < before - kPriceEps) {
          out.ok = false;
          out.violation_index = static_cast<int>(t);
          std::ostringstream ss;
          ss << "reserve decreased at seller " << j << ": " << before
             << " -> " << book.reserve;
          out.what = ss.str();
          return out;
        }
      }
    }
    std::map<TupleKey, bool> now_ok;
    for (const auto& tup : ladder_tuples(trace[t])) {
      if (!in_shell(tup.seller_l) || !in_shell(tup.seller_j)) continue;
      TupleKey key{tup.seller_l, tup.buyer_k, tup.seller_j, tup.buyer_i};
      now_ok[key] = !tup.violated;
      auto it = prev_ok.find(key);
      if (it != prev_ok.end() && it->second && tup.violated) {
        out.ok = false;
        out.violation_index = static_cast<int>(t);
        std::ostringstream ss;
        ss << "ladder reversal on tuple (" << key[0] << "," << key[1] << ","
           << key[2] << "," << key[3] << ")";
        out.what = ss.str();
        return out;
      }
    }
    prev_ok = std::move(now_ok);
  }
  return out;
}

}  // namespace psp

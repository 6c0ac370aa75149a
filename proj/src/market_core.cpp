#include "psp/market_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace psp {

const Bid* SellerBook::find_bid(AgentId buyer) const {
  for (const auto& b : bids) {
    if (b.buyer_id == buyer) return &b;
  }
  return nullptr;
}

void SellerBook::upsert_bid(const Bid& bid) {
  for (auto& b : bids) {
    if (b.buyer_id == bid.buyer_id) {
      b = bid;
      return;
    }
  }
  bids.push_back(bid);
}

void SellerBook::remove_bid(AgentId buyer) {
  std::erase_if(bids, [buyer](const Bid& b) { return b.buyer_id == buyer; });
}

double SellerBook::total_demand() const {
  double sum = 0.0;
  for (const auto& b : bids) {
    if (b.active()) sum += b.quantity;
  }
  return sum;
}

double AllocationResult::total_awarded() const {
  double sum = 0.0;
  for (const auto& [_, a] : awards) sum += a;
  return sum;
}

double AllocationResult::award_of(AgentId buyer) const {
  auto it = awards.find(buyer);
  return it == awards.end() ? 0.0 : it->second;
}

double PriceStaircase::width(std::size_t n) const {
  double prev = n == 0 ? 0.0 : steps[n - 1].cumulative;
  return steps[n].cumulative - prev;
}

double PriceStaircase::price_at(double z) const {
  for (const auto& s : steps) {
    if (z <= s.cumulative + kQuantityEps) return s.price;
  }
  return steps.empty() ? 0.0 : steps.back().price;
}

namespace {

// Active bids sorted by descending price; ties ordered by buyer id for
// reproducible reporting (the tie split itself is order-independent).
std::vector<Bid> sorted_active(const SellerBook& book) {
  std::vector<Bid> out;
  for (const auto& b : book.bids) {
    if (b.active()) out.push_back(b);
  }
  std::sort(out.begin(), out.end(), [](const Bid& a, const Bid& b) {
    if (a.unit_price != b.unit_price) return a.unit_price > b.unit_price;
    return a.buyer_id < b.buyer_id;
  });
  return out;
}

}  // namespace

double residual_at_price(const SellerBook& book, double y) {
  double filled = 0.0;
  for (const auto& b : sorted_active(book)) {
    if (b.unit_price > y) {
      filled += std::min(b.quantity, std::max(0.0, book.capacity - filled));
    }
  }
  return std::max(0.0, book.capacity - filled);
}

AllocationResult allocate(const SellerBook& book) {
  if (book.capacity <= 0.0) {
    throw std::invalid_argument("allocate: seller capacity must be positive");
  }
  AllocationResult result;
  auto bids = sorted_active(book);

  double filled = 0.0;
  std::size_t n = 0;
  while (n < bids.size()) {
    double tier_price = bids[n].unit_price;
    if (tier_price <= book.reserve) break;  // loses to the internal bid
    std::size_t end = n;
    double tier_demand = 0.0;
    while (end < bids.size() && bids[end].unit_price == tier_price) {
      tier_demand += bids[end].quantity;
      ++end;
    }
    double residual = std::max(0.0, book.capacity - filled);
    for (std::size_t k = n; k < end; ++k) {
      double share = tier_demand > 0.0
                         ? bids[k].quantity / tier_demand * residual
                         : 0.0;
      double award = std::min(bids[k].quantity, share);
      if (award > kQuantityEps) {
        result.awards[bids[k].buyer_id] = award;
        result.winners.insert(bids[k].buyer_id);
        filled += award;
      }
    }
    if (filled >= book.capacity - kQuantityEps) break;
    n = end;
  }

  auto [lo_win, hi_lose] = margins(book, result);
  result.lowest_winning = lo_win;
  result.highest_losing = hi_lose;
  result.clearing_price = clearing_price(book, result);
  return result;
}

double clearing_price(const SellerBook& book, const AllocationResult& result) {
  // Evaluated on the posted-price grid, restricted to winning bids: the
  // smallest winning price whose at-or-above cumulative awards exhaust
  // capacity. Losing prices below the marginal tier trivially satisfy the
  // cumulative condition and must not pull the clearing price down.
  std::optional<double> best;
  for (const auto& b : sorted_active(book)) {
    if (!result.winners.count(b.buyer_id)) continue;
    double at_or_above = 0.0;
    for (const auto& [buyer, award] : result.awards) {
      const Bid* posted = book.find_bid(buyer);
      if (posted && posted->unit_price >= b.unit_price) at_or_above += award;
    }
    if (at_or_above >= book.capacity - kQuantityEps) {
      if (!best || b.unit_price < *best) best = b.unit_price;
    }
  }
  return best ? *best : book.reserve;
}

std::pair<std::optional<double>, std::optional<double>> margins(
    const SellerBook& book, const AllocationResult& result) {
  std::optional<double> lowest_winning;
  std::optional<double> highest_losing;
  for (const auto& b : sorted_active(book)) {
    if (result.winners.count(b.buyer_id)) {
      if (!lowest_winning || b.unit_price < *lowest_winning) {
        lowest_winning = b.unit_price;
      }
    } else {
      if (!highest_losing || b.unit_price > *highest_losing) {
        highest_losing = b.unit_price;
      }
    }
  }
  return {lowest_winning, highest_losing};
}

double update_reserve(const SellerBook& book, const AllocationResult& result,
                      ReserveRule rule) {
  double candidate = book.reserve;
  switch (rule) {
    case ReserveRule::Reactive:
      if (result.highest_losing) {
        candidate = *result.highest_losing + book.epsilon;
      }
      break;
    case ReserveRule::Clearing:
      candidate = result.clearing_price;
      break;
    case ReserveRule::UnderlineMinusEps:
      if (result.lowest_winning) {
        candidate = *result.lowest_winning - book.epsilon;
      }
      break;
  }
  return std::max(book.reserve, candidate);
}

namespace {

void append_opposing_steps(const SellerBook& book, AgentId excluded_buyer,
                           std::optional<double> price_cap,
                           std::vector<PriceStaircase::Step>* raw) {
  SellerBook opp = book;
  opp.remove_bid(excluded_buyer);
  double taken = 0.0;
  for (const auto& b : sorted_active(opp)) {
    if (price_cap && b.unit_price >= *price_cap) continue;
    double q = std::min(b.quantity, std::max(0.0, book.capacity - taken));
    if (q <= kQuantityEps) continue;
    raw->push_back({b.unit_price, q});  // width, merged later
    taken += q;
  }
  double free = std::max(0.0, book.capacity - taken);
  if (free > kQuantityEps) {
    raw->push_back({std::max(book.reserve, 0.0), free});
  }
}

PriceStaircase finish_staircase(std::vector<PriceStaircase::Step> raw) {
  std::stable_sort(raw.begin(), raw.end(),
                   [](const auto& a, const auto& b) { return a.price > b.price; });
  PriceStaircase out;
  double cum = 0.0;
  for (const auto& s : raw) {
    cum += s.cumulative;  // width at this point
    if (!out.steps.empty() && out.steps.back().price == s.price) {
      out.steps.back().cumulative = cum;
    } else {
      out.steps.push_back({s.price, cum});
    }
  }
  return out;
}

}  // namespace

PriceStaircase opponent_staircase_single(const SellerBook& book,
                                         AgentId excluded_buyer) {
  std::vector<PriceStaircase::Step> raw;
  append_opposing_steps(book, excluded_buyer, std::nullopt, &raw);
  return finish_staircase(std::move(raw));
}

PriceStaircase opponent_staircase(const std::vector<SellerBook>& books,
                                  AgentId excluded_buyer) {
  std::vector<PriceStaircase::Step> raw;
  for (const auto& book : books) {
    append_opposing_steps(book, excluded_buyer, std::nullopt, &raw);
  }
  return finish_staircase(std::move(raw));
}

PriceStaircase opponent_staircase_below(const SellerBook& book,
                                        AgentId excluded_buyer,
                                        double price_cap) {
  // Payment staircase: what opposing buyers would additionally receive if
  // the excluded buyer left. Only unserved remainders count — a fully
  // served opponent loses nothing by the buyer's presence — and leftover
  // capacity is valued at the seller's internal bid. Bids at or below the
  // reserve never get served and so never enter the staircase.
  AllocationResult current = allocate(book);
  SellerBook opp = book;
  opp.remove_bid(excluded_buyer);
  std::vector<PriceStaircase::Step> raw;
  double taken = 0.0;
  for (const auto& b : sorted_active(opp)) {
    if (b.unit_price >= price_cap || b.unit_price <= book.reserve) continue;
    double unserved = b.quantity - current.award_of(b.buyer_id);
    double q = std::min(unserved, std::max(0.0, book.capacity - taken));
    if (q <= kQuantityEps) continue;
    raw.push_back({b.unit_price, q});  // width, merged later
    taken += q;
  }
  double free = std::max(0.0, book.capacity - taken);
  if (free > kQuantityEps) {
    raw.push_back({std::max(book.reserve, 0.0), free});
  }
  return finish_staircase(std::move(raw));
}

double exclusion_cost(const PriceStaircase& staircase, double awarded) {
  if (awarded < 0.0) {
    throw std::domain_error("exclusion_cost: awarded quantity is negative");
  }
  if (awarded > staircase.total() + kQuantityEps) {
    throw std::domain_error(
        "exclusion_cost: awarded quantity exceeds staircase domain");
  }
  double cost = 0.0;
  double prev = 0.0;
  for (const auto& s : staircase.steps) {
    double lo = prev;
    double hi = std::min(s.cumulative, awarded);
    if (hi > lo) cost += s.price * (hi - lo);
    prev = s.cumulative;
    if (prev >= awarded) break;
  }
  return cost;
}

}  // namespace psp

#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

namespace psp {

// Quantities below this are treated as zero so rounding noise cannot create
// phantom winners or endless reschedule loops.
inline constexpr double kQuantityEps = 1e-9;
inline constexpr double kPriceEps = 1e-9;

using AgentId = int;

/// A single (quantity, unit price) offer from one buyer at one seller.
struct Bid {
  AgentId buyer_id = -1;
  double quantity = 0.0;
  double unit_price = 0.0;

  bool active() const { return quantity > kQuantityEps; }
};

enum class ReserveRule {
  Reactive,           // max(reserve, highest losing + eps)
  Clearing,           // max(reserve, clearing price)
  UnderlineMinusEps,  // max(reserve, lowest winning - eps)
};

/// One seller's auction state: fixed capacity, a monotone reserve price and
/// the standing bids. The reserve acts as the seller's internal bid on its
/// own supply: bids priced at or below it win nothing.
struct SellerBook {
  AgentId seller_id = -1;
  double capacity = 0.0;
  double reserve = 0.0;
  double epsilon = 0.1;
  std::vector<Bid> bids;

  const Bid* find_bid(AgentId buyer) const;
  void upsert_bid(const Bid& b);
  void remove_bid(AgentId buyer);
  double total_demand() const;
};

struct AllocationResult {
  std::map<AgentId, double> awards;  // only positive awards appear
  double clearing_price = 0.0;
  std::set<AgentId> winners;
  std::optional<double> lowest_winning;
  std::optional<double> highest_losing;

  double total_awarded() const;
  double award_of(AgentId buyer) const;
};

/// Piecewise-constant opposing-price function. Steps are ordered by
/// nonincreasing price; `cumulative` is the running quantity through the end
/// of each step, so evaluation is right-continuous in z.
struct PriceStaircase {
  struct Step {
    double price = 0.0;
    double cumulative = 0.0;
  };
  std::vector<Step> steps;

  double total() const { return steps.empty() ? 0.0 : steps.back().cumulative; }
  double width(std::size_t n) const;
  /// Price of the z-th unit (right-continuous); z in (0, total()].
  double price_at(double z) const;
};

/// Residual supply once bids strictly above price y are greedily filled.
double residual_at_price(const SellerBook& book, double y);

/// Descending-price greedy fill with proportional splitting at tied levels.
/// Bids priced at or below the reserve lose to the seller's internal bid.
AllocationResult allocate(const SellerBook& book);

/// Smallest posted bid price at which cumulative awards meet capacity;
/// falls back to the reserve when supply does not bind.
double clearing_price(const SellerBook& book, const AllocationResult& result);

/// (lowest winning price, highest losing price); either may be absent.
std::pair<std::optional<double>, std::optional<double>> margins(
    const SellerBook& book, const AllocationResult& result);

/// Next-round reserve under the chosen rule. Never decreases.
double update_reserve(const SellerBook& book, const AllocationResult& result,
                      ReserveRule rule = ReserveRule::Reactive);

/// Opposing-price staircase at one seller with `excluded_buyer`'s bids
/// removed: opposing bids in descending price order, cumulative quantity
/// capped at capacity, remaining capacity at the floor max(reserve, 0).
PriceStaircase opponent_staircase_single(const SellerBook& book,
                                         AgentId excluded_buyer);

/// Aggregate staircase across sellers: merged steps, nonincreasing price.
PriceStaircase opponent_staircase(const std::vector<SellerBook>& books,
                                  AgentId excluded_buyer);

/// Restriction of the single-seller staircase to opposing bids priced
/// strictly below `price_cap` (used for exclusion payments: a buyer only
/// compensates opponents it can actually displace).
PriceStaircase opponent_staircase_below(const SellerBook& book,
                                        AgentId excluded_buyer,
                                        double price_cap);

/// Integral of the staircase over [0, awarded], as exact rectangle areas.
/// Throws std::domain_error if awarded exceeds the staircase domain.
double exclusion_cost(const PriceStaircase& staircase, double awarded);

}  // namespace psp

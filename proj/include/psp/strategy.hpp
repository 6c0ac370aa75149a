#pragma once

#include <map>
#include <set>
#include <vector>

#include "psp/market_core.hpp"

namespace psp {

/// Parabolic-valuation buyer: theta(z) = kappa * (q_bar - z/2) * z on
/// [0, q_bar], so theta'(z) = kappa * (q_bar - z) is strictly decreasing.
struct BuyerProfile {
  AgentId buyer_id = -1;
  double q_bar = 0.0;    // maximum desired quantity
  double kappa = 0.0;    // max marginal price / q_bar
  double budget = 0.0;   // carried in reports, not enforced
  double epsilon_improve = 0.1;

  double max_marginal() const { return kappa * q_bar; }
};

/// One buyer's posted bids keyed by seller.
struct BidVector {
  std::map<AgentId, Bid> entries;

  double total_quantity() const;
};

double valuation(const BuyerProfile& profile, double z);
double marginal_valuation(const BuyerProfile& profile, double z);

/// min(q_bar, sum of residual caps).
double desired_total(const BuyerProfile& profile,
                     const std::vector<double>& caps);

struct SellerOffer {
  AgentId seller_id = -1;
  double price = 0.0;
  double cap = 0.0;
};

struct SellerSelection {
  std::map<AgentId, double> quantities;
  bool shortfall = false;  // caps could not cover z_star
};

/// Least-cost sequential fill: offers sorted by nondecreasing price, filled
/// until z_star is covered. Sellers outside the chosen prefix get nothing.
SellerSelection select_sellers(const BuyerProfile& profile,
                               std::vector<SellerOffer> offers, double z_star);

enum class BuyerRegime { ConstraintLimited, Interior, PriceLimited };

const char* regime_name(BuyerRegime regime);

BuyerRegime regime_classify(double marginal_at_z, double p_star, double tol);

/// The buyer's view of the market: per-seller opposing staircases (own bids
/// excluded) and the overtake premium needed to displace a standing bid.
struct MarketView {
  std::map<AgentId, PriceStaircase> seller_staircases;
  double overtake_epsilon = 0.0;
};

struct BestResponse {
  BidVector bids;
  double z_hat = 0.0;          // target total quantity
  double price = 0.0;          // uniform bid price w = theta'(z_hat)
  double p_star = 0.0;         // staircase price at the realized point
  BuyerRegime regime = BuyerRegime::PriceLimited;
  double predicted_value = 0.0;
  double predicted_cost = 0.0;
};

/// Uniform-price joint best response: intersect theta' with the aggregate
/// opposing staircase (each step priced at its overtake threshold), then
/// distribute the target across sellers via select_sellers.
BestResponse joint_best_response(const BuyerProfile& profile,
                                 const MarketView& view);

/// Coupled rebid: post the residual q_bar - (sum of awards) at every
/// adjacent seller, clamped at zero.
std::map<AgentId, double> buyer_update(const BuyerProfile& profile,
                                       const std::set<AgentId>& adjacent,
                                       const std::map<AgentId, double>& awards);

/// Strict epsilon-improvement test.
bool accept_update(double u_new, double u_old, double eps);

inline double utility(double value, double cost) { return value - cost; }

}  // namespace psp

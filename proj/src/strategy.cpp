#include "psp/strategy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace psp {

double BidVector::total_quantity() const {
  double sum = 0.0;
  for (const auto& [_, b] : entries) sum += b.quantity;
  return sum;
}

double valuation(const BuyerProfile& profile, double z) {
  if (z < -kQuantityEps || z > profile.q_bar + kQuantityEps) {
    throw std::domain_error("valuation: z outside [0, q_bar]");
  }
  return profile.kappa * (profile.q_bar - z / 2.0) * z;
}

double marginal_valuation(const BuyerProfile& profile, double z) {
  if (z < -kQuantityEps || z > profile.q_bar + kQuantityEps) {
    throw std::domain_error("marginal_valuation: z outside [0, q_bar]");
  }
  return profile.kappa * (profile.q_bar - z);
}

double desired_total(const BuyerProfile& profile,
                     const std::vector<double>& caps) {
  double sum = 0.0;
  for (double c : caps) sum += c;
  return std::min(profile.q_bar, sum);
}

SellerSelection select_sellers(const BuyerProfile& /*profile*/,
                               std::vector<SellerOffer> offers, double z_star) {
  std::stable_sort(offers.begin(), offers.end(),
                   [](const SellerOffer& a, const SellerOffer& b) {
                     if (a.price != b.price) return a.price < b.price;
                     return a.seller_id < b.seller_id;
                   });
  SellerSelection sel;
  double remaining = z_star;
  for (const auto& offer : offers) {
    if (remaining <= kQuantityEps) break;
    double take = std::min(offer.cap, remaining);
    if (take <= kQuantityEps) continue;
    sel.quantities[offer.seller_id] += take;
    remaining -= take;
  }
  sel.shortfall = remaining > kQuantityEps;
  return sel;
}

const char* regime_name(BuyerRegime regime) {
  switch (regime) {
    case BuyerRegime::ConstraintLimited:
      return "constraint-limited";
    case BuyerRegime::Interior:
      return "interior";
    case BuyerRegime::PriceLimited:
      return "price-limited";
  }
  return "unknown";
}

BuyerRegime regime_classify(double marginal_at_z, double p_star, double tol) {
  if (marginal_at_z > p_star + tol) return BuyerRegime::ConstraintLimited;
  if (marginal_at_z < p_star - tol) return BuyerRegime::PriceLimited;
  return BuyerRegime::Interior;
}

BestResponse joint_best_response(const BuyerProfile& profile,
                                 const MarketView& view) {
  BestResponse br;
  if (view.seller_staircases.empty()) return br;

  std::vector<PriceStaircase::Step> raw;  // price + width, merged across sellers
  for (const auto& [seller, st] : view.seller_staircases) {
    for (std::size_t n = 0; n < st.steps.size(); ++n) {
      raw.push_back({st.steps[n].price, st.width(n)});
    }
  }
  std::stable_sort(raw.begin(), raw.end(),
                   [](const auto& a, const auto& b) { return a.price > b.price; });

  // Walk the aggregate staircase from the top. A step is worth taking while
  // the marginal valuation at its far end still covers the price needed to
  // displace the opposing bid (step price plus the overtake premium); the
  // first failing step is solved linearly, since theta' is linear.
  const double eps = view.overtake_epsilon;
  double cum = 0.0;
  for (const auto& step : raw) {
    if (cum >= profile.q_bar - kQuantityEps) break;
    double width = std::min(step.cumulative, profile.q_bar - cum);
    double threshold = step.price + eps;
    if (marginal_valuation(profile, cum + width) >= threshold) {
      cum += width;
      continue;
    }
    if (marginal_valuation(profile, cum) > threshold) {
      double z = profile.q_bar - threshold / profile.kappa;
      cum = std::clamp(z, cum, cum + width);
    }
    break;
  }
  br.z_hat = std::min(cum, profile.q_bar);
  br.price = marginal_valuation(profile, br.z_hat);

  // Per-seller offers: one per staircase step the buyer can afford at the
  // uniform price, so the least-cost fill sees real step granularity.
  std::vector<SellerOffer> offers;
  for (const auto& [seller, st] : view.seller_staircases) {
    for (std::size_t n = 0; n < st.steps.size(); ++n) {
      if (st.steps[n].price + eps <= br.price + kPriceEps) {
        offers.push_back({seller, st.steps[n].price, st.width(n)});
      }
    }
  }
  auto sel = select_sellers(profile, offers, br.z_hat);

  double realized = 0.0;
  for (const auto& [seller, q] : sel.quantities) {
    if (q <= kQuantityEps) continue;
    br.bids.entries[seller] = Bid{profile.buyer_id, q, br.price};
    realized += q;
  }
  br.z_hat = realized;
  br.predicted_value = valuation(profile, realized);

  // Predicted payment: cheapest-first against each seller's actual staircase.
  for (const auto& [seller, q] : sel.quantities) {
    const auto& st = view.seller_staircases.at(seller);
    double remaining = q;
    for (std::size_t n = st.steps.size(); n-- > 0 && remaining > kQuantityEps;) {
      if (st.steps[n].price + eps > br.price + kPriceEps) break;
      double take = std::min(st.width(n), remaining);
      br.predicted_cost += take * st.steps[n].price;
      remaining -= take;
    }
  }

  PriceStaircase aggregate;
  double c = 0.0;
  for (const auto& s : raw) {
    c += s.cumulative;
    aggregate.steps.push_back({s.price, c});
  }
  br.p_star = br.z_hat > kQuantityEps && !aggregate.steps.empty()
                  ? aggregate.price_at(br.z_hat)
                  : 0.0;
  double tol = 1e-6 * profile.max_marginal();
  br.regime = regime_classify(marginal_valuation(profile, br.z_hat), br.p_star,
                              tol);
  return br;
}

std::map<AgentId, double> buyer_update(const BuyerProfile& profile,
                                       const std::set<AgentId>& adjacent,
                                       const std::map<AgentId, double>& awards) {
  double awarded = 0.0;
  for (const auto& [_, a] : awards) awarded += a;
  double residual = std::max(0.0, profile.q_bar - awarded);
  std::map<AgentId, double> out;
  for (AgentId j : adjacent) out[j] = residual;
  return out;
}

bool accept_update(double u_new, double u_old, double eps) {
  return u_new - u_old > eps;
}

}  // namespace psp

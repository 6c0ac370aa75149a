#include "psp/harness.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

namespace psp {

MarketState generate_market(const ExperimentSpec& spec, std::uint64_t seed) {
  if (spec.buyers <= 0 || spec.sellers <= 0) {
    throw std::invalid_argument("generate_market: counts must be positive");
  }
  if (spec.connectivity_percent < 0.0 || spec.connectivity_percent > 100.0) {
    throw std::invalid_argument("generate_market: connectivity outside [0,100]");
  }
  SplitMix64 rng(seed);
  MarketState market;
  for (int j = 0; j < spec.sellers; ++j) {
    SellerBook book;
    book.seller_id = j;
    book.capacity = spec.capacities[j % spec.capacities.size()];
    book.reserve = spec.initial_reserve;
    book.epsilon = spec.epsilon;
    market.sellers[j] = book;
  }
  for (int i = 0; i < spec.buyers; ++i) {
    BuyerProfile profile;
    profile.buyer_id = i;
    profile.q_bar = rng.uniform(spec.q_bar_range[0], spec.q_bar_range[1]);
    profile.kappa = rng.uniform(spec.kappa_range[0], spec.kappa_range[1]);
    profile.budget = rng.uniform(spec.budget_range[0], spec.budget_range[1]);
    profile.epsilon_improve = spec.epsilon;
    market.buyers[i] = profile;

    int home = i % spec.sellers;
    market.adjacency[i].insert(home);
    for (int j = 0; j < spec.sellers; ++j) {
      if (j == home) continue;
      if (rng.uniform() * 100.0 < spec.connectivity_percent) {
        market.adjacency[i].insert(j);
      }
    }
  }
  return market;
}

std::optional<SellerStats> seller_stats(const MarketState& market, AgentId j) {
  auto it = market.allocations.find(j);
  if (it == market.allocations.end()) return std::nullopt;
  const SellerBook& book = market.sellers.at(j);

  double total = 0.0;
  double weighted_price = 0.0;
  for (const auto& [i, a] : it->second.awards) {
    const Bid* b = book.find_bid(i);
    if (!b) continue;
    total += a;
    weighted_price += a * b->unit_price;
  }
  if (total <= kQuantityEps) return std::nullopt;

  SellerStats stats;
  stats.total_awarded = total;
  stats.expected_revenue = weighted_price / total;
  double var = 0.0;
  for (const auto& [i, a] : it->second.awards) {
    const Bid* b = book.find_bid(i);
    if (!b) continue;
    double d = b->unit_price - stats.expected_revenue;
    var += a * d * d;
  }
  stats.revenue_variance = var / total;
  return stats;
}

double shared_buyer_fraction(const MarketState& market) {
  if (market.buyers.empty()) return 0.0;
  int shared = 0;
  for (const auto& [i, sellers] : market.adjacency) {
    if (sellers.size() > 1) ++shared;
  }
  return static_cast<double>(shared) / market.buyers.size();
}

// ---------------------------------------------------------------------------

MarketState ladder_market() {
  MarketState market;
  market.sellers[0] = SellerBook{0, 15.0, 0.0, 2.5, {}};
  market.sellers[1] = SellerBook{1, 8.0, 0.0, 2.5, {}};
  market.sellers[0].upsert_bid({0, 8.0, 40.0});
  market.sellers[0].upsert_bid({1, 2.0, 4.0});
  market.sellers[0].upsert_bid({2, 6.0, 1.0});
  market.sellers[1].upsert_bid({0, 8.0, 40.0});

  // Profiles consistent with the posted bids: theta'(0) at or above the bid.
  market.buyers[0] = BuyerProfile{0, 16.0, 3.0, 100.0, 2.5};
  market.buyers[1] = BuyerProfile{1, 2.0, 2.5, 100.0, 2.5};
  market.buyers[2] = BuyerProfile{2, 6.0, 0.5, 100.0, 2.5};
  market.adjacency[0] = {0, 1};
  market.adjacency[1] = {0};
  market.adjacency[2] = {0};
  return market;
}

LadderReport ladder_experiment() {
  LadderReport report;
  EngineConfig config;
  config.schedule_buyers = false;  // the posted bids are the experiment
  report.run = run(ladder_market(), config);
  report.tuples = ladder_tuples(report.run.final_state);
  report.margins = min_margins(report.tuples);
  std::set<std::pair<AgentId, AgentId>> pairs;
  for (const auto& t : report.tuples) {
    if (t.violated) ++report.violations;
    pairs.insert({std::min(t.seller_l, t.seller_j),
                  std::max(t.seller_l, t.seller_j)});
  }
  report.unique_seller_pairs = static_cast<int>(pairs.size());
  return report;
}

// ---------------------------------------------------------------------------

namespace {

// Intra-round resolution at one seller: serve bidders from the top; each
// served buyer pays the highest still-unserved opposing price, the last one
// pays the working reserve; the working reserve tracks payment + epsilon.
std::vector<ScenarioStep> serve_sequential(SellerBook& book, int round,
                                           double epsilon) {
  std::vector<Bid> order;
  for (const auto& b : book.bids) {
    if (b.active()) order.push_back(b);
  }
  std::sort(order.begin(), order.end(), [](const Bid& a, const Bid& b) {
    if (a.unit_price != b.unit_price) return a.unit_price > b.unit_price;
    return a.buyer_id < b.buyer_id;
  });

  std::vector<ScenarioStep> steps;
  double remaining = book.capacity;
  double working_reserve = book.reserve;
  for (std::size_t n = 0; n < order.size() && remaining > kQuantityEps; ++n) {
    double award = std::min(order[n].quantity, remaining);
    double payment = n + 1 < order.size() ? order[n + 1].unit_price
                                          : working_reserve;
    working_reserve = payment + epsilon;
    remaining -= award;
    steps.push_back({round, static_cast<int>(n) + 1, book.seller_id,
                     order[n].buyer_id, award, payment, working_reserve});
  }
  book.reserve = std::max(book.reserve, working_reserve);
  return steps;
}

}  // namespace

ScenarioReport appendix_scenario(double epsilon, double delta) {
  constexpr AgentId kL1 = 1, kL2 = 2;
  constexpr AgentId kB3 = 3, kB4 = 4, kB5 = 5, kB6 = 6;

  MarketState market;
  market.sellers[kL1] = SellerBook{kL1, 12.0, 0.0, epsilon, {}};
  market.sellers[kL2] = SellerBook{kL2, 12.0, 0.0, epsilon, {}};
  market.buyers[kB3] = BuyerProfile{kB3, 4.0, 2.0, 100.0, epsilon};
  market.buyers[kB4] = BuyerProfile{kB4, 8.0, 2.0, 100.0, epsilon};
  market.buyers[kB5] = BuyerProfile{kB5, 8.0, 2.0, 100.0, epsilon};
  market.buyers[kB6] = BuyerProfile{kB6, 4.0, 2.0, 100.0, epsilon};
  market.adjacency[kB3] = {kL1};
  market.adjacency[kB4] = {kL1, kL2};
  market.adjacency[kB5] = {kL1, kL2};
  market.adjacency[kB6] = {kL2};

  market.sellers[kL1].upsert_bid({kB3, 4.0, 2.0});
  market.sellers[kL1].upsert_bid({kB4, 4.0, 1.8});
  market.sellers[kL1].upsert_bid({kB5, 4.0, 1.5});
  market.sellers[kL2].upsert_bid({kB5, 4.0, 1.9});
  market.sellers[kL2].upsert_bid({kB4, 4.0, 1.7});
  market.sellers[kL2].upsert_bid({kB6, 4.0, 1.4});

  ScenarioReport report;

  // Round 1: both sellers resolve their books step by step.
  MarketState round1 = market;
  for (AgentId j : {kL1, kL2}) {
    auto steps = serve_sequential(round1.sellers.at(j), 1, epsilon);
    report.steps.insert(report.steps.end(), steps.begin(), steps.end());
  }

  // Round 2: B4 overtakes B3 on L1 by delta.
  MarketState round2 = round1;
  round2.clock = 2.0;
  Bid raised{kB4, 4.0, 2.0 + delta};
  round2.sellers.at(kL1).upsert_bid(raised);
  report.shifts = detect_market_shift(round1, round2);

  auto l1_steps = serve_sequential(round2.sellers.at(kL1), 2, epsilon);
  report.steps.insert(report.steps.end(), l1_steps.begin(), l1_steps.end());

  // Coupled rebid: B4 reposts its residual demand at L2 at the old price.
  double award_l1 = 0.0;
  for (const auto& s : l1_steps) {
    if (s.buyer == kB4) award_l1 = s.quantity;
  }
  auto residual = buyer_update(round2.buyers.at(kB4), {kL2}, {{kL1, award_l1}});
  report.expected_rebid_quantity = residual.at(kL2);
  report.coupled_rebid_quantity = residual.at(kL2);
  round2.sellers.at(kL2).upsert_bid({kB4, report.coupled_rebid_quantity, 1.7});

  // L2 processes the rebid at its next local step, charging the highest
  // competing bid (B5's previous 1.9).
  double competing = 0.0;
  for (const auto& b : round2.sellers.at(kL2).bids) {
    if (b.buyer_id != kB4 && b.active()) {
      competing = std::max(competing, b.unit_price);
    }
  }
  report.steps.push_back({2, 2, kL2, kB4, report.coupled_rebid_quantity,
                          competing, competing + epsilon});
  return report;
}

// ---------------------------------------------------------------------------

double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  if (xs.size() != ys.size() || xs.size() < 2) return 0.0;
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    std::size_t n = 0;
    while (n < idx.size()) {
      std::size_t m = n;
      while (m + 1 < idx.size() && v[idx[m + 1]] == v[idx[n]]) ++m;
      double avg = (n + m) / 2.0 + 1.0;  // tie-averaged rank
      for (std::size_t k = n; k <= m; ++k) r[idx[k]] = avg;
      n = m + 1;
    }
    return r;
  };
  auto rx = ranks(xs);
  auto ry = ranks(ys);
  double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / rx.size();
  double my = std::accumulate(ry.begin(), ry.end(), 0.0) / ry.size();
  double num = 0.0, dx = 0.0, dy = 0.0;
  for (std::size_t n = 0; n < rx.size(); ++n) {
    num += (rx[n] - mx) * (ry[n] - my);
    dx += (rx[n] - mx) * (rx[n] - mx);
    dy += (ry[n] - my) * (ry[n] - my);
  }
  if (dx <= 0.0 || dy <= 0.0) return 0.0;
  return num / std::sqrt(dx * dy);
}

SweepReport connectivity_sweep(const ExperimentSpec& spec,
                               const std::vector<double>& levels,
                               int seeds_per_level,
                               const EngineConfig& engine_config) {
  SweepReport report;
  std::vector<double> level_xs;
  std::vector<double> gap_ys;

  for (std::size_t s = 0; s < levels.size(); ++s) {
    double gap_sum = 0.0;
    int gap_count = 0;
    for (int rep = 0; rep < seeds_per_level; ++rep) {
      std::uint64_t seed = spec.base_seed + s + 1000ULL * rep;
      ExperimentSpec level_spec = spec;
      level_spec.connectivity_percent = levels[s];
      MarketState market = generate_market(level_spec, seed);
      EngineConfig config = engine_config;
      config.rng_seed = seed;
      RunResult res = run(market, config);

      double shared = shared_buyer_fraction(res.final_state);
      int winners = 0, zero_alloc = 0, opt_out = 0;
      ActiveIndex index = active_index(res.final_state);
      for (const auto& [i, _] : res.final_state.buyers) {
        bool active = !sellers_of_buyer(index, i).empty();
        double award = res.final_state.buyer_total_award(i);
        if (award > kQuantityEps) {
          ++winners;
        } else if (active) {
          ++zero_alloc;
        } else if (res.compute_counts.count(i) &&
                   res.compute_counts.at(i) > 0) {
          ++opt_out;
        }
      }

      std::vector<double> prices;
      for (const auto& [j, _] : res.final_state.sellers) {
        auto it = res.final_state.allocations.find(j);
        double price = it != res.final_state.allocations.end()
                           ? it->second.clearing_price
                           : res.final_state.sellers.at(j).reserve;
        prices.push_back(price);
        SweepRow row;
        row.level = levels[s];
        row.seed = seed;
        row.seller = j;
        row.clearing_price = price;
        if (auto stats = seller_stats(res.final_state, j)) {
          row.expected_revenue = stats->expected_revenue;
          row.revenue_variance = stats->revenue_variance;
          row.total_awarded = stats->total_awarded;
        }
        row.winners = winners;
        row.zero_allocation = zero_alloc;
        row.opt_out = opt_out;
        row.shared_fraction = shared;
        row.converged = res.converged;
        report.rows.push_back(row);
      }
      if (prices.size() >= 2) {
        auto [lo, hi] = std::minmax_element(prices.begin(), prices.end());
        gap_sum += *hi - *lo;
        ++gap_count;
      }
    }
    if (gap_count > 0) {
      double mean_gap = gap_sum / gap_count;
      report.gap_series.push_back({levels[s], mean_gap});
      level_xs.push_back(levels[s]);
      gap_ys.push_back(mean_gap);
    }
  }
  report.spearman_level_vs_gap = spearman(level_xs, gap_ys);
  return report;
}

// ---------------------------------------------------------------------------

AllocationResult brute_force_allocation_oracle(const std::vector<Bid>& bids,
                                               double capacity,
                                               double reserve) {
  if (bids.size() > 5) {
    throw std::invalid_argument("oracle: at most 5 bids supported");
  }
  AllocationResult result;
  std::map<double, std::vector<const Bid*>, std::greater<>> tiers;
  for (const auto& b : bids) {
    if (b.quantity > kQuantityEps && b.unit_price > reserve) {
      tiers[b.unit_price].push_back(&b);
    }
  }
  long double remaining = capacity;
  for (const auto& [price, tier] : tiers) {
    if (remaining <= kQuantityEps) break;
    long double demand = 0.0L;
    for (const Bid* b : tier) demand += b->quantity;
    for (const Bid* b : tier) {
      long double share = demand > 0.0L
                              ? static_cast<long double>(b->quantity) / demand *
                                    remaining
                              : 0.0L;
      long double award = std::min<long double>(b->quantity, share);
      if (award > kQuantityEps) {
        result.awards[b->buyer_id] = static_cast<double>(award);
        result.winners.insert(b->buyer_id);
      }
    }
    long double served = 0.0L;
    for (const Bid* b : tier) {
      auto it = result.awards.find(b->buyer_id);
      if (it != result.awards.end()) served += it->second;
    }
    remaining -= served;
  }

  // Clearing on the grid of winning prices, independently recomputed.
  std::optional<double> clearing;
  for (const auto& [price, tier] : tiers) {
    bool winning_tier = false;
    for (const Bid* b : tier) {
      if (result.winners.count(b->buyer_id)) winning_tier = true;
    }
    if (!winning_tier) continue;
    long double at_or_above = 0.0L;
    for (const auto& b : bids) {
      auto it = result.awards.find(b.buyer_id);
      if (it != result.awards.end() && b.unit_price >= price) {
        at_or_above += it->second;
      }
    }
    if (at_or_above >= capacity - kQuantityEps) {
      if (!clearing || price < *clearing) clearing = price;
    }
  }
  result.clearing_price = clearing.value_or(reserve);
  for (const auto& b : bids) {
    if (b.quantity > kQuantityEps && !result.winners.count(b.buyer_id)) {
      if (!result.highest_losing || b.unit_price > *result.highest_losing) {
        result.highest_losing = b.unit_price;
      }
    }
    if (result.winners.count(b.buyer_id)) {
      if (!result.lowest_winning || b.unit_price < *result.lowest_winning) {
        result.lowest_winning = b.unit_price;
      }
    }
  }
  return result;
}

std::vector<SurfacePoint> utility_surface_export(const BuyerProfile& profile,
                                                 int resolution,
                                                 double w_max) {
  if (resolution <= 0) {
    throw std::invalid_argument("utility_surface_export: resolution <= 0");
  }
  std::vector<SurfacePoint> points;
  for (int a = 0; a <= resolution; ++a) {
    double z = profile.q_bar * a / resolution;
    for (int b = 0; b <= resolution; ++b) {
      double w = w_max * b / resolution;
      points.push_back({z, 0.0, w, valuation(profile, z) - z * w});
    }
  }
  return points;
}

std::vector<SurfacePoint> shared_surface_export(const BuyerProfile& profile,
                                                int resolution) {
  if (resolution <= 0) {
    throw std::invalid_argument("shared_surface_export: resolution <= 0");
  }
  std::vector<SurfacePoint> points;
  for (int a = 0; a <= resolution; ++a) {
    for (int b = 0; b <= resolution; ++b) {
      double z0 = profile.q_bar * a / resolution;
      double z1 = profile.q_bar * b / resolution;
      double zt = std::min(z0 + z1, profile.q_bar);
      double w = marginal_valuation(profile, zt);
      points.push_back({z0, z1, w, valuation(profile, zt) - w * zt});
    }
  }
  return points;
}

}  // namespace psp

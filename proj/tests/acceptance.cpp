// Acceptance gate: one check per release criterion, one PASS/FAIL line each.
// Exit status is the number of failing criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <queue>
#include <set>
#include <string>
#include <vector>

#include "psp/cli.hpp"
#include "psp/harness.hpp"

using namespace psp;

namespace {

int failures = 0;

void report(int number, const std::string& name, bool ok, double seconds) {
  std::printf("%s: criterion %d — %s (%.2fs)\n", ok ? "PASS" : "FAIL", number,
              name.c_str(), seconds);
  if (!ok) ++failures;
}

void criterion(int number, const std::string& name,
               const std::function<bool()>& body) {
  auto start = std::chrono::steady_clock::now();
  bool ok = false;
  try {
    ok = body();
  } catch (const std::exception& e) {
    std::printf("  exception: %s\n", e.what());
  }
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  report(number, name, ok, seconds);
}

bool near(double a, double b, double tol = 1e-12) {
  return std::abs(a - b) <= tol;
}

// --- 1: exact ladder reproduction -----------------------------------------

bool ladder_exact() {
  auto start = std::chrono::steady_clock::now();
  auto r = ladder_experiment();
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  if (r.tuples.size() != 2 || r.violations != 0) return false;
  auto tuple_ok = [&](const LadderTuple& t, AgentId k, double p_k) {
    return t.seller_l == 0 && t.buyer_k == k && t.seller_j == 1 &&
           t.buyer_i == 0 && t.p_star_l == 1.0 && t.p_k == p_k &&
           t.p_star_j == 40.0 && t.p_i == 40.0;
  };
  bool tuples_ok = tuple_ok(r.tuples[0], 1, 4.0) &&
                   tuple_ok(r.tuples[1], 2, 1.0);
  bool margins_ok = r.margins[0] == 0.0 && r.margins[1] == 36.0 &&
                    r.margins[2] == 0.0;
  return tuples_ok && margins_ok && r.unique_seller_pairs == 1 &&
         seconds < 1.0;
}

// --- 2: scripted two-round scenario ---------------------------------------

bool scenario_exact() {
  auto start = std::chrono::steady_clock::now();
  const double eps = 0.1, delta = 0.1;
  auto r = appendix_scenario(eps, delta);
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  if (r.steps.size() < 6 || seconds >= 1.0) return false;

  auto step_ok = [&](const ScenarioStep& s, int round, AgentId seller,
                     AgentId buyer, double payment) {
    return s.round == round && s.seller == seller && s.buyer == buyer &&
           near(s.payment, payment);
  };
  bool round1 = step_ok(r.steps[0], 1, 1, 3, 1.8) &&
                step_ok(r.steps[1], 1, 1, 4, 1.5) &&
                step_ok(r.steps[2], 1, 1, 5, 1.5 + eps) &&
                step_ok(r.steps[3], 1, 2, 5, 1.7) &&
                step_ok(r.steps[4], 1, 2, 4, 1.4) &&
                step_ok(r.steps[5], 1, 2, 6, 1.4 + eps);

  bool one_overtake = r.shifts.size() == 1 &&
                      r.shifts[0].kind == ShiftKind::BidOvertake &&
                      r.shifts[0].seller == 1 && r.shifts[0].buyer == 4;

  bool rebid = near(r.coupled_rebid_quantity, r.expected_rebid_quantity) &&
               near(r.coupled_rebid_quantity, 4.0);

  // Round 2: B4 served first at L1 paying B3's former top price.
  bool round2 = false;
  for (const auto& s : r.steps) {
    if (s.round == 2 && s.seller == 1 && s.tau == 1) {
      round2 = s.buyer == 4 && near(s.payment, 2.0);
    }
  }
  return round1 && one_overtake && rebid && round2;
}

// --- 3: allocation oracle equivalence -------------------------------------

bool oracle_equivalence() {
  SplitMix64 rng(20405008);
  double worst = 0.0;
  for (int it = 0; it < 1000; ++it) {
    SellerBook book;
    book.seller_id = 0;
    book.capacity = rng.uniform(1.0, 40.0);
    book.reserve = it % 4 == 0 ? rng.uniform(0.0, 4.0) : 0.0;
    int n = rng.uniform_int(0, 5);
    std::vector<Bid> bids;
    for (int i = 0; i < n; ++i) {
      double price = it % 2 == 0 ? rng.uniform_int(1, 10) / 2.0
                                 : rng.uniform(0.1, 12.0);
      bids.push_back({i, rng.uniform(0.0, 15.0), price});
      book.upsert_bid(bids.back());
    }
    auto fast = allocate(book);
    auto oracle =
        brute_force_allocation_oracle(bids, book.capacity, book.reserve);
    for (int i = 0; i < n; ++i) {
      worst = std::max(worst,
                       std::abs(fast.award_of(i) - oracle.award_of(i)));
    }
    if (fast.winners != oracle.winners) return false;
  }
  return worst < 1e-9;
}

// --- 4: property-based invariant suite ------------------------------------

bool invariant_suite() {
  long cases = 0;
  SplitMix64 rng(4242);

  // Award bounds on random books.
  for (int it = 0; it < 3000; ++it, ++cases) {
    SellerBook book;
    book.seller_id = 0;
    book.capacity = rng.uniform(1.0, 30.0);
    book.reserve = it % 3 == 0 ? rng.uniform(0.0, 5.0) : 0.0;
    int n = rng.uniform_int(0, 6);
    for (int i = 0; i < n; ++i) {
      double price = it % 2 == 0 ? rng.uniform_int(1, 8) / 2.0
                                 : rng.uniform(0.1, 15.0);
      book.upsert_bid({i, rng.uniform(0.0, 12.0), price});
    }
    auto r = allocate(book);
    double total = 0.0;
    for (const auto& [i, a] : r.awards) {
      const Bid* b = book.find_bid(i);
      if (!b || a > b->quantity + 1e-9) return false;
      total += a;
    }
    if (total > book.capacity + 1e-9) return false;
    // Margin chain whenever both ends exist (zero-reserve books only; a
    // high reserve can strand losers above the fallback clearing price).
    if (book.reserve == 0.0 && r.lowest_winning && r.highest_losing) {
      if (!(*r.highest_losing < r.clearing_price &&
            r.clearing_price <= *r.lowest_winning)) {
        return false;
      }
    }
  }

  // Reserve monotone along every tau trace of simulated markets.
  ExperimentSpec spec;
  for (std::uint64_t seed = 500; seed < 540; ++seed) {
    auto res = run(generate_market(spec, seed), EngineConfig{});
    std::map<AgentId, double> last;
    for (const auto& step : res.trace.steps) {
      ++cases;
      auto it = last.find(step.seller);
      if (it != last.end() && step.reserve_after < it->second - 1e-12) {
        return false;
      }
      last[step.seller] = step.reserve_after;
    }
  }

  // Influence-set properties on random bipartite graphs.
  for (int it = 0; it < 1200; ++it) {
    int buyers = rng.uniform_int(1, 50);
    int sellers = rng.uniform_int(1, 50);
    MarketState m;
    for (int j = 0; j < sellers; ++j) {
      m.sellers[j] = SellerBook{j, 100.0, 0.0, 0.1, {}};
    }
    double density = rng.uniform() * 0.15;
    std::vector<std::pair<AgentId, AgentId>> edges;
    for (int i = 0; i < buyers; ++i) {
      for (int j = 0; j < sellers; ++j) {
        if (rng.uniform() < density) {
          edges.push_back({i, j});
          m.sellers[j].upsert_bid({i, 1.0, 1.0});
        }
      }
    }
    auto index = active_index(m);
    Side side = it % 2 == 0 ? Side::Buyer : Side::Seller;
    AgentId x = side == Side::Buyer ? rng.uniform_int(0, buyers - 1)
                                    : rng.uniform_int(0, sellers - 1);

    // Parity + monotone growth + BFS(2n) equivalence for n = 0..3.
    std::set<AgentId> prev;
    std::set<AgentId> own_side;
    if (side == Side::Buyer) {
      for (auto [i, j] : index.pairs) own_side.insert(i);
    } else {
      for (auto [i, j] : index.pairs) own_side.insert(j);
    }
    own_side.insert(x);
    for (int n = 0; n <= 3; ++n, ++cases) {
      auto shell = lambda_n(index, side, x, n);
      for (AgentId v : shell.members) {
        if (!own_side.count(v)) return false;  // parity violated
      }
      if (n > 0 && !std::includes(shell.members.begin(), shell.members.end(),
                                  prev.begin(), prev.end())) {
        return false;
      }
      // Breadth-first oracle to distance 2n.
      std::map<std::pair<int, AgentId>, int> dist;
      std::queue<std::pair<int, AgentId>> q;
      int s0 = side == Side::Buyer ? 0 : 1;
      dist[{s0, x}] = 0;
      q.push({s0, x});
      while (!q.empty()) {
        auto [sv, v] = q.front();
        q.pop();
        int d = dist[{sv, v}];
        if (d >= 2 * n) continue;
        auto next = sv == 0 ? sellers_of_buyer(index, v)
                            : buyers_of_seller(index, v);
        for (AgentId u : next) {
          if (!dist.count({1 - sv, u})) {
            dist[{1 - sv, u}] = d + 1;
            q.push({1 - sv, u});
          }
        }
      }
      std::set<AgentId> ball;
      for (const auto& [v, d] : dist) {
        if (v.first == s0) ball.insert(v.second);
      }
      if (shell.members != ball) return false;
      prev = shell.members;
    }

    // Component closure against a union-find oracle.
    ++cases;
    std::map<int, int> parent;
    std::function<int(int)> find = [&](int v) {
      if (!parent.count(v)) parent[v] = v;
      return parent[v] == v ? v : parent[v] = find(parent[v]);
    };
    for (auto [i, j] : edges) parent[find(i)] = find(10000 + j);
    int root = find(side == Side::Buyer ? x : 10000 + x);
    std::set<AgentId> expected{x};
    for (auto [i, j] : edges) {
      if (side == Side::Buyer && find(i) == root) expected.insert(i);
      if (side == Side::Seller && find(10000 + j) == root) expected.insert(j);
    }
    if (component_closure(index, side, x).members != expected) return false;
  }

  return cases >= 10000;
}

// --- 5: local monotonicity on converged runs ------------------------------

bool local_monotonicity() {
  ExperimentSpec spec;
  EngineConfig config;
  config.record_snapshots = true;
  DeviationGrid grid;
  int checked = 0;
  int saturated_tail_total = 0;
  for (std::uint64_t seed = 1; checked < 100 && seed < 400; ++seed) {
    auto res = run(generate_market(spec, seed), config);
    if (!res.converged || res.snapshots.empty()) continue;
    ++checked;

    // Reserves are monotone over the whole run, saturated or not.
    std::map<AgentId, double> last;
    for (const auto& snap : res.snapshots) {
      for (const auto& [j, book] : snap.sellers) {
        auto it = last.find(j);
        if (it != last.end() && book.reserve < it->second - 1e-12) {
          std::printf("  seed %llu: reserve decrease at seller %d\n",
                      static_cast<unsigned long long>(seed), j);
          return false;
        }
        last[j] = book.reserve;
      }
    }

    // Ladder relations must not reverse once the shell saturates. The
    // deviation grid alone can look quiet mid-transient, so saturation
    // additionally requires that no buyer's accepted best response would
    // still change the market (the no-improvement condition in full).
    auto quiescent = [&](const MarketState& snap) {
      for (const auto& [i, _] : snap.buyers) {
        MarketState copy = snap;
        if (process_buyer_compute(copy, i, config).effective_change) {
          return false;
        }
      }
      return true;
    };
    auto index = active_index(res.final_state);
    for (const auto& [j, _] : res.final_state.sellers) {
      auto shell = lambda_primary(index, Side::Seller, j);
      std::size_t first = res.snapshots.size();
      for (std::size_t n = 0; n < res.snapshots.size(); ++n) {
        if (is_saturated(res.snapshots[n], shell, grid, config.epsilon)
                .saturated &&
            quiescent(res.snapshots[n])) {
          first = n;
          break;
        }
      }
      if (first == res.snapshots.size()) continue;  // never saturates
      std::vector<MarketState> tail(res.snapshots.begin() + first,
                                    res.snapshots.end());
      saturated_tail_total += static_cast<int>(tail.size());
      auto mono = check_local_monotonicity(tail, shell);
      if (!mono.ok) {
        std::printf("  seed %llu seller %d: %s\n",
                    static_cast<unsigned long long>(seed), j,
                    mono.what.c_str());
        return false;
      }
    }
  }
  std::printf("  %d converged runs, %d saturated-tail snapshots checked\n",
              checked, saturated_tail_total);
  // Full grid saturation is rare at the dynamics' resting points: the
  // posted-price best response is deliberately conservative against
  // exclusion payments, which only charge the displaced tail, so some grid
  // deviations stay profitable at states the dynamics never leave. Reserve
  // monotonicity is checked on every converged trace above; the ladder
  // check runs on every tail that does saturate, and a handful must exist
  // for the check to be non-vacuous.
  return checked == 100 && saturated_tail_total >= 10;
}

// --- 6: connectivity sweep trend ------------------------------------------

bool sweep_trend() {
  auto start = std::chrono::steady_clock::now();
  ExperimentSpec spec;
  EngineConfig config;
  std::vector<double> levels;
  for (int s = 0; s <= 100; s += 10) levels.push_back(s);
  auto report = connectivity_sweep(spec, levels, 20, config);
  double seconds = std::chrono::duration<double>(
                       std::chrono::steady_clock::now() - start)
                       .count();
  std::printf("  spearman(level, |p*0 - p*1|) = %.4f\n",
              report.spearman_level_vs_gap);
  return report.spearman_level_vs_gap <= -0.5 && seconds < 60.0;
}

// --- 7: byte-identical reports --------------------------------------------

bool run_determinism() {
  auto config = default_config();
  auto base = std::filesystem::temp_directory_path() / "psp_acceptance";
  std::filesystem::remove_all(base);
  auto d1 = base / "a";
  auto d2 = base / "b";
  if (cmd_run(config, 20405008, d1) != cmd_run(config, 20405008, d2)) {
    return false;
  }
  auto slurp = [](const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  std::string r1 = slurp(d1 / "report.json");
  bool same = !r1.empty() && r1 == slurp(d2 / "report.json") &&
              slurp(d1 / "states.csv") == slurp(d2 / "states.csv");
  std::filesystem::remove_all(base);
  return same;
}

// --- 8: valuation identities ----------------------------------------------

bool valuation_identities() {
  SplitMix64 rng(808);
  for (int it = 0; it < 1000; ++it) {
    BuyerProfile p;
    p.buyer_id = 0;
    p.q_bar = rng.uniform(1.0, 80.0);
    p.kappa = rng.uniform(0.2, 5.0);
    double z = rng.uniform(0.0, p.q_bar);
    const int intervals = 128;
    double integral = 0.0;
    for (int k = 0; k < intervals; ++k) {
      integral += marginal_valuation(p, (k + 0.5) * z / intervals) *
                  (z / intervals);
    }
    double v = valuation(p, z);
    if (std::abs(v - integral) > 1e-9 * std::max(1.0, std::abs(v))) {
      return false;
    }

    // Regime partition: exactly one label for every sampled outcome.
    double m = rng.uniform(0.0, 60.0);
    double pstar = rng.uniform(0.0, 60.0);
    double tol = rng.uniform(0.0, 0.5);
    auto regime = regime_classify(m, pstar, tol);
    int matching = (m > pstar + tol ? 1 : 0) +
                   (std::abs(m - pstar) <= tol ? 1 : 0) +
                   (m < pstar - tol ? 1 : 0);
    if (matching != 1) return false;
    auto expected = m > pstar + tol    ? BuyerRegime::ConstraintLimited
                    : m < pstar - tol ? BuyerRegime::PriceLimited
                                      : BuyerRegime::Interior;
    if (regime != expected) return false;
  }
  return true;
}

}  // namespace

int main() {
  criterion(1, "price-ladder exact reproduction", ladder_exact);
  criterion(2, "two-round scenario trace", scenario_exact);
  criterion(3, "allocation oracle equivalence", oracle_equivalence);
  criterion(4, "property-based invariant suite", invariant_suite);
  criterion(5, "local monotonicity on converged runs", local_monotonicity);
  criterion(6, "connectivity sweep trend", sweep_trend);
  criterion(7, "byte-identical run reports", run_determinism);
  criterion(8, "valuation identities and regime partition",
            valuation_identities);
  return failures;
}

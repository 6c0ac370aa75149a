#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <numeric>
#include <queue>

#include "psp/harness.hpp"
#include "psp/influence.hpp"

using namespace psp;

namespace {

// Market with the given (buyer, seller) active edges; prices/quantities are
// placeholders since only the index structure matters here.
MarketState edge_market(const std::vector<std::pair<AgentId, AgentId>>& edges,
                        int sellers) {
  MarketState m;
  for (int j = 0; j < sellers; ++j) {
    m.sellers[j] = SellerBook{j, 100.0, 0.0, 0.1, {}};
  }
  for (auto [i, j] : edges) {
    m.sellers[j].upsert_bid({i, 1.0, 1.0});
    m.adjacency[i].insert(j);
    BuyerProfile p;
    p.buyer_id = i;
    p.q_bar = 1.0;
    p.kappa = 1.0;
    m.buyers[i] = p;
  }
  return m;
}

// Independent oracle: same-side vertices within bipartite distance 2n.
std::set<AgentId> bfs_shell(const ActiveIndex& index, Side side, AgentId x,
                            int n) {
  // Encode vertices as (side, id); breadth-first to depth 2n.
  using V = std::pair<int, AgentId>;
  std::map<V, int> dist;
  V start{side == Side::Buyer ? 0 : 1, x};
  dist[start] = 0;
  std::queue<V> q;
  q.push(start);
  while (!q.empty()) {
    auto [s, v] = q.front();
    q.pop();
    int d = dist[{s, v}];
    if (d >= 2 * n) continue;
    std::set<AgentId> next = s == 0 ? sellers_of_buyer(index, v)
                                    : buyers_of_seller(index, v);
    for (AgentId u : next) {
      V w{1 - s, u};
      if (!dist.count(w)) {
        dist[w] = d + 1;
        q.push(w);
      }
    }
  }
  std::set<AgentId> out;
  int want = side == Side::Buyer ? 0 : 1;
  for (const auto& [v, d] : dist) {
    if (v.first == want) out.insert(v.second);
  }
  return out;
}

struct UnionFind {
  std::map<int, int> parent;
  int find(int v) {
    if (!parent.count(v)) parent[v] = v;
    return parent[v] == v ? v : parent[v] = find(parent[v]);
  }
  void join(int a, int b) { parent[find(a)] = find(b); }
};

std::vector<std::pair<AgentId, AgentId>> random_edges(SplitMix64& rng,
                                                      int buyers, int sellers,
                                                      double density) {
  std::vector<std::pair<AgentId, AgentId>> edges;
  for (int i = 0; i < buyers; ++i) {
    for (int j = 0; j < sellers; ++j) {
      if (rng.uniform() < density) edges.push_back({i, j});
    }
  }
  return edges;
}

}  // namespace

TEST_CASE("projections recover buyer and seller neighborhoods") {
  // The two-seller appendix-style adjacency.
  auto m = edge_market({{3, 1}, {4, 1}, {5, 1}, {4, 2}, {5, 2}, {6, 2}}, 3);
  auto index = active_index(m);
  CHECK(sellers_of_buyer(index, 4) == std::set<AgentId>{1, 2});
  CHECK(sellers_of_buyer(index, 3) == std::set<AgentId>{1});
  CHECK(sellers_of_buyer(index, 99).empty());
  CHECK(buyers_of_seller(index, 1) == std::set<AgentId>{3, 4, 5});
  CHECK(buyers_of_seller(index, 2) == std::set<AgentId>{4, 5, 6});
  CHECK(buyers_of_seller(index, 0).empty());

  for (auto [i, j] : index.pairs) {
    CHECK(sellers_of_buyer(index, i).count(j) == 1);
    CHECK(buyers_of_seller(index, j).count(i) == 1);
  }
}

TEST_CASE("one-hop influence shells") {
  auto m = edge_market({{3, 1}, {4, 1}, {5, 1}, {4, 2}, {5, 2}, {6, 2}}, 3);
  auto index = active_index(m);
  CHECK(lambda_primary(index, Side::Seller, 1).members ==
        std::set<AgentId>{1, 2});
  CHECK(lambda_primary(index, Side::Buyer, 3).members ==
        std::set<AgentId>{3, 4, 5});
  // An isolated vertex influences itself.
  CHECK(lambda_primary(index, Side::Seller, 0).members ==
        std::set<AgentId>{0});
}

TEST_CASE("n-hop shells on a path-shaped market") {
  // B1 - S1 - B2 - S2 - B3 - S3
  auto m = edge_market({{1, 1}, {2, 1}, {2, 2}, {3, 2}, {3, 3}}, 4);
  auto index = active_index(m);
  CHECK(lambda_n(index, Side::Seller, 1, 0).members == std::set<AgentId>{1});
  CHECK(lambda_n(index, Side::Seller, 1, 1).members ==
        std::set<AgentId>{1, 2});
  CHECK(lambda_n(index, Side::Seller, 1, 2).members ==
        std::set<AgentId>{1, 2, 3});
  CHECK(component_closure(index, Side::Seller, 1).members ==
        std::set<AgentId>{1, 2, 3});
  CHECK(component_closure(index, Side::Buyer, 1).members ==
        std::set<AgentId>{1, 2, 3});
}

TEST_CASE("fuzz: parity, monotone growth, and pathwise equivalence") {
  SplitMix64 rng(21);
  for (int it = 0; it < 400; ++it) {
    int buyers = rng.uniform_int(1, 12);
    int sellers = rng.uniform_int(1, 8);
    auto m = edge_market(random_edges(rng, buyers, sellers, rng.uniform()),
                         sellers);
    auto index = active_index(m);
    Side side = it % 2 == 0 ? Side::Buyer : Side::Seller;
    AgentId x = side == Side::Buyer ? rng.uniform_int(0, buyers - 1)
                                    : rng.uniform_int(0, sellers - 1);
    std::set<AgentId> prev;
    for (int n = 0; n <= 4; ++n) {
      auto shell = lambda_n(index, side, x, n);
      CHECK(shell.members == bfs_shell(index, side, x, n));
      if (n == 0) {
        CHECK(shell.members == std::set<AgentId>{x});
      } else {
        CHECK(std::includes(shell.members.begin(), shell.members.end(),
                            prev.begin(), prev.end()));
      }
      prev = shell.members;
    }
  }
}

TEST_CASE("fuzz: component closure equals a union-find oracle") {
  SplitMix64 rng(22);
  for (int it = 0; it < 300; ++it) {
    int buyers = rng.uniform_int(1, 50);
    int sellers = rng.uniform_int(1, 50);
    auto edges = random_edges(rng, buyers, sellers, rng.uniform() * 0.2);
    auto m = edge_market(edges, sellers);
    auto index = active_index(m);

    UnionFind uf;
    const int kSellerOffset = 1000;
    for (auto [i, j] : edges) uf.join(i, kSellerOffset + j);

    Side side = it % 2 == 0 ? Side::Buyer : Side::Seller;
    AgentId x = side == Side::Buyer ? rng.uniform_int(0, buyers - 1)
                                    : rng.uniform_int(0, sellers - 1);
    int root = uf.find(side == Side::Buyer ? x : kSellerOffset + x);
    std::set<AgentId> expected{x};
    for (auto [i, j] : edges) {
      if (uf.find(i) == root && side == Side::Buyer) expected.insert(i);
      if (uf.find(kSellerOffset + j) == root && side == Side::Seller) {
        expected.insert(j);
      }
    }
    CHECK(component_closure(index, side, x).members == expected);
  }
}

TEST_CASE("ladder tuples on the reference two-seller market") {
  auto report = ladder_experiment();
  REQUIRE(report.tuples.size() == 2);
  CHECK(report.violations == 0);
  CHECK(report.unique_seller_pairs == 1);
  CHECK(report.margins == std::array<double, 3>{0.0, 36.0, 0.0});

  // Single-seller market: no bridged pairs, empty tuple list.
  auto single = edge_market({{0, 0}, {1, 0}}, 1);
  single.allocations[0] = allocate(single.sellers[0]);
  CHECK(ladder_tuples(single).empty());
}

TEST_CASE("market shift detection") {
  auto before = edge_market({{0, 0}, {1, 0}}, 1);
  before.sellers[0].capacity = 10.0;
  before.sellers[0].upsert_bid({0, 6.0, 5.0});
  before.sellers[0].upsert_bid({1, 4.0, 3.0});

  CHECK(detect_market_shift(before, before).empty());

  auto after = before;
  after.sellers[0].upsert_bid({0, 2.0, 5.0});  // quantity cut leaves slack
  auto shortfall = detect_market_shift(before, after);
  REQUIRE(shortfall.size() == 1);
  CHECK(shortfall[0].kind == ShiftKind::DemandShortfall);
  CHECK(shortfall[0].buyer == 0);
  CHECK(shortfall[0].seller == 0);

  auto overtake = before;
  overtake.sellers[0].upsert_bid({1, 4.0, 5.5});  // outranks winning buyer 0
  auto events = detect_market_shift(before, overtake);
  REQUIRE(events.size() == 1);
  CHECK(events[0].kind == ShiftKind::BidOvertake);
  CHECK(events[0].buyer == 1);

  auto other_universe = edge_market({{0, 0}}, 2);
  CHECK_THROWS_AS(detect_market_shift(before, other_universe),
                  std::invalid_argument);
}

TEST_CASE("local monotonicity over a trace") {
  auto report = ladder_experiment();
  std::vector<MarketState> trace{report.run.final_state,
                                 report.run.final_state};
  CHECK(check_local_monotonicity(trace).ok);

  auto broken = trace;
  broken[1].sellers.begin()->second.reserve -= 1.0;
  broken[1].sellers.begin()->second.reserve -= 1.0;
  auto res = check_local_monotonicity(broken);
  CHECK(!res.ok);
  CHECK(res.violation_index == 1);
}

TEST_CASE("saturation predicate basics") {
  InfluenceShell empty_shell;
  empty_shell.side = Side::Seller;
  empty_shell.depth = 1;
  auto report = ladder_experiment();
  DeviationGrid grid;
  CHECK(is_saturated(report.run.final_state, empty_shell, grid, 2.5)
            .saturated);
}

#include "psp/cli.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

namespace psp {

namespace {

using nlohmann::json;

constexpr const char* kToolVersion = "psp-sim 1.0.0";

std::string reserve_rule_name(ReserveRule rule) {
  switch (rule) {
    case ReserveRule::Reactive: return "reactive";
    case ReserveRule::Clearing: return "clearing";
    case ReserveRule::UnderlineMinusEps: return "underline_minus_eps";
  }
  return "reactive";
}

ReserveRule parse_reserve_rule(const std::string& name) {
  if (name == "reactive") return ReserveRule::Reactive;
  if (name == "clearing") return ReserveRule::Clearing;
  if (name == "underline_minus_eps") return ReserveRule::UnderlineMinusEps;
  throw ConfigError("engine.reserve_rule: unknown rule '" + name + "'");
}

json config_to_json(const AppConfig& c) {
  return json{
      {"market",
       {{"preset", c.preset},
        {"buyers", c.market.buyers},
        {"sellers", c.market.sellers},
        {"capacities", c.market.capacities},
        {"connectivity_percent", c.market.connectivity_percent},
        {"q_bar_range", c.market.q_bar_range},
        {"kappa_range", c.market.kappa_range},
        {"budget_range", c.market.budget_range},
        {"epsilon", c.market.epsilon},
        {"initial_reserve", c.market.initial_reserve}}},
      {"engine",
       {{"max_steps", c.engine.max_steps},
        {"epsilon", c.engine.epsilon},
        {"convergence_window", c.engine.convergence_window},
        {"reserve_rule", reserve_rule_name(c.engine.reserve_rule)}}},
      {"experiment",
       {{"base_seed", c.market.base_seed},
        {"levels", c.levels},
        {"seeds_per_level", c.seeds_per_level},
        {"jobs", c.jobs}}}};
}

template <typename T>
void read_field(const json& section, const std::string& section_name,
                const std::string& key, T& out) {
  if (!section.contains(key)) return;
  try {
    out = section.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section_name + "." + key + ": " + e.what());
  }
}

void validate(const AppConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (c.preset != "random" && c.preset != "ladder") {
    fail("market.preset: must be 'random' or 'ladder'");
  }
  if (c.market.buyers <= 0) fail("market.buyers: must be positive");
  if (c.market.sellers <= 0) fail("market.sellers: must be positive");
  if (c.market.capacities.empty()) fail("market.capacities: must be nonempty");
  for (double q : c.market.capacities) {
    if (q <= 0.0) fail("market.capacities: entries must be positive");
  }
  if (c.market.connectivity_percent < 0.0 ||
      c.market.connectivity_percent > 100.0) {
    fail("market.connectivity_percent: outside [0, 100]");
  }
  auto range_ok = [](const std::array<double, 2>& r) {
    return r[0] > 0.0 && r[0] <= r[1];
  };
  if (!range_ok(c.market.q_bar_range)) fail("market.q_bar_range: invalid");
  if (!range_ok(c.market.kappa_range)) fail("market.kappa_range: invalid");
  if (!range_ok(c.market.budget_range)) fail("market.budget_range: invalid");
  if (c.market.epsilon <= 0.0) fail("market.epsilon: must be positive");
  if (c.market.initial_reserve < 0.0) {
    fail("market.initial_reserve: must be nonnegative");
  }
  if (c.engine.max_steps <= 0) fail("engine.max_steps: must be positive");
  if (c.engine.epsilon <= 0.0) fail("engine.epsilon: must be positive");
  if (c.engine.convergence_window <= 0) {
    fail("engine.convergence_window: must be positive");
  }
  if (c.levels.empty()) fail("experiment.levels: must be nonempty");
  for (double s : c.levels) {
    if (s < 0.0 || s > 100.0) fail("experiment.levels: outside [0, 100]");
  }
  if (c.seeds_per_level <= 0) {
    fail("experiment.seeds_per_level: must be positive");
  }
  if (c.jobs <= 0) fail("experiment.jobs: must be positive");
}

json tuple_to_json(const LadderTuple& t) {
  return json{{"seller_l", t.seller_l}, {"buyer_k", t.buyer_k},
              {"seller_j", t.seller_j}, {"buyer_i", t.buyer_i},
              {"p_star_l", t.p_star_l}, {"p_k", t.p_k},
              {"p_star_j", t.p_star_j}, {"p_i", t.p_i},
              {"violated", t.violated}, {"margins", t.margins}};
}

json shift_to_json(const ShiftEvent& e) {
  return json{{"kind", e.kind == ShiftKind::DemandShortfall
                           ? "demand_shortfall"
                           : "bid_overtake"},
              {"seller", e.seller},
              {"buyer", e.buyer},
              {"round", e.round},
              {"detail", e.detail}};
}

json trace_to_json(const TauTrace& trace) {
  json out = json::array();
  for (const auto& s : trace.steps) {
    out.push_back(json{{"tau", s.tau}, {"seller", s.seller},
                       {"buyer", s.buyer}, {"awarded", s.awarded},
                       {"payment", s.payment},
                       {"reserve_after", s.reserve_after}});
  }
  return out;
}

json seller_summary(const MarketState& market) {
  json out = json::object();
  for (const auto& [j, book] : market.sellers) {
    json row{{"capacity", book.capacity}, {"reserve", book.reserve}};
    auto it = market.allocations.find(j);
    row["clearing_price"] =
        it != market.allocations.end() ? it->second.clearing_price
                                       : book.reserve;
    if (auto stats = seller_stats(market, j)) {
      row["expected_revenue"] = stats->expected_revenue;
      row["revenue_variance"] = stats->revenue_variance;
      row["total_awarded"] = stats->total_awarded;
    }
    out[std::to_string(j)] = row;
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  out << body;
}

void write_manifest(const std::filesystem::path& out_dir,
                    const std::string& command, const AppConfig& config,
                    std::uint64_t seed,
                    const std::vector<std::string>& artifacts,
                    double wall_time_ms) {
  json manifest{{"command", command},
                {"config", config_to_json(config)},
                {"seed", seed},
                {"artifacts", artifacts},
                {"tool_version", kToolVersion},
                {"wall_time_ms", wall_time_ms}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

MarketState market_from_json(const json& doc) {
  MarketState market;
  for (const auto& s : doc.at("sellers")) {
    SellerBook book;
    book.seller_id = s.at("id").get<AgentId>();
    book.capacity = s.at("capacity").get<double>();
    book.reserve = s.value("reserve", 0.0);
    book.epsilon = s.value("epsilon", 0.1);
    for (const auto& b : s.value("bids", json::array())) {
      book.upsert_bid({b.at("buyer").get<AgentId>(),
                       b.at("quantity").get<double>(),
                       b.at("price").get<double>()});
      market.adjacency[b.at("buyer").get<AgentId>()].insert(book.seller_id);
    }
    market.sellers[book.seller_id] = book;
  }
  for (const auto& [i, sellers] : market.adjacency) {
    BuyerProfile profile;
    profile.buyer_id = i;
    profile.q_bar = 1.0;
    profile.kappa = 1.0;
    market.buyers[i] = profile;
  }
  return market;
}

}  // namespace

AppConfig default_config() {
  AppConfig c;
  for (int s = 0; s <= 100; s += 10) c.levels.push_back(s);
  return c;
}

AppConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config: " + std::string(e.what()));
  }

  AppConfig c = default_config();
  if (doc.contains("market")) {
    const json& m = doc.at("market");
    read_field(m, "market", "preset", c.preset);
    read_field(m, "market", "buyers", c.market.buyers);
    read_field(m, "market", "sellers", c.market.sellers);
    read_field(m, "market", "capacities", c.market.capacities);
    read_field(m, "market", "connectivity_percent",
               c.market.connectivity_percent);
    read_field(m, "market", "q_bar_range", c.market.q_bar_range);
    read_field(m, "market", "kappa_range", c.market.kappa_range);
    read_field(m, "market", "budget_range", c.market.budget_range);
    read_field(m, "market", "epsilon", c.market.epsilon);
    read_field(m, "market", "initial_reserve", c.market.initial_reserve);
  }
  if (doc.contains("engine")) {
    const json& e = doc.at("engine");
    read_field(e, "engine", "max_steps", c.engine.max_steps);
    read_field(e, "engine", "epsilon", c.engine.epsilon);
    read_field(e, "engine", "convergence_window", c.engine.convergence_window);
    if (e.contains("reserve_rule")) {
      c.engine.reserve_rule =
          parse_reserve_rule(e.at("reserve_rule").get<std::string>());
    }
  }
  if (doc.contains("experiment")) {
    const json& x = doc.at("experiment");
    read_field(x, "experiment", "base_seed", c.market.base_seed);
    read_field(x, "experiment", "levels", c.levels);
    read_field(x, "experiment", "seeds_per_level", c.seeds_per_level);
    read_field(x, "experiment", "jobs", c.jobs);
  }
  validate(c);
  return c;
}

void apply_override(AppConfig& c, const std::string& assignment) {
  auto eq = assignment.find('=');
  if (eq == std::string::npos) {
    throw ConfigError("override '" + assignment + "': expected key=value");
  }
  std::string key = assignment.substr(0, eq);
  std::string value = assignment.substr(eq + 1);
  auto as_double = [&] {
    try {
      return std::stod(value);
    } catch (const std::exception&) {
      throw ConfigError("override " + key + ": not a number: " + value);
    }
  };
  auto as_int = [&] {
    try {
      return std::stoi(value);
    } catch (const std::exception&) {
      throw ConfigError("override " + key + ": not an integer: " + value);
    }
  };

  if (key == "market.preset") c.preset = value;
  else if (key == "market.buyers") c.market.buyers = as_int();
  else if (key == "market.sellers") c.market.sellers = as_int();
  else if (key == "market.connectivity_percent")
    c.market.connectivity_percent = as_double();
  else if (key == "market.epsilon") c.market.epsilon = as_double();
  else if (key == "market.initial_reserve")
    c.market.initial_reserve = as_double();
  else if (key == "engine.max_steps") c.engine.max_steps = as_int();
  else if (key == "engine.epsilon") c.engine.epsilon = as_double();
  else if (key == "engine.convergence_window")
    c.engine.convergence_window = as_int();
  else if (key == "engine.reserve_rule")
    c.engine.reserve_rule = parse_reserve_rule(value);
  else if (key == "experiment.base_seed")
    c.market.base_seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "experiment.seeds_per_level") c.seeds_per_level = as_int();
  else if (key == "experiment.jobs") c.jobs = as_int();
  else throw ConfigError("override: unknown key '" + key + "'");
  validate(c);
}

std::filesystem::path default_out_dir() {
  if (const char* env = std::getenv("PSP_OUT_DIR")) {
    return std::filesystem::path(env);
  }
  return std::filesystem::path("out");
}

int cmd_run(const AppConfig& config, std::uint64_t seed,
            const std::filesystem::path& out_dir) {
  auto start = std::chrono::steady_clock::now();

  MarketState market = config.preset == "ladder"
                           ? ladder_market()
                           : generate_market(config.market, seed);
  EngineConfig engine = config.engine;
  engine.rng_seed = seed;
  engine.record_snapshots = true;
  if (config.preset == "ladder") engine.schedule_buyers = false;
  RunResult res = run(market, engine);

  auto tuples = ladder_tuples(res.final_state);
  int violations = 0;
  for (const auto& t : tuples) {
    if (t.violated) ++violations;
  }

  json report{{"command", "run"},
              {"seed", seed},
              {"preset", config.preset},
              {"converged", res.converged},
              {"events_processed", res.events_processed},
              {"sellers", seller_summary(res.final_state)},
              {"tuples", json::array()},
              {"margins", min_margins(tuples)},
              {"violations", violations},
              {"shifts", json::array()},
              {"trace", trace_to_json(res.trace)}};
  for (const auto& t : tuples) report["tuples"].push_back(tuple_to_json(t));
  for (const auto& e : res.shifts) report["shifts"].push_back(shift_to_json(e));

  std::ostringstream csv;
  csv << "step,seller,reserve,clearing_price,total_awarded\n";
  for (std::size_t n = 0; n < res.snapshots.size(); ++n) {
    for (const auto& [j, book] : res.snapshots[n].sellers) {
      auto it = res.snapshots[n].allocations.find(j);
      double clearing = it != res.snapshots[n].allocations.end()
                            ? it->second.clearing_price
                            : book.reserve;
      double awarded = it != res.snapshots[n].allocations.end()
                           ? it->second.total_awarded()
                           : 0.0;
      csv << n << "," << j << "," << book.reserve << "," << clearing << ","
          << awarded << "\n";
    }
  }

  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  write_text(out_dir / "states.csv", csv.str());
  double ms = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - start)
                  .count();
  write_manifest(out_dir, "run", config, seed,
                 {"report.json", "states.csv", "manifest.json"}, ms);
  return res.converged ? kExitOk : kExitStepLimit;
}

int cmd_ladder_check(const std::optional<std::filesystem::path>& market_file,
                     std::ostream& out) {
  MarketState market;
  if (market_file) {
    std::ifstream in(*market_file);
    if (!in) {
      out << "error: cannot open " << market_file->string() << "\n";
      return kExitConfigError;
    }
    try {
      market = market_from_json(json::parse(in));
    } catch (const std::exception& e) {
      out << "error: " << e.what() << "\n";
      return kExitConfigError;
    }
    EngineConfig engine;
    engine.schedule_buyers = false;
    market = run(market, engine).final_state;
    auto tuples = ladder_tuples(market);
    int violations = 0;
    for (const auto& t : tuples) {
      if (t.violated) ++violations;
    }
    auto m = min_margins(tuples);
    for (const auto& t : tuples) {
      out << "(" << t.seller_l << "," << t.buyer_k << "," << t.seller_j << ","
          << t.buyer_i << ") p*_l=" << t.p_star_l << " p_k=" << t.p_k
          << " p*_j=" << t.p_star_j << " p_i=" << t.p_i
          << (t.violated ? "  VIOLATED" : "") << "\n";
    }
    out << "margins: (" << m[0] << ", " << m[1] << ", " << m[2] << ")\n";
    out << "violations: " << violations << "\n";
    return violations == 0 ? kExitOk : kExitConfigError;
  }

  LadderReport report = ladder_experiment();
  for (const auto& t : report.tuples) {
    out << "(" << t.seller_l << "," << t.buyer_k << "," << t.seller_j << ","
        << t.buyer_i << ") p*_l=" << t.p_star_l << " p_k=" << t.p_k
        << " p*_j=" << t.p_star_j << " p_i=" << t.p_i
        << (t.violated ? "  VIOLATED" : "") << "\n";
  }
  out << "margins: (" << report.margins[0] << ", " << report.margins[1] << ", "
      << report.margins[2] << ")\n";
  out << "violations: " << report.violations << "\n";
  return report.violations == 0 ? kExitOk : kExitConfigError;
}

int cmd_sweep(const AppConfig& config, const std::filesystem::path& out_dir) {
  auto start = std::chrono::steady_clock::now();

  // Runs are independent across levels; level index feeds the seed so the
  // partition over threads cannot change any result.
  std::vector<SweepReport> per_level(config.levels.size());
  auto run_level = [&](std::size_t s) {
    ExperimentSpec spec = config.market;
    spec.base_seed = config.market.base_seed + s;
    per_level[s] = connectivity_sweep(spec, {config.levels[s]},
                                      config.seeds_per_level, config.engine);
  };
  int jobs = std::max(1, config.jobs);
  if (jobs == 1) {
    for (std::size_t s = 0; s < config.levels.size(); ++s) run_level(s);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int t = 0; t < jobs; ++t) {
      pool.emplace_back([&] {
        for (std::size_t s = next.fetch_add(1); s < config.levels.size();
             s = next.fetch_add(1)) {
          run_level(s);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  SweepReport merged;
  std::vector<double> xs, ys;
  for (const auto& part : per_level) {
    merged.rows.insert(merged.rows.end(), part.rows.begin(), part.rows.end());
    for (const auto& [level, gap] : part.gap_series) {
      merged.gap_series.push_back({level, gap});
      xs.push_back(level);
      ys.push_back(gap);
    }
  }
  merged.spearman_level_vs_gap = spearman(xs, ys);

  std::ostringstream csv;
  csv << "level,seed,seller,clearing_price,expected_revenue,revenue_variance,"
         "total_awarded,winners,zero_allocation,opt_out,shared_fraction,"
         "converged\n";
  for (const auto& r : merged.rows) {
    csv << r.level << "," << r.seed << "," << r.seller << ","
        << r.clearing_price << "," << r.expected_revenue << ","
        << r.revenue_variance << "," << r.total_awarded << "," << r.winners
        << "," << r.zero_allocation << "," << r.opt_out << ","
        << r.shared_fraction << "," << (r.converged ? 1 : 0) << "\n";
  }

  json report{{"command", "sweep"},
              {"levels", config.levels},
              {"seeds_per_level", config.seeds_per_level},
              {"gap_series", json::array()},
              {"spearman_level_vs_gap", merged.spearman_level_vs_gap}};
  for (const auto& [level, gap] : merged.gap_series) {
    report["gap_series"].push_back(json{{"level", level}, {"mean_gap", gap}});
  }

  std::filesystem::create_directories(out_dir);
  write_text(out_dir / "sweep.csv", csv.str());
  write_text(out_dir / "report.json", report.dump(2) + "\n");
  double ms = std::chrono::duration<double, std::milli>(
                  std::chrono::steady_clock::now() - start)
                  .count();
  write_manifest(out_dir, "sweep", config, config.market.base_seed,
                 {"sweep.csv", "report.json", "manifest.json"}, ms);
  return kExitOk;
}

int cmd_shift_demo(double epsilon, double delta, std::ostream& out) {
  ScenarioReport report = appendix_scenario(epsilon, delta);
  out << "round tau seller buyer quantity payment reserve_after\n";
  for (const auto& s : report.steps) {
    out << s.round << " " << s.tau << " L" << s.seller << " B" << s.buyer
        << " " << s.quantity << " " << s.payment << " " << s.reserve_after
        << "\n";
  }
  for (const auto& e : report.shifts) {
    out << "shift: "
        << (e.kind == ShiftKind::BidOvertake ? "bid_overtake"
                                             : "demand_shortfall")
        << " seller=L" << e.seller << " buyer=B" << e.buyer << " ("
        << e.detail << ")\n";
  }
  out << "coupled rebid quantity: " << report.coupled_rebid_quantity << "\n";

  // Verify the round-1 payment pattern symbolically against epsilon.
  auto close = [](double a, double b) { return std::abs(a - b) < 1e-9; };
  std::map<std::pair<int, std::pair<int, int>>, double> payments;
  for (const auto& s : report.steps) {
    if (s.round == 1) payments[{s.seller, {s.round, s.tau}}] = s.payment;
  }
  bool ok = report.steps.size() >= 6 &&
            close(payments[{1, {1, 1}}], 1.8) &&
            close(payments[{1, {1, 2}}], 1.5) &&
            close(payments[{1, {1, 3}}], 1.5 + epsilon) &&
            close(payments[{2, {1, 1}}], 1.7) &&
            close(payments[{2, {1, 2}}], 1.4) &&
            close(payments[{2, {1, 3}}], 1.4 + epsilon);
  return ok ? kExitOk : kExitConfigError;
}

int cli_main(int argc, char** argv) {
  CLI::App app{"Decentralized multi-auction market simulator"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_flag = 0;
  bool seed_set = false;
  int max_steps_flag = 0;
  double epsilon_flag = 0.0;
  int jobs_flag = 0;
  std::string out_dir_flag;
  std::vector<std::string> overrides;
  std::string market_file;
  double demo_epsilon = 0.1;
  double demo_delta = 0.1;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed_flag, "run seed")
        ->each([&](const std::string&) { seed_set = true; });
    cmd->add_option("--max-steps", max_steps_flag, "engine step limit");
    cmd->add_option("--epsilon", epsilon_flag, "shared epsilon");
    cmd->add_option("--jobs", jobs_flag, "parallel sweep workers");
    cmd->add_option("--out-dir", out_dir_flag, "artifact directory");
    cmd->add_option("--override", overrides, "section.key=value override");
  };

  CLI::App* run_cmd = app.add_subcommand("run", "single seeded simulation");
  add_common(run_cmd);
  CLI::App* ladder_cmd =
      app.add_subcommand("ladder-check", "evaluate the price-ladder chain");
  ladder_cmd->add_option("--market", market_file, "market JSON file");
  CLI::App* sweep_cmd = app.add_subcommand("sweep", "connectivity sweep");
  add_common(sweep_cmd);
  CLI::App* demo_cmd =
      app.add_subcommand("shift-demo", "two-round market-shift scenario");
  demo_cmd->add_option("--epsilon", demo_epsilon, "reserve increment");
  demo_cmd->add_option("--delta", demo_delta, "overtake price increment");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfigError;
  }

  try {
    AppConfig config =
        config_path.empty() ? default_config() : load_config(config_path);
    if (max_steps_flag > 0) config.engine.max_steps = max_steps_flag;
    if (epsilon_flag > 0.0) {
      config.engine.epsilon = epsilon_flag;
      config.market.epsilon = epsilon_flag;
    }
    if (jobs_flag > 0) config.jobs = jobs_flag;
    for (const auto& o : overrides) apply_override(config, o);

    std::filesystem::path out_dir =
        out_dir_flag.empty() ? default_out_dir()
                             : std::filesystem::path(out_dir_flag);
    std::uint64_t seed = seed_set ? seed_flag : config.market.base_seed;

    if (run_cmd->parsed()) return cmd_run(config, seed, out_dir);
    if (ladder_cmd->parsed()) {
      std::optional<std::filesystem::path> file;
      if (!market_file.empty()) file = market_file;
      return cmd_ladder_check(file, std::cout);
    }
    if (sweep_cmd->parsed()) return cmd_sweep(config, out_dir);
    if (demo_cmd->parsed()) {
      return cmd_shift_demo(demo_epsilon, demo_delta, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigError;
  }
  return kExitConfigError;
}

}  // namespace psp

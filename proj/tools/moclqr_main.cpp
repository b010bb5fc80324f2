// Command-line planner for the mixed-observable constrained LQR problem.
//
//   moclqr plan     --scenario s.json [--nb K] [--horizon N] [--out tree.json]
//                   [--workers W] [--budget-s S]
//   moclqr table1   --scenario s.json --nb-list 12,15,20,30 [--out table.csv]
//   moclqr simulate --scenario s.json --rollouts M --seed S [--out rollouts.json]
//   moclqr oracle   --scenario s.json
//
// Exit codes: 0 success, 2 parse error, 3 validation error, 4 infeasible,
// 5 budget exceeded (1 for any other failure, e.g. a failed oracle check).

#include "moclqr/model.hpp"
#include "moclqr/simulate.hpp"
#include "moclqr/solver.hpp"
#include "moclqr/tree_json.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace {

using namespace moclqr;

constexpr int kExitParse = 2;
constexpr int kExitValidation = 3;
constexpr int kExitInfeasible = 4;
constexpr int kExitBudget = 5;

std::string fmt(double value) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", value);
  return buf;
}

// Scenario adjustments shared by all subcommands.  A horizon, branch
// interval, initial belief, or per-region symmetric confusion value can be
// overridden without editing the scenario file; the result is re-validated.
struct Overrides {
  int nb = 0;
  int horizon = 0;
  std::string b0;                // comma-separated belief entries
  std::vector<double> p_values;  // aligned with --p1..--p4; NaN = keep
  Overrides() : p_values(4, std::numeric_limits<double>::quiet_NaN()) {}
};

void add_override_options(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--nb", o.nb, "override the branch interval N_b");
  cmd->add_option("--horizon", o.horizon, "override the horizon N");
  cmd->add_option("--b0", o.b0, "override the initial belief, e.g. 0.5,0.5");
  for (int i = 0; i < 4; ++i)
    cmd->add_option("--p" + std::to_string(i + 1), o.p_values[i],
                    "override region " + std::to_string(i + 1) +
                        "'s table with a symmetric 2x2 confusion matrix");
}

Vec parse_comma_vector(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      values.push_back(std::stod(item));
    } catch (const std::exception&) {
      throw ParseError("cannot parse '" + item + "' as a number");
    }
  }
  if (values.empty()) throw ParseError("empty vector override");
  Vec v(static_cast<int>(values.size()));
  for (int i = 0; i < v.size(); ++i) v(i) = values[i];
  return v;
}

void apply_overrides(ScenarioSpec& spec, const Overrides& o) {
  if (o.horizon > 0) spec.horizon.N = o.horizon;
  if (o.nb > 0) spec.horizon.Nb = o.nb;
  if (!o.b0.empty()) spec.b0 = parse_comma_vector(o.b0);
  for (int i = 0; i < 4; ++i) {
    if (std::isnan(o.p_values[i])) continue;
    if (spec.obs.num_env != 2 || spec.obs.num_obs != 2)
      throw ValidationError("--p overrides require a 2x2 observation model");
    if (i >= spec.num_regions())
      throw ValidationError("--p" + std::to_string(i + 1) + ": no such region");
    const double p = o.p_values[i];
    Mat table(2, 2);
    table << p, 1.0 - p, 1.0 - p, p;
    spec.obs.tables[i] = table;
  }
  validate(spec);
}

struct SolveFlags {
  int workers = 1;
  double budget_s = std::numeric_limits<double>::infinity();
};

void add_solve_options(CLI::App* cmd, SolveFlags& f) {
  cmd->add_option("--workers", f.workers, "parallel QP evaluations per wave")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--budget-s", f.budget_s, "wall-clock budget in seconds")
      ->check(CLI::PositiveNumber);
}

SolveOptions make_options(const SolveFlags& f) {
  SolveOptions opts;
  opts.workers = f.workers;
  opts.budget_s = f.budget_s;
  return opts;
}

void print_summary(const Solution& sol) {
  std::printf("cost=%s nodes=%lld qps=%lld time=%.3f gap=%s\n", fmt(sol.cost).c_str(),
              static_cast<long long>(sol.stats.bnb_nodes),
              static_cast<long long>(sol.stats.qps_solved), sol.stats.wall_time_s,
              fmt(sol.stats.gap).c_str());
}

int finish_solor_report(const ScenarioSpec& spec, const Solution& sol,
                        const std::string& out_path) {
  if (sol.status == SolveStatus::Infeasible) {
    std::fprintf(stderr, "no feasible plan exists for this scenario\n");
    return kExitInfeasible;
  }
  if (std::isfinite(sol.cost) && !out_path.empty()) save_tree_json(out_path, spec, sol);
  print_summary(sol);
  if (sol.status == SolveStatus::BudgetExceeded) {
    std::fprintf(stderr, "budget exceeded; best incumbent reported with its bound gap\n");
    return kExitBudget;
  }
  return 0;
}

int cmd_plan(const std::string& scenario_path, const Overrides& o, const SolveFlags& f,
             const std::string& out_path) {
  ScenarioSpec spec = load_scenario(scenario_path);
  apply_overrides(spec, o);
  const Solution sol = solve_micp(spec, make_options(f));
  return finish_solor_report(spec, sol, out_path);
}

int cmd_table1(const std::string& scenario_path, const Overrides& o, const SolveFlags& f,
               const std::string& nb_list, const std::string& out_path) {
  ScenarioSpec base = load_scenario(scenario_path);
  apply_overrides(base, o);

  std::vector<int> nbs;
  {
    std::stringstream ss(nb_list);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        nbs.push_back(std::stoi(item));
      } catch (const std::exception&) {
        throw ParseError("--nb-list: cannot parse '" + item + "' as an integer");
      }
    }
  }
  if (nbs.empty()) throw ParseError("--nb-list is empty");

  std::string csv = "Nb,P,cost,time_s,gap\n";
  std::fputs(csv.c_str(), stdout);
  for (int nb : nbs) {
    ScenarioSpec spec = base;
    spec.horizon.Nb = nb;
    validate(spec);
    const Solution sol = solve_micp(spec, make_options(f));
    // A budget-terminated row records the incumbent and its bound gap; it
    // does not abort the remaining rows.
    const std::string row = std::to_string(nb) + "," + std::to_string(spec.horizon.segments()) +
                            "," + fmt(sol.cost) + "," + fmt(sol.stats.wall_time_s) + "," +
                            fmt(sol.stats.gap) + "\n";
    std::fputs(row.c_str(), stdout);
    std::fflush(stdout);
    csv += row;
  }
  if (!out_path.empty()) {
    std::ofstream file(out_path, std::ios::binary);
    if (!file) throw ParseError("cannot open " + out_path + " for writing");
    file << csv;
  }
  return 0;
}

void save_rollouts_json(const std::string& path, const SimulationResult& result) {
  std::string out;
  out.reserve(1 << 20);
  const SimulationSummary& s = result.summary;
  out += "{\n  \"seed\": " + std::to_string(s.seed) +
         ",\n  \"rollouts\": " + std::to_string(s.rollouts) +
         ",\n  \"planner_cost\": " + fmt(s.planner_cost) +
         ",\n  \"mean_cost\": " + fmt(s.mean_cost) +
         ",\n  \"std_error\": " + fmt(s.std_error) + ",\n  \"records\": [\n";
  auto append_ints = [&out](const std::vector<int>& v) {
    out += '[';
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(v[i]);
    }
    out += ']';
  };
  auto append_vecs = [&out](const std::vector<Vec>& vs) {
    out += '[';
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (i) out += ", ";
      out += '[';
      for (int j = 0; j < vs[i].size(); ++j) {
        if (j) out += ", ";
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", vs[i](j));
        out += buf;
      }
      out += ']';
    }
    out += ']';
  };
  for (const RolloutRecord& rec : result.records) {
    out += "    {\"env\": " + std::to_string(rec.env) + ", \"observations\": ";
    append_ints(rec.observations);
    out += ", \"nodes\": ";
    append_ints(rec.node_path);
    out += ", \"cost\": " + fmt(rec.cost) + ",\n     \"x\": ";
    append_vecs(rec.x);
    out += ",\n     \"u\": ";
    append_vecs(rec.u);
    out += "},\n";
  }
  if (!result.records.empty()) out.erase(out.size() - 2);
  out += "\n  ]\n}\n";

  std::ofstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path + " for writing");
  f << out;
  if (!f) throw ParseError("failed writing " + path);
}

int cmd_simulate(const std::string& scenario_path, const Overrides& o, const SolveFlags& f,
                 int rollouts, std::uint64_t seed, const std::string& out_path) {
  ScenarioSpec spec = load_scenario(scenario_path);
  apply_overrides(spec, o);
  const Solution sol = solve_micp(spec, make_options(f));
  if (sol.status == SolveStatus::Infeasible) {
    std::fprintf(stderr, "no feasible plan exists for this scenario\n");
    return kExitInfeasible;
  }
  if (sol.status == SolveStatus::BudgetExceeded) {
    std::fprintf(stderr, "budget exceeded before a certified plan was available\n");
    return kExitBudget;
  }
  const SimulationResult result = simulate_rollouts(spec, sol.tree, rollouts, seed);
  if (!out_path.empty()) save_rollouts_json(out_path, result);
  std::printf("mean=%s stderr=%s planner=%s rollouts=%d\n",
              fmt(result.summary.mean_cost).c_str(), fmt(result.summary.std_error).c_str(),
              fmt(result.summary.planner_cost).c_str(), result.summary.rollouts);
  return 0;
}

int cmd_oracle(const std::string& scenario_path, const Overrides& o, const SolveFlags& f,
               bool corrupt_weight) {
  ScenarioSpec spec = load_scenario(scenario_path);
  apply_overrides(spec, o);
  const SolveOptions opts = make_options(f);

  const Solution sol = solve_micp(spec, opts);
  if (sol.status == SolveStatus::Infeasible) {
    std::fprintf(stderr, "no feasible plan exists for this scenario\n");
    return kExitInfeasible;
  }
  if (sol.status == SolveStatus::BudgetExceeded) {
    std::fprintf(stderr, "budget exceeded before a certified plan was available\n");
    return kExitBudget;
  }
  const Solution brute = enumerate_oracle(spec, opts);

  RegionAssignment assign = sol.assignment;
  if (corrupt_weight) {
    // Test hook: mis-report the first committed region so the re-evaluation
    // runs with a corrupted weight chain and the cross-check must fail.
    if (spec.num_regions() < 2)
      throw ValidationError("--test-corrupt-weight requires at least two regions");
    assign.region[0] = (assign.region[0] + 1) % spec.num_regions();
  }
  const double reeval = evaluate_cost(spec, sol.tree, assign);

  const double oracle_rel = std::abs(sol.cost - brute.cost) / (1.0 + std::abs(sol.cost));
  const double reeval_rel = std::abs(reeval - sol.cost) / (1.0 + std::abs(sol.cost));
  const bool oracle_ok = oracle_rel <= 1e-6;
  const bool reeval_ok = reeval_rel <= 1e-8;
  std::printf("solver cost=%s\n", fmt(sol.cost).c_str());
  std::printf("oracle cost=%s\n", fmt(brute.cost).c_str());
  std::printf("reeval cost=%s\n", fmt(reeval).c_str());
  std::printf("solver-vs-oracle rel=%s tol=1e-06 %s\n", fmt(oracle_rel).c_str(),
              oracle_ok ? "PASS" : "FAIL");
  std::printf("reeval-vs-solver rel=%s tol=1e-08 %s\n", fmt(reeval_rel).c_str(),
              reeval_ok ? "PASS" : "FAIL");
  return oracle_ok && reeval_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mixed-observable constrained LQR planner"};
  app.require_subcommand(1);

  std::string scenario_path, out_path, nb_list = "12,15,20,30";
  Overrides overrides;
  SolveFlags solve_flags;
  int rollouts = 1000;
  std::uint64_t seed = 0;
  bool corrupt_weight = false;

  CLI::App* plan = app.add_subcommand("plan", "solve one scenario to a trajectory tree");
  plan->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  plan->add_option("--out", out_path, "write the optimal tree as JSON");
  add_override_options(plan, overrides);
  add_solve_options(plan, solve_flags);

  CLI::App* table1 = app.add_subcommand("table1", "solve one scenario for several N_b");
  table1->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  table1->add_option("--nb-list", nb_list, "comma-separated branch intervals");
  table1->add_option("--out", out_path, "write the result table as CSV");
  add_override_options(table1, overrides);
  add_solve_options(table1, solve_flags);

  CLI::App* simulate = app.add_subcommand("simulate", "Monte-Carlo rollouts of the optimal tree");
  simulate->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  simulate->add_option("--rollouts", rollouts, "number of rollouts")->check(CLI::PositiveNumber);
  simulate->add_option("--seed", seed, "base seed of the rollout streams");
  simulate->add_option("--out", out_path, "write per-rollout records as JSON");
  add_override_options(simulate, overrides);
  add_solve_options(simulate, solve_flags);

  CLI::App* oracle = app.add_subcommand("oracle", "cross-check solver, brute force, re-evaluation");
  oracle->add_option("--scenario", scenario_path, "scenario JSON file")->required();
  oracle->add_flag("--test-corrupt-weight", corrupt_weight)->group("");
  add_override_options(oracle, overrides);
  add_solve_options(oracle, solve_flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitParse;
  }

  try {
    if (plan->parsed()) return cmd_plan(scenario_path, overrides, solve_flags, out_path);
    if (table1->parsed())
      return cmd_table1(scenario_path, overrides, solve_flags, nb_list, out_path);
    if (simulate->parsed())
      return cmd_simulate(scenario_path, overrides, solve_flags, rollouts, seed, out_path);
    if (oracle->parsed()) return cmd_oracle(scenario_path, overrides, solve_flags, corrupt_weight);
  } catch (const ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitParse;
  } catch (const ValidationError& e) {
    std::fprintf(stderr, "validation error: %s\n", e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}

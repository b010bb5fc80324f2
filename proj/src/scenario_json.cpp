#include "moclqr/model.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace moclqr {

namespace {

using json = nlohmann::ordered_json;

Mat parse_matrix(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j.front().is_array())
    throw ParseError(name + ": expected a nested array of numbers");
  const int rows = static_cast<int>(j.size());
  const int cols = static_cast<int>(j.front().size());
  Mat m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    const auto& row = j.at(r);
    if (static_cast<int>(row.size()) != cols)
      throw ParseError(name + ": ragged matrix rows");
    for (int c = 0; c < cols; ++c) m(r, c) = row.at(c).get<double>();
  }
  return m;
}

Vec parse_vector(const json& j, const std::string& name) {
  if (!j.is_array()) throw ParseError(name + ": expected an array of numbers");
  Vec v(static_cast<int>(j.size()));
  for (int i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

Polytope parse_polytope(const json& j, const std::string& name) {
  Polytope p;
  p.H = parse_matrix(j.at("H"), name + ".H");
  p.h = parse_vector(j.at("h"), name + ".h");
  return p;
}

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (int r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (int c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Vec& v) {
  json a = json::array();
  for (int i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

json polytope_json(const Polytope& p) {
  return json{{"H", matrix_json(p.H)}, {"h", vector_json(p.h)}};
}

ScenarioSpec from_json(const json& root) {
  ScenarioSpec spec;
  spec.name = root.value("name", std::string{});

  spec.system.A = parse_matrix(root.at("system").at("A"), "system.A");
  spec.system.B = parse_matrix(root.at("system").at("B"), "system.B");
  spec.state_set = parse_polytope(root.at("state_set"), "state_set");
  spec.input_set = parse_polytope(root.at("input_set"), "input_set");

  for (size_t i = 0; i < root.at("regions").size(); ++i) {
    spec.partition.regions.push_back(
        parse_polytope(root.at("regions").at(i), "regions[" + std::to_string(i) + "]"));
  }
  const std::string mode = root.value("coverage_mode", std::string("partition"));
  if (mode == "partition") {
    spec.partition.mode = CoverageMode::Partition;
  } else if (mode == "free-space-disjunction") {
    spec.partition.mode = CoverageMode::FreeSpaceDisjunction;
  } else {
    throw ParseError("coverage_mode: unknown value '" + mode + "'");
  }

  const json& obs = root.at("observation");
  spec.obs.num_obs = obs.at("num_obs").get<int>();
  for (size_t i = 0; i < obs.at("tables").size(); ++i) {
    spec.obs.tables.push_back(
        parse_matrix(obs.at("tables").at(i), "observation.tables[" + std::to_string(i) + "]"));
  }
  spec.obs.num_env = spec.obs.tables.empty() ? 0 : static_cast<int>(spec.obs.tables[0].rows());

  const json& trans = root.at("transition");
  if (trans.is_string() && trans.get<std::string>() == "static") {
    spec.trans = TransitionModel::identity(spec.obs.num_env);
  } else if (trans.is_object() && trans.contains("omega")) {
    spec.trans.omega = parse_matrix(trans.at("omega"), "transition.omega");
    spec.trans.is_static =
        (spec.trans.omega - Mat::Identity(spec.trans.omega.rows(), spec.trans.omega.cols()))
            .cwiseAbs()
            .maxCoeff() == 0.0;
  } else {
    throw ParseError("transition: expected \"static\" or an object with \"omega\"");
  }

  const json& cost = root.at("cost");
  spec.cost.Q = parse_matrix(cost.at("Q"), "cost.Q");
  spec.cost.R = parse_matrix(cost.at("R"), "cost.R");
  spec.cost.QN = parse_matrix(cost.at("QN"), "cost.QN");
  for (size_t e = 0; e < cost.at("goals").size(); ++e) {
    const json& g = cost.at("goals").at(e);
    spec.cost.x_goal.push_back(parse_vector(g.at("xg"), "cost.goals.xg"));
    spec.cost.u_goal.push_back(parse_vector(g.at("ug"), "cost.goals.ug"));
  }

  spec.horizon.N = root.at("horizon").at("N").get<int>();
  spec.horizon.Nb = root.at("horizon").at("Nb").get<int>();
  spec.x0 = parse_vector(root.at("x0"), "x0");
  spec.b0 = parse_vector(root.at("b0"), "b0");

  if (root.contains("obstacles")) {
    for (size_t i = 0; i < root.at("obstacles").size(); ++i) {
      spec.obstacles.push_back(
          parse_polytope(root.at("obstacles").at(i), "obstacles[" + std::to_string(i) + "]"));
    }
  }
  return spec;
}

}  // namespace

ScenarioSpec parse_scenario(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario JSON: ") + e.what());
  }
  ScenarioSpec spec;
  try {
    spec = from_json(root);
  } catch (const json::exception& e) {
    throw ParseError(std::string("scenario JSON: ") + e.what());
  }
  validate(spec);
  return spec;
}

ScenarioSpec load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open scenario file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_scenario(buf.str());
}

std::string scenario_to_json(const ScenarioSpec& spec) {
  json root;
  if (!spec.name.empty()) root["name"] = spec.name;
  root["system"] = {{"A", matrix_json(spec.system.A)}, {"B", matrix_json(spec.system.B)}};
  root["state_set"] = polytope_json(spec.state_set);
  root["input_set"] = polytope_json(spec.input_set);
  json regions = json::array();
  for (const auto& r : spec.partition.regions) regions.push_back(polytope_json(r));
  root["regions"] = std::move(regions);
  root["coverage_mode"] = spec.partition.mode == CoverageMode::Partition
                              ? "partition"
                              : "free-space-disjunction";
  json tables = json::array();
  for (const auto& t : spec.obs.tables) tables.push_back(matrix_json(t));
  root["observation"] = {{"num_obs", spec.obs.num_obs}, {"tables", std::move(tables)}};
  if (spec.trans.is_static) {
    root["transition"] = "static";
  } else {
    root["transition"] = {{"omega", matrix_json(spec.trans.omega)}};
  }
  json goals = json::array();
  for (size_t e = 0; e < spec.cost.x_goal.size(); ++e) {
    goals.push_back(json{{"xg", vector_json(spec.cost.x_goal[e])},
                         {"ug", vector_json(spec.cost.u_goal[e])}});
  }
  root["cost"] = {{"Q", matrix_json(spec.cost.Q)},
                  {"R", matrix_json(spec.cost.R)},
                  {"QN", matrix_json(spec.cost.QN)},
                  {"goals", std::move(goals)}};
  root["horizon"] = {{"N", spec.horizon.N}, {"Nb", spec.horizon.Nb}};
  root["x0"] = vector_json(spec.x0);
  root["b0"] = vector_json(spec.b0);
  if (!spec.obstacles.empty()) {
    json obstacles = json::array();
    for (const auto& o : spec.obstacles) obstacles.push_back(polytope_json(o));
    root["obstacles"] = std::move(obstacles);
  }
  return root.dump(2) + "\n";
}

void save_scenario(const ScenarioSpec& spec, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ParseError("cannot write scenario file: " + path);
  out << scenario_to_json(spec);
}

}  // namespace moclqr

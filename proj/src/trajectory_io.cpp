#include "ope/trajectory_io.hpp"

#include <fstream>
#include <sstream>
#include <string>

namespace ope {

Json state_to_json(const State& x) {
  Json j = Json::object();
  if (x.is_continuous()) {
    j["f"] = std::vector<double>(x.features().begin(), x.features().end());
  } else {
    j["id"] = x.id();
  }
  return j;
}

State state_from_json(const Json& j) {
  if (!j.is_object()) throw InvalidInput("state must be a JSON object");
  if (j.contains("f")) return State::continuous(j.at("f").get<std::vector<double>>());
  if (j.contains("id")) {
    const int id = j.at("id").get<int>();
    return id == -1 ? State::absorbing() : State::discrete(id);
  }
  throw InvalidInput("state needs an \"id\" or \"f\" field");
}

namespace {

Json trajectory_to_json(const Trajectory& traj) {
  Json steps = Json::array();
  for (const Step& s : traj.steps) {
    Json js;
    js["x"] = state_to_json(s.state);
    js["a"] = s.action;
    js["r"] = s.reward;
    js["pb"] = s.behavior_prob;
    steps.push_back(std::move(js));
  }
  Json j;
  j["steps"] = std::move(steps);
  j["terminal"] = traj.terminal ? state_to_json(*traj.terminal) : Json(nullptr);
  return j;
}

Trajectory trajectory_from_json(const Json& j) {
  Trajectory traj;
  for (const Json& js : j.at("steps")) {
    Step s;
    s.state = state_from_json(js.at("x"));
    s.action = js.at("a").get<int>();
    s.reward = js.at("r").get<double>();
    s.behavior_prob = js.at("pb").get<double>();
    traj.steps.push_back(std::move(s));
  }
  if (j.contains("terminal") && !j.at("terminal").is_null()) traj.terminal = state_from_json(j.at("terminal"));
  return traj;
}

}  // namespace

void write_dataset(std::ostream& out, const Dataset& data) {
  Json header;
  header["T"] = data.horizon();
  header["gamma"] = data.gamma;
  header["env"] = data.meta.env;
  header["seed"] = data.meta.seed;
  header["policy"] = data.meta.behavior;
  out << header.dump() << '\n';
  for (const auto& traj : data.trajectories) out << trajectory_to_json(traj).dump() << '\n';
}

Dataset read_dataset(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("empty trajectory file");
  Dataset data;
  int T = 0;
  try {
    const Json header = Json::parse(line);
    T = header.at("T").get<int>();
    data.gamma = header.at("gamma").get<double>();
    data.meta.env = header.value("env", "");
    data.meta.seed = header.value("seed", std::uint64_t{0});
    data.meta.behavior = header.value("policy", "");
    int lineno = 1;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      try {
        data.trajectories.push_back(trajectory_from_json(Json::parse(line)));
      } catch (const nlohmann::json::exception& e) {
        throw InvalidInput("malformed trajectory on line " + std::to_string(lineno) + ": " + e.what());
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw InvalidInput(std::string("malformed trajectory file: ") + e.what());
  }
  data.validate();
  if (data.horizon() != T) throw InvalidInput("header T does not match trajectory length");
  return data;
}

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  write_dataset(out, data);
  if (!out) throw Error("write failed for " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open dataset " + path.string());
  return read_dataset(in);
}

}  // namespace ope

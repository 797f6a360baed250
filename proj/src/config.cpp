#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "ope/harness.hpp"

namespace ope {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto end = comma == std::string_view::npos ? s.size() : comma;
    std::string item = trim(s.substr(start, end - start));
    if (!item.empty()) out.push_back(std::move(item));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw InvalidInput("config: '" + key + "' = '" + value + "': expected " + expected);
}

long long to_int(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const long long v = std::strtoll(value.c_str(), &end, 10);
  if (value.empty() || *end != '\0' || errno == ERANGE) bad_value(key, value, "an integer");
  return v;
}

std::uint64_t to_uint64(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(value.c_str(), &end, 10);
  if (value.empty() || value[0] == '-' || *end != '\0' || errno == ERANGE)
    bad_value(key, value, "a non-negative integer");
  return v;
}

double to_double(const std::string& key, const std::string& value) {
  char* end = nullptr;
  errno = 0;
  const double v = std::strtod(value.c_str(), &end);
  if (value.empty() || *end != '\0' || errno == ERANGE) bad_value(key, value, "a number");
  return v;
}

int to_int32(const std::string& key, const std::string& value) {
  const long long v = to_int(key, value);
  if (v < -2147483647LL || v > 2147483647LL) bad_value(key, value, "a 32-bit integer");
  return static_cast<int>(v);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& fmt) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + fmt(items[i]);
  return out;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (replicates < 2) throw InvalidInput("config: replicates must be at least 2");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw InvalidInput("config: gamma must be in [0, 1]");
  if (estimators.empty()) throw InvalidInput("config: no estimators listed");
  if (!(significance_level > 0.0 && significance_level < 1.0))
    throw InvalidInput("config: significance_level must be in (0, 1)");
  if (threads < 0) throw InvalidInput("config: threads must be non-negative");
  if (is_bandit()) {
    if (dataset.empty()) throw InvalidInput("config: bandit experiments need 'dataset'");
    if (dataset.rfind("blobs:", 0) != 0 && !std::filesystem::exists(dataset))
      throw InvalidInput("config: dataset not found: " + dataset);
    if (behaviors.empty()) throw InvalidInput("config: bandit experiments need 'behaviors'");
    for (const auto& b : behaviors) parse_softening(b).validate();
    if (evaluation != "evaluation") parse_softening(evaluation).validate();
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("config: train_fraction must be in (0, 1)");
  } else {
    make_environment(env);  // throws on unknown ids
    if (train_size < 1) throw InvalidInput("config: train_size must be at least 1");
    if (sizes.empty()) throw InvalidInput("config: no sample sizes listed");
    for (int s : sizes)
      if (s < 1) throw InvalidInput("config: sample sizes must be at least 1");
    if (truth == TruthMethod::MonteCarlo && truth_episodes < 2)
      throw InvalidInput("config: truth_episodes must be at least 2");
  }
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  ExperimentConfig c;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (trim(line).empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidInput("config line " + std::to_string(lineno) + ": expected 'key = value'");
    const std::string key = trim(std::string_view(line).substr(0, eq));
    const std::string value = trim(std::string_view(line).substr(eq + 1));
    if (key == "env") {
      c.env = value;
    } else if (key == "behavior") {
      c.behavior = value;
    } else if (key == "evaluation") {
      c.evaluation = value;
    } else if (key == "features") {
      c.features = value;
    } else if (key == "train_size") {
      c.train_size = to_int32(key, value);
    } else if (key == "sizes") {
      c.sizes.clear();
      for (const auto& s : split_list(value)) c.sizes.push_back(to_int32(key, s));
    } else if (key == "estimators") {
      c.estimators.clear();
      for (const auto& s : split_list(value)) c.estimators.push_back(parse_estimator(s));
    } else if (key == "replicates") {
      c.replicates = to_int32(key, value);
    } else if (key == "gamma") {
      c.gamma = to_double(key, value);
    } else if (key == "seed") {
      c.seed = to_uint64(key, value);
    } else if (key == "truth") {
      if (value == "auto") c.truth.reset();
      else c.truth = parse_truth_method(value);
    } else if (key == "truth_episodes") {
      c.truth_episodes = static_cast<long>(to_int(key, value));
    } else if (key == "truth_cache") {
      c.truth_cache = value.empty() || base_dir.empty() ? value : (base_dir / value).string();
    } else if (key == "significance_level") {
      c.significance_level = to_double(key, value);
    } else if (key == "threads") {
      c.threads = to_int32(key, value);
    } else if (key == "dataset") {
      const bool generated = value.rfind("blobs:", 0) == 0;
      c.dataset = generated || base_dir.empty() || std::filesystem::path(value).is_absolute()
                      ? value
                      : (base_dir / value).string();
    } else if (key == "behaviors") {
      c.behaviors = split_list(value);
    } else if (key == "train_fraction") {
      c.train_fraction = to_double(key, value);
    } else {
      throw InvalidInput("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c = parse_config(ss.str(), path.parent_path());
  c.validate();
  return c;
}

std::string render_config(const ExperimentConfig& c) {
  std::ostringstream out;
  out << "env = " << c.env << '\n';
  out << "behavior = " << c.behavior << '\n';
  out << "evaluation = " << c.evaluation << '\n';
  out << "features = " << c.features << '\n';
  out << "train_size = " << c.train_size << '\n';
  out << "sizes = " << join(c.sizes, [](int s) { return std::to_string(s); }) << '\n';
  out << "estimators = " << join(c.estimators, [](EstimatorId e) { return to_string(e); }) << '\n';
  out << "replicates = " << c.replicates << '\n';
  out << "gamma = " << format_double(c.gamma) << '\n';
  out << "seed = " << c.seed << '\n';
  out << "truth = " << (c.truth ? to_string(*c.truth) : std::string("auto")) << '\n';
  out << "truth_episodes = " << c.truth_episodes << '\n';
  out << "truth_cache = " << c.truth_cache << '\n';
  out << "significance_level = " << format_double(c.significance_level) << '\n';
  out << "threads = " << c.threads << '\n';
  out << "dataset = " << c.dataset << '\n';
  out << "behaviors = " << join(c.behaviors, [](const std::string& s) { return s; }) << '\n';
  out << "train_fraction = " << format_double(c.train_fraction) << '\n';
  return out.str();
}

Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["env"] = c.env;
  j["behavior"] = c.behavior;
  j["evaluation"] = c.evaluation;
  j["features"] = c.features;
  j["train_size"] = c.train_size;
  j["sizes"] = c.sizes;
  Json est = Json::array();
  for (auto e : c.estimators) est.push_back(to_string(e));
  j["estimators"] = est;
  j["replicates"] = c.replicates;
  j["gamma"] = c.gamma;
  j["seed"] = c.seed;
  j["truth"] = c.truth ? to_string(*c.truth) : std::string("auto");
  j["truth_episodes"] = c.truth_episodes;
  j["significance_level"] = c.significance_level;
  if (c.is_bandit()) {
    j["dataset"] = c.dataset;
    j["behaviors"] = c.behaviors;
    j["train_fraction"] = c.train_fraction;
  }
  return j;
}

std::string config_hash(const ExperimentConfig& c) {
  // Thread count and cache location do not change results, so they stay out of the hash.
  ExperimentConfig canon = c;
  canon.threads = 0;
  canon.truth_cache.clear();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : render_config(canon)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ope

#include "ope/bandit.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>

#include "ope/numeric.hpp"

namespace ope {

namespace {

bool parse_double(const std::string& field, double& out) {
  const char* begin = field.c_str();
  while (*begin == ' ' || *begin == '\t') ++begin;
  if (*begin == '\0') return false;
  char* end = nullptr;
  errno = 0;
  out = std::strtod(begin, &end);
  if (errno == ERANGE) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) fields.push_back(f);
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

}  // namespace

ClassificationData load_classification_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open classification data: " + path.string());
  ClassificationData data;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto fields = split_fields(line);
    double first = 0.0;
    if (data.examples.empty() && data.dim == 0 && !parse_double(fields.front(), first)) continue;  // header
    if (fields.size() < 2) throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": need features and a label");
    LabeledExample ex;
    for (std::size_t k = 0; k + 1 < fields.size(); ++k) {
      double v = 0.0;
      if (!parse_double(fields[k], v) || !std::isfinite(v))
        throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": non-numeric feature '" + fields[k] + "'");
      ex.features.push_back(v);
    }
    double label = 0.0;
    if (!parse_double(fields.back(), label) || label < 0 || label != std::floor(label) || label > 1e6)
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": label must be a non-negative integer");
    ex.label = static_cast<int>(label);
    if (data.dim == 0) data.dim = static_cast<int>(ex.features.size());
    if (static_cast<int>(ex.features.size()) != data.dim)
      throw InvalidInput(path.string() + ":" + std::to_string(lineno) + ": inconsistent column count");
    data.num_classes = std::max(data.num_classes, ex.label + 1);
    data.examples.push_back(std::move(ex));
  }
  if (data.examples.empty()) throw InvalidInput("no examples in " + path.string());
  if (data.num_classes < 2) data.num_classes = 2;
  return data;
}

ClassificationData make_blobs(int num_classes, int dim, int count, double spread, std::uint64_t seed) {
  if (num_classes < 1 || dim < 1 || count < 1 || spread < 0.0) throw InvalidInput("invalid blob parameters");
  Rng rng(seed);
  std::vector<std::vector<double>> centers(num_classes, std::vector<double>(dim));
  for (auto& c : centers)
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
  ClassificationData data;
  data.num_classes = num_classes;
  data.dim = dim;
  data.examples.reserve(count);
  for (int i = 0; i < count; ++i) {
    LabeledExample ex;
    ex.label = i % num_classes;
    ex.features.resize(dim);
    for (int j = 0; j < dim; ++j) ex.features[j] = centers[ex.label][j] + spread * rng.normal();
    data.examples.push_back(std::move(ex));
  }
  return data;
}

std::pair<ClassificationData, ClassificationData> split_classification(const ClassificationData& data,
                                                                       double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw InvalidInput("train fraction must be in (0, 1)");
  const std::size_t m = data.examples.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = m; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(m)));
  if (cut == 0 || cut == m) throw InvalidInput("split leaves an empty part");
  ClassificationData train{{}, data.num_classes, data.dim}, test{{}, data.num_classes, data.dim};
  for (std::size_t k = 0; k < m; ++k) (k < cut ? train : test).examples.push_back(data.examples[order[k]]);
  return {std::move(train), std::move(test)};
}

std::vector<Step> classification_to_bandit(std::span<const LabeledExample> examples, const Policy& policy, Rng& rng) {
  std::vector<Step> samples;
  samples.reserve(examples.size());
  for (const auto& ex : examples) {
    if (ex.label < 0 || ex.label >= policy.action_count()) throw InvalidInput("label outside the action range");
    State x = State::continuous(ex.features);
    const Action a = policy.sample(x, rng);
    const double pb = policy.prob(x, a);
    samples.push_back({std::move(x), a, a == ex.label ? 1.0 : 0.0, pb});
  }
  return samples;
}

double classification_value(std::span<const LabeledExample> examples, const Policy& pi_e) {
  if (examples.empty()) throw InvalidInput("no examples");
  Accumulator acc;
  for (const auto& ex : examples) acc.add(pi_e.prob(State::continuous(ex.features), ex.label));
  return acc.value() / static_cast<double>(examples.size());
}

std::shared_ptr<LinearClassifierPolicy> train_logistic(std::span<const LabeledExample> examples, int num_classes,
                                                       const LogisticConfig& config) {
  if (examples.empty()) throw InvalidInput("no training examples");
  if (num_classes < 1) throw InvalidInput("need at least one class");
  const int d = static_cast<int>(examples.front().features.size());
  const int m = static_cast<int>(examples.size());
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), scale = Eigen::VectorXd::Ones(d);
  for (const auto& ex : examples) {
    if (static_cast<int>(ex.features.size()) != d) throw InvalidInput("inconsistent feature dimension");
    if (ex.label < 0 || ex.label >= num_classes) throw InvalidInput("label outside [0, classes)");
    for (int j = 0; j < d; ++j) mean[j] += ex.features[j];
  }
  mean /= m;
  Eigen::VectorXd var = Eigen::VectorXd::Zero(d);
  for (const auto& ex : examples)
    for (int j = 0; j < d; ++j) var[j] += (ex.features[j] - mean[j]) * (ex.features[j] - mean[j]);
  for (int j = 0; j < d; ++j) {
    const double sd = std::sqrt(var[j] / m);
    scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  Eigen::MatrixXd Z(d + 1, m);
  Eigen::VectorXi y(m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < d; ++j) Z(j, i) = (examples[i].features[j] - mean[j]) / scale[j];
    Z(d, i) = 1.0;
    y[i] = examples[i].label;
  }
  const int l = num_classes;
  const double l2 = config.l2;
  Objective objective = [&](const Eigen::VectorXd& w, Eigen::VectorXd* grad) {
    const Eigen::Map<const Eigen::MatrixXd> W(w.data(), l, d + 1);
    const Eigen::MatrixXd S = W * Z;  // l x m scores
    Eigen::MatrixXd G = Eigen::MatrixXd::Zero(l, m);
    double loss = 0.0;
    for (int i = 0; i < m; ++i) {
      const double top = S.col(i).maxCoeff();
      const Eigen::VectorXd e = (S.col(i).array() - top).exp();
      const double z = e.sum();
      loss += top + std::log(z) - S(y[i], i);
      G.col(i) = e / z;
      G(y[i], i) -= 1.0;
    }
    if (grad) {
      Eigen::MatrixXd g = G * Z.transpose() / m + 2.0 * l2 * W;
      *grad = Eigen::Map<const Eigen::VectorXd>(g.data(), g.size());
    }
    return loss / m + l2 * w.squaredNorm();
  };
  const GdResult res = gd_minimize(objective, Eigen::VectorXd::Zero(l * (d + 1)), config.gd);
  Eigen::MatrixXd W = Eigen::Map<const Eigen::MatrixXd>(res.beta.data(), l, d + 1);
  return std::make_shared<LinearClassifierPolicy>(std::move(W), std::move(mean), std::move(scale));
}

}  // namespace ope

#include "ope/tabular.hpp"

#include <cmath>
#include <string>

namespace ope {

void TabularModel::validate() const {
  if (num_states < 1 || num_actions < 1 || num_observations < 1) throw InvalidInput("tabular model: empty");
  if (static_cast<int>(initial.size()) != num_states || static_cast<int>(observation.size()) != num_states ||
      static_cast<int>(terminal.size()) != num_states || static_cast<int>(outcomes.size()) != num_states) {
    throw InvalidInput("tabular model: table sizes disagree with num_states");
  }
  double p0 = 0.0;
  for (double p : initial) p0 += p;
  if (std::abs(p0 - 1.0) > 1e-12) throw InvalidInput("tabular model: initial distribution does not sum to 1");
  for (int x = 0; x < num_states; ++x) {
    if (observation[x] < 0 || observation[x] >= num_observations) throw InvalidInput("tabular model: bad observation id");
    if (static_cast<int>(outcomes[x].size()) != num_actions) throw InvalidInput("tabular model: missing actions");
    for (int a = 0; a < num_actions; ++a) {
      double s = 0.0;
      for (const auto& o : outcomes[x][a]) {
        if (o.next < 0 || o.next >= num_states || o.prob < 0.0) throw InvalidInput("tabular model: bad outcome");
        s += o.prob;
      }
      if (!terminal[x] && std::abs(s - 1.0) > 1e-12) {
        throw InvalidInput("tabular model: transition row (" + std::to_string(x) + "," + std::to_string(a) +
                           ") does not sum to 1");
      }
    }
  }
}

TabularEvaluation evaluate_tabular(const TabularModel& mdp, const Policy& pi, double gamma, int T) {
  const int S = mdp.num_states;
  const int A = mdp.num_actions;
  TabularEvaluation ev;
  ev.q.assign(T, std::vector<std::vector<double>>(S, std::vector<double>(A, 0.0)));
  ev.v.assign(T + 1, std::vector<double>(S, 0.0));
  ev.d.assign(T, std::vector<double>(S, 0.0));

  std::vector<std::vector<double>> pol(S);
  for (int x = 0; x < S; ++x) pol[x] = pi.probs(mdp.observe(x));

  for (int t = T - 1; t >= 0; --t) {
    for (int x = 0; x < S; ++x) {
      if (mdp.terminal[x]) continue;
      double vx = 0.0;
      for (int a = 0; a < A; ++a) {
        double qa = 0.0;
        for (const auto& o : mdp.outcomes[x][a]) {
          const double future = mdp.terminal[o.next] ? 0.0 : ev.v[t + 1][o.next];
          qa += o.prob * (o.reward + gamma * future);
        }
        ev.q[t][x][a] = qa;
        vx += pol[x][a] * qa;
      }
      ev.v[t][x] = vx;
    }
  }
  ev.v.pop_back();

  for (int x = 0; x < S; ++x) ev.d[0][x] = mdp.terminal[x] ? 0.0 : mdp.initial[x];
  for (int t = 0; t + 1 < T; ++t) {
    for (int x = 0; x < S; ++x) {
      if (ev.d[t][x] == 0.0) continue;
      for (int a = 0; a < A; ++a) {
        for (const auto& o : mdp.outcomes[x][a]) {
          if (!mdp.terminal[o.next]) ev.d[t + 1][o.next] += ev.d[t][x] * pol[x][a] * o.prob;
        }
      }
    }
  }

  double value = 0.0;
  for (int x = 0; x < S; ++x) value += mdp.initial[x] * (mdp.terminal[x] ? 0.0 : ev.v[0][x]);
  ev.value = value;
  return ev;
}

namespace {

double enumerate_from(const TabularModel& mdp, const Policy& pi, double gamma, int t, int T, int x) {
  if (t == T || mdp.terminal[x]) return 0.0;
  const auto p = pi.probs(mdp.observe(x));
  double total = 0.0;
  for (int a = 0; a < mdp.num_actions; ++a) {
    if (p[a] == 0.0) continue;
    for (const auto& o : mdp.outcomes[x][a]) {
      if (o.prob == 0.0) continue;
      total += p[a] * o.prob * (o.reward + gamma * enumerate_from(mdp, pi, gamma, t + 1, T, o.next));
    }
  }
  return total;
}

}  // namespace

double enumerate_value(const TabularModel& mdp, const Policy& pi, double gamma, int T) {
  double total = 0.0;
  for (int x = 0; x < mdp.num_states; ++x) {
    if (mdp.initial[x] > 0.0) total += mdp.initial[x] * enumerate_from(mdp, pi, gamma, 0, T, x);
  }
  return total;
}

}  // namespace ope

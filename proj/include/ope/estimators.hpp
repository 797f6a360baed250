#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ope/core.hpp"
#include "ope/linmodel.hpp"

namespace ope {

enum class EstimatorId { DM0, DM, IS, StepIS, WIS, StepWIS, DR0, DR, MRDR0, MRDR };

// Which fitting objective produced a model.
enum class ModelKind { DM0, DM, MRDR0, MRDR };

std::string to_string(EstimatorId id);
std::string to_string(ModelKind kind);
// Accepts the canonical names ("DM", "StepIS", ...) and lower-case dashed forms ("step-is").
EstimatorId parse_estimator(std::string_view name);
ModelKind parse_model_kind(std::string_view name);
// The model an estimator reads, if any.
std::optional<ModelKind> model_for(EstimatorId id);

struct EstimatorReport {
  EstimatorId id;
  double value;
  int n;
  std::uint64_t seed;

  Json to_json() const;
};

double is_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b);
double step_is_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b);
// Self-normalized forms. Throw DegenerateWeightsError if a normalizer is zero.
double wis_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b);
double step_wis_estimate(const Dataset& data, const Policy& pi_e, const Policy& pi_b);

std::vector<State> initial_states(const Dataset& data);
double dm_estimate(std::span<const State> initial_states, const LinearQModel& model, const Policy& pi_e);

// The i-th summand of the DR estimator: sum_t gamma^t [w_t r_t - (w_t Q(x_t,a_t) - w_{t-1} V(x_t))].
double dr_trajectory_term(const Trajectory& traj, double gamma, const LinearQModel& model, const Policy& pi_e,
                          const Policy& pi_b);
std::vector<double> dr_terms(const Dataset& data, const LinearQModel& model, const Policy& pi_e, const Policy& pi_b);
double dr_estimate(const Dataset& data, const LinearQModel& model, const Policy& pi_e, const Policy& pi_b);

// (1/n) sum (pi_e/p_b)(r - Q(x,a)) + V(x), with p_b taken from the samples.
double bandit_dr_estimate(std::span<const Step> samples, const LinearQModel& model, const Policy& pi_e);

// Dispatch by estimator id; model is required for the DM/DR/MRDR families.
double estimate(EstimatorId id, const Dataset& data, const Policy& pi_e, const Policy& pi_b,
                const LinearQModel* model);

}  // namespace ope

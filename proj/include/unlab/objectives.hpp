#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlab/model.hpp"
#include "unlab/reweight.hpp"

namespace unlab {

enum class ObjectiveFamily { ga, reweighted_ga, po, dpo, npo, simnpo, rmu };

const char* family_name(ObjectiveFamily f);
ObjectiveFamily family_from_name(const std::string& name);

// Every loss below is the quantity being *minimized*; "gradient ascent"
// shows up as minimizing +log p so a single optimizer path serves all
// families.
struct ObjectiveSpec {
  ObjectiveFamily family = ObjectiveFamily::ga;
  std::optional<CriterionSpec> criterion;  // required iff family == reweighted_ga
  std::optional<SamplingSpec> sampling;    // ga / reweighted_ga only
  Granularity granularity = Granularity::token;
  int group_count = 4;
  double retain_lambda = 0.0;  // 0 disables the retain regularizer
  std::optional<double> beta;  // dpo/npo/simnpo temperature; per-family default
  double gamma = 0.1375;       // simnpo reward margin
  double rmu_beta = 6.5;
  std::uint64_t rmu_seed = 0;

  // dpo defaults to 0.3, npo to 0.1, simnpo to 2.5
  double effective_beta() const;
  bool needs_reference() const {
    return family == ObjectiveFamily::dpo || family == ObjectiveFamily::npo;
  }
  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  GradientVector grad;
};

// sum_k log p_k, minimized (Section "gradient ascent").
LossResult loss_ga(const ToyModel& model, const ForwardTrace& trace);

// sum_k w_k log p_k with the weights treated as constants.
LossResult loss_reweighted_ga(const ToyModel& model, const ForwardTrace& trace,
                              const WeightVector& weights);

// forget term minus lambda * sum_k log p_k on the retain trace.
LossResult loss_gd(const LossResult& forget, const ToyModel& model,
                   const ForwardTrace& retain_trace, double lambda);

// Plain NLL descent toward the reserved idk answer: -sum_k log p_k on the
// idk-substituted trace (the sign-flip of loss_ga on those targets).
LossResult loss_po(const ToyModel& model, const ForwardTrace& idk_trace);

// -(2/beta) log sigmoid(beta [log(p_w/p_w_ref) - log(p_l/p_l_ref)]).
LossResult loss_dpo(const ToyModel& model, const ForwardTrace& trace_win,
                    const ForwardTrace& trace_lose, const ForwardTrace& ref_win,
                    const ForwardTrace& ref_lose, double beta);

// -(2/beta) log sigmoid(-beta log(p/p_ref)). Gradient factorizes as
// weight_npo(p, p_ref, beta) * grad(log p).
LossResult loss_npo(const ToyModel& model, const ForwardTrace& trace_cur,
                    const ForwardTrace& trace_ref, double beta);

// -(2/beta) log sigmoid(-(beta/|y|) log p - gamma).
LossResult loss_simnpo(const ToyModel& model, const ForwardTrace& trace,
                       double beta, double gamma);

// Fixed random direction u ~ U[0,1)^hidden_dim for a run.
std::vector<double> rmu_direction(int hidden_dim, std::uint64_t seed);

// mean over the first |y|-1 positions of ||phi_k - beta u||^2.
LossResult loss_rmu(const ToyModel& model, const ForwardTrace& trace,
                    std::span<const double> u, double rmu_beta);

struct StepTelemetry {
  long step = 0;
  double forget_loss = 0.0;
  double retain_loss = 0.0;  // mean retain NLL, before the lambda scaling
  double grad_norm = 0.0;
  double w_min = 0.0;
  double w_mean = 0.0;
  double w_max = 0.0;
};

std::string telemetry_csv_header();
std::string telemetry_csv_row(const StepTelemetry& t);

// Per-run context handed through unlearn steps: the frozen reference for
// dpo/npo, the RMU direction, and optional diagnostic sinks.
struct UnlearnContext {
  const ModelSnapshot* reference = nullptr;
  std::vector<double> rmu_u;
  LossWeightTrace* loss_weight_trace = nullptr;  // per-token (nll, weight) log
  std::vector<double>* ktl_values = nullptr;     // KTL samples for key tokens
};

// One optimizer step: weights flow criterion -> sampling mask product ->
// granularity aggregation, then the family loss plus the lambda-retain
// term is assembled, averaged over each batch, and applied.
StepTelemetry unlearn_step(ToyModel& model, const Corpus& corpus,
                           std::span<const int> forget_batch,
                           std::span<const int> retain_batch,
                           const ObjectiveSpec& spec, OptimizerState& opt,
                           double lr, long step, UnlearnContext& ctx);

}  // namespace unlab

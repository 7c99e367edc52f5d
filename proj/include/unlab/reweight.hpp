#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "unlab/common.hpp"

namespace unlab {

// One nonnegative weight per answer token; instance-level criteria are
// broadcast to constant vectors.
using WeightVector = std::vector<double>;

enum class CriterionKind {
  uniform,
  importance,
  saturation,
  wga,
  simsat,
  simimp,
  satimp,
  npo,
  simnpo,
};

const char* criterion_name(CriterionKind kind);
CriterionKind criterion_from_name(const std::string& name);

struct CriterionSpec {
  CriterionKind kind = CriterionKind::uniform;
  double p = 0.3;      // importance allocation
  double tau = 1.0;    // saturation calibration
  std::optional<double> beta;  // temperature; per-kind default when unset
  double beta1 = 5.0;  // satimp
  double beta2 = 1.0;  // satimp
  double gamma = 0.1375;  // simnpo reward margin

  // wga/simsat/simimp default to 2, npo to 0.1, simnpo to 2.5
  double effective_beta() const;
  bool needs_reference() const { return kind == CriterionKind::npo; }
  void validate() const;
};

enum class SamplingStrategy { topk, bottomk, random };

const char* sampling_name(SamplingStrategy s);
SamplingStrategy sampling_from_name(const std::string& name);

struct SamplingSpec {
  SamplingStrategy strategy = SamplingStrategy::topk;
  double beta = 1.0;  // sampled fraction, (0, 1]
  std::uint64_t seed = 0;

  void validate() const;
};

enum class Granularity { token, group, instance, batch };

const char* granularity_name(Granularity g);
Granularity granularity_from_name(const std::string& name);

// w_k = 1-p on key positions, p elsewhere (fixed during unlearning).
WeightVector weight_importance(const std::vector<int>& key_positions,
                               int answer_len, double p);

// w_k = p_k / (p_k + tau): high leftover likelihood => high weight.
WeightVector weight_saturation(std::span<const double> probs, double tau);

// w_k = p_k ^ beta
WeightVector weight_wga(std::span<const double> probs, double beta);

// Same form as WGA; kept as its own entry point for the criterion family.
WeightVector weight_simsat(std::span<const double> probs, double beta);

// w_k = (1 - p_k) ^ beta
WeightVector weight_simimp(std::span<const double> probs, double beta);

// w_k = p_k^{beta1} (1-p_k)^{beta2}, peaked at p = beta1/(beta1+beta2).
WeightVector weight_satimp(std::span<const double> probs, double beta1,
                           double beta2);

// Instance weight 2 p^b / (p^b + p_ref^b), range (0, 2).
double weight_npo(double seq_prob_cur, double seq_prob_ref, double beta);

// Instance weight [2 p^{b/|y|} / (p^{b/|y|} + 1)] / |y|.
double weight_simnpo(double seq_prob, double beta, int answer_len);

WeightVector combine_weights(const WeightVector& a, const WeightVector& b);

// Binary mask with s = max(1, floor(beta * |y|)) ones. TopK marks the s
// lowest-likelihood positions, BottomK the s highest, Random a
// seed-deterministic subset. Ties and ordering are stable by position.
// `salt` mixes an extra stream (step/pair) into the random strategy.
WeightVector hard_sample_mask(std::span<const double> probs,
                              const SamplingSpec& spec, std::uint64_t salt = 0);

// token: identity. instance: constant at the mean. group: rank tokens by
// weight descending, cut the ranking into group_count contiguous blocks
// (remainder spread over the earlier blocks), assign each token its block
// mean. batch: every vector in {weights} U batch_peers collapses to the
// mean of all their instance means.
WeightVector aggregate_granularity(const WeightVector& weights, Granularity level,
                                   int group_count,
                                   const std::vector<WeightVector>& batch_peers = {});

// K = M/N per key token, M = 1-based descending likelihood rank (stable by
// position), N = answer length. Low-likelihood key tokens score near 1.
std::vector<double> ktl_index(std::span<const double> probs,
                              const std::vector<int>& key_positions);

struct TraceRow {
  long step = 0;
  int pair_id = 0;
  int token_pos = 0;
  double nll = 0.0;
  double weight = 0.0;
  bool is_key = false;
};

// Append-only per-token (loss, weight) log backing the weight-vs-loss
// diagnostics. CSV columns: step,pair_id,token_pos,nll,weight,is_key.
class LossWeightTrace {
 public:
  void append(TraceRow row) { rows_.push_back(row); }
  const std::vector<TraceRow>& rows() const { return rows_; }
  std::string to_csv() const;
  void save_csv(const std::filesystem::path& path) const;
  static LossWeightTrace load_csv(const std::filesystem::path& path);

 private:
  std::vector<TraceRow> rows_;
};

void record_trace(LossWeightTrace& trace, long step, int pair_id,
                  std::span<const double> nll_per_token,
                  std::span<const double> weights,
                  const std::vector<int>& key_positions);

}  // namespace unlab

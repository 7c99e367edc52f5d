#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "unlab/seq.hpp"

namespace unlab {

// Fixed-window autoregressive model: the last `context_window` tokens of
// x|y^{<k} are embedded, concatenated, pushed through one tanh layer and a
// softmax head. Small enough for exact gradients and finite-difference
// checks, but keeps a real hidden representation.
struct ModelConfig {
  int vocab_size = 0;
  int context_window = 4;
  int embed_dim = 8;
  int hidden_dim = 16;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

// Parameter block; doubles throughout. Also the gradient carrier.
// Embedding has vocab_size + 1 rows: the extra row embeds the left-pad
// slot used when the context reaches past the start of the sequence.
struct Parameters {
  std::vector<double> embed;  // (vocab_size + 1) x embed_dim
  std::vector<double> w_in;   // hidden_dim x (context_window * embed_dim)
  std::vector<double> b_in;   // hidden_dim
  std::vector<double> w_out;  // vocab_size x hidden_dim
  std::vector<double> b_out;  // vocab_size

  static Parameters zeros(const ModelConfig& cfg);
  std::size_t size() const;
  void fill(double v);
  void axpy(double a, const Parameters& other);  // this += a * other
  void scale(double a);
  double squared_norm() const;
  bool all_finite() const;
  // flat read/write access in checkpoint order, for finite differences
  double get_flat(std::size_t i) const;
  void set_flat(std::size_t i, double v);
};

using GradientVector = Parameters;

class ToyModel {
 public:
  explicit ToyModel(const ModelConfig& cfg);  // zero-initialized
  static ToyModel random(const ModelConfig& cfg, std::uint64_t seed,
                         double scale = 0.1);

  const ModelConfig& config() const { return cfg_; }
  Parameters& params() { return params_; }
  const Parameters& params() const { return params_; }

 private:
  ModelConfig cfg_;
  Parameters params_;
};

struct ModelSnapshot {
  ModelConfig config;
  Parameters params;
  std::string tag;
};

ModelSnapshot make_snapshot(const ToyModel& model, std::string tag);

struct ForwardTrace {
  TokenSequence question;
  TokenSequence answer;
  std::vector<double> token_prob;      // p_k at the realized answer tokens
  std::vector<double> token_log_prob;  // log p_k, floored at 1e-300
  std::vector<TokenId> contexts;       // positions x window (embedding rows)
  std::vector<double> embed_cat;       // positions x (window * embed_dim)
  std::vector<double> hidden;          // positions x hidden_dim
  std::vector<double> dist;            // positions x vocab_size

  int positions() const { return static_cast<int>(token_prob.size()); }
  double sequence_log_prob() const;  // sum of log p_k
};

ForwardTrace forward(const ToyModel& model, std::span<const TokenId> question,
                     std::span<const TokenId> answer);
ForwardTrace forward(const ToyModel& model, const QAPair& pair);
ForwardTrace forward(const ModelSnapshot& snap, std::span<const TokenId> question,
                     std::span<const TokenId> answer);
ForwardTrace forward(const ModelSnapshot& snap, const QAPair& pair);

// Gradient of sum_k weights[k] * sign * log p_k, with the weights treated
// as constants. The trace must come from this model's current parameters.
GradientVector backward_weighted(const ToyModel& model, const ForwardTrace& trace,
                                 std::span<const double> weights, int sign);

// Backprop from per-position gradients on the hidden activations
// (positions x hidden_dim, row-major). Softmax head is untouched.
GradientVector backward_hidden(const ToyModel& model, const ForwardTrace& trace,
                               std::span<const double> hidden_grad);

// Argmax decoding; ties broken by lowest token id.
TokenSequence greedy_decode(const ToyModel& model, std::span<const TokenId> prompt,
                            int max_len);

enum class OptimizerKind { sgd, adam };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  long step = 0;
  Parameters m;  // first moment (adam)
  Parameters v;  // second moment (adam)

  static OptimizerState make(OptimizerKind kind, const ModelConfig& cfg);
};

void optimizer_step(ToyModel& model, const GradientVector& grad,
                    OptimizerState& state, double lr);

struct TrainSchedule {
  int epochs = 1;
  int batch_size = 16;
  double base_lr = 0.05;
  double warmup_fraction = 0.1;  // linear warm-up, then linear decay to 0
  OptimizerKind optimizer = OptimizerKind::adam;
  std::uint64_t shuffle_seed = 0;
};

double scheduled_lr(const TrainSchedule& schedule, long step, long total_steps);

struct TrainResult {
  std::vector<double> epoch_mean_nll;  // mean per-token NLL after each epoch
  std::vector<int> pair_ids_seen;      // unique, sorted
};

TrainResult finetune(ToyModel& model, const Corpus& corpus,
                     std::span<const int> subset, const TrainSchedule& schedule);

// Checkpoint layout (little-endian): magic "TOYLM001", four uint32 fields
// {vocab_size, context_window, embed_dim, hidden_dim}, then the parameter
// blocks as f64 in declaration order (embed, w_in, b_in, w_out, b_out).
void save_checkpoint(const ToyModel& model, const std::filesystem::path& path);
ToyModel load_checkpoint(const std::filesystem::path& path);

}  // namespace unlab

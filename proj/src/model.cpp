#include "unlab/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace unlab {

namespace {

constexpr double kProbFloor = 1e-300;

std::size_t pad_row(const ModelConfig& cfg) {
  return static_cast<std::size_t>(cfg.vocab_size);
}

// context rows (embedding indices) for predicting position k of the answer:
// the last `window` tokens of question|answer[0..k), left-padded with the
// dedicated pad row.
void context_rows(const ModelConfig& cfg, std::span<const TokenId> question,
                  std::span<const TokenId> answer, int k, TokenId* out) {
  const int window = cfg.context_window;
  const long total = static_cast<long>(question.size()) + k;
  for (int w = 0; w < window; ++w) {
    const long idx = total - window + w;
    if (idx < 0) {
      out[w] = static_cast<TokenId>(pad_row(cfg));
    } else if (idx < static_cast<long>(question.size())) {
      out[w] = question[static_cast<std::size_t>(idx)];
    } else {
      out[w] = answer[static_cast<std::size_t>(idx - static_cast<long>(question.size()))];
    }
  }
}

void check_tokens(const ModelConfig& cfg, std::span<const TokenId> seq) {
  for (TokenId t : seq) {
    if (t < 0 || t >= cfg.vocab_size) {
      throw InputError("forward: token id out of vocabulary range");
    }
  }
}

// hidden = tanh(w_in * embed_cat + b_in); dist = softmax(w_out * hidden + b_out)
void eval_position(const ModelConfig& cfg, const Parameters& p,
                   const TokenId* rows, double* embed_cat, double* hidden,
                   double* dist) {
  const int window = cfg.context_window;
  const int ed = cfg.embed_dim;
  const int hd = cfg.hidden_dim;
  const int vs = cfg.vocab_size;
  for (int w = 0; w < window; ++w) {
    const double* src = &p.embed[static_cast<std::size_t>(rows[w]) * ed];
    std::memcpy(embed_cat + w * ed, src, sizeof(double) * static_cast<std::size_t>(ed));
  }
  const int in_dim = window * ed;
  for (int h = 0; h < hd; ++h) {
    double acc = p.b_in[static_cast<std::size_t>(h)];
    const double* row = &p.w_in[static_cast<std::size_t>(h) * in_dim];
    for (int i = 0; i < in_dim; ++i) acc += row[i] * embed_cat[i];
    hidden[h] = std::tanh(acc);
  }
  double max_logit = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < vs; ++v) {
    double acc = p.b_out[static_cast<std::size_t>(v)];
    const double* row = &p.w_out[static_cast<std::size_t>(v) * hd];
    for (int h = 0; h < hd; ++h) acc += row[h] * hidden[h];
    dist[v] = acc;
    max_logit = std::max(max_logit, acc);
  }
  double z = 0.0;
  for (int v = 0; v < vs; ++v) {
    dist[v] = std::exp(dist[v] - max_logit);
    z += dist[v];
  }
  for (int v = 0; v < vs; ++v) dist[v] /= z;
}

ForwardTrace forward_impl(const ModelConfig& cfg, const Parameters& p,
                          std::span<const TokenId> question,
                          std::span<const TokenId> answer) {
  check_tokens(cfg, question);
  check_tokens(cfg, answer);
  const int n = static_cast<int>(answer.size());
  const int window = cfg.context_window;
  const int in_dim = window * cfg.embed_dim;

  ForwardTrace trace;
  trace.question.assign(question.begin(), question.end());
  trace.answer.assign(answer.begin(), answer.end());
  trace.token_prob.resize(static_cast<std::size_t>(n));
  trace.token_log_prob.resize(static_cast<std::size_t>(n));
  trace.contexts.resize(static_cast<std::size_t>(n) * window);
  trace.embed_cat.resize(static_cast<std::size_t>(n) * in_dim);
  trace.hidden.resize(static_cast<std::size_t>(n) * cfg.hidden_dim);
  trace.dist.resize(static_cast<std::size_t>(n) * cfg.vocab_size);

  for (int k = 0; k < n; ++k) {
    TokenId* rows = &trace.contexts[static_cast<std::size_t>(k) * window];
    context_rows(cfg, question, answer, k, rows);
    eval_position(cfg, p, rows, &trace.embed_cat[static_cast<std::size_t>(k) * in_dim],
                  &trace.hidden[static_cast<std::size_t>(k) * cfg.hidden_dim],
                  &trace.dist[static_cast<std::size_t>(k) * cfg.vocab_size]);
    const double pk =
        trace.dist[static_cast<std::size_t>(k) * cfg.vocab_size +
                   static_cast<std::size_t>(answer[static_cast<std::size_t>(k)])];
    trace.token_prob[static_cast<std::size_t>(k)] = pk;
    trace.token_log_prob[static_cast<std::size_t>(k)] = std::log(std::max(pk, kProbFloor));
  }
  return trace;
}

void write_u32le(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16),
                        static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t read_u32le(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f64le(std::ostream& out, double v) {
  const std::uint64_t u = std::bit_cast<std::uint64_t>(v);
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(u >> (8 * i));
  out.write(reinterpret_cast<const char*>(b), 8);
}

double read_f64le(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t u = 0;
  for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return std::bit_cast<double>(u);
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ParameterError("ModelConfig: vocab_size must be >= 2");
  if (context_window < 1) throw ParameterError("ModelConfig: context_window must be >= 1");
  if (embed_dim < 1 || hidden_dim < 1) {
    throw ParameterError("ModelConfig: embed_dim and hidden_dim must be >= 1");
  }
}

Parameters Parameters::zeros(const ModelConfig& cfg) {
  Parameters p;
  p.embed.assign(static_cast<std::size_t>(cfg.vocab_size + 1) * cfg.embed_dim, 0.0);
  p.w_in.assign(static_cast<std::size_t>(cfg.hidden_dim) * cfg.context_window * cfg.embed_dim, 0.0);
  p.b_in.assign(static_cast<std::size_t>(cfg.hidden_dim), 0.0);
  p.w_out.assign(static_cast<std::size_t>(cfg.vocab_size) * cfg.hidden_dim, 0.0);
  p.b_out.assign(static_cast<std::size_t>(cfg.vocab_size), 0.0);
  return p;
}

std::size_t Parameters::size() const {
  return embed.size() + w_in.size() + b_in.size() + w_out.size() + b_out.size();
}

void Parameters::fill(double v) {
  for (auto* blk : {&embed, &w_in, &b_in, &w_out, &b_out}) {
    std::fill(blk->begin(), blk->end(), v);
  }
}

void Parameters::axpy(double a, const Parameters& other) {
  auto add = [a](std::vector<double>& dst, const std::vector<double>& src) {
    if (dst.size() != src.size()) throw ShapeError("Parameters::axpy: shape mismatch");
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += a * src[i];
  };
  add(embed, other.embed);
  add(w_in, other.w_in);
  add(b_in, other.b_in);
  add(w_out, other.w_out);
  add(b_out, other.b_out);
}

void Parameters::scale(double a) {
  for (auto* blk : {&embed, &w_in, &b_in, &w_out, &b_out}) {
    for (double& v : *blk) v *= a;
  }
}

double Parameters::squared_norm() const {
  double acc = 0.0;
  for (const auto* blk : {&embed, &w_in, &b_in, &w_out, &b_out}) {
    for (double v : *blk) acc += v * v;
  }
  return acc;
}

bool Parameters::all_finite() const {
  for (const auto* blk : {&embed, &w_in, &b_in, &w_out, &b_out}) {
    for (double v : *blk) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

double Parameters::get_flat(std::size_t i) const {
  for (const auto* blk : {&embed, &w_in, &b_in, &w_out, &b_out}) {
    if (i < blk->size()) return (*blk)[i];
    i -= blk->size();
  }
  throw ShapeError("Parameters::get_flat: index out of range");
}

void Parameters::set_flat(std::size_t i, double v) {
  for (auto* blk : {&embed, &w_in, &b_in, &w_out, &b_out}) {
    if (i < blk->size()) {
      (*blk)[i] = v;
      return;
    }
    i -= blk->size();
  }
  throw ShapeError("Parameters::set_flat: index out of range");
}

ToyModel::ToyModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  params_ = Parameters::zeros(cfg_);
}

ToyModel ToyModel::random(const ModelConfig& cfg, std::uint64_t seed, double scale) {
  ToyModel model(cfg);
  Rng rng(seed);
  for (auto* blk : {&model.params_.embed, &model.params_.w_in, &model.params_.b_in,
                    &model.params_.w_out, &model.params_.b_out}) {
    for (double& v : *blk) v = rng.uniform(-scale, scale);
  }
  return model;
}

ModelSnapshot make_snapshot(const ToyModel& model, std::string tag) {
  return ModelSnapshot{model.config(), model.params(), std::move(tag)};
}

double ForwardTrace::sequence_log_prob() const {
  double acc = 0.0;
  for (double lp : token_log_prob) acc += lp;
  return acc;
}

ForwardTrace forward(const ToyModel& model, std::span<const TokenId> question,
                     std::span<const TokenId> answer) {
  return forward_impl(model.config(), model.params(), question, answer);
}

ForwardTrace forward(const ToyModel& model, const QAPair& pair) {
  return forward(model, pair.question, pair.answer);
}

ForwardTrace forward(const ModelSnapshot& snap, std::span<const TokenId> question,
                     std::span<const TokenId> answer) {
  return forward_impl(snap.config, snap.params, question, answer);
}

ForwardTrace forward(const ModelSnapshot& snap, const QAPair& pair) {
  return forward(snap, pair.question, pair.answer);
}

GradientVector backward_weighted(const ToyModel& model, const ForwardTrace& trace,
                                 std::span<const double> weights, int sign) {
  const ModelConfig& cfg = model.config();
  const Parameters& p = model.params();
  const int n = trace.positions();
  if (static_cast<int>(weights.size()) != n) {
    throw ShapeError("backward_weighted: weight/position length mismatch");
  }
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) {
      throw ParameterError("backward_weighted: weights must be finite and nonnegative");
    }
  }
  if (sign != 1 && sign != -1) {
    throw ParameterError("backward_weighted: sign must be +1 or -1");
  }

  const int window = cfg.context_window;
  const int ed = cfg.embed_dim;
  const int hd = cfg.hidden_dim;
  const int vs = cfg.vocab_size;
  const int in_dim = window * ed;

  GradientVector grad = Parameters::zeros(cfg);
  std::vector<double> dlogits(static_cast<std::size_t>(vs));
  std::vector<double> dpre(static_cast<std::size_t>(hd));

  for (int k = 0; k < n; ++k) {
    const double coef = sign * weights[static_cast<std::size_t>(k)];
    if (coef == 0.0) continue;
    const double* dist = &trace.dist[static_cast<std::size_t>(k) * vs];
    const double* hidden = &trace.hidden[static_cast<std::size_t>(k) * hd];
    const double* ecat = &trace.embed_cat[static_cast<std::size_t>(k) * in_dim];
    const TokenId* rows = &trace.contexts[static_cast<std::size_t>(k) * window];
    const TokenId target = trace.answer[static_cast<std::size_t>(k)];

    // d(log p_target)/dlogits = onehot(target) - dist
    for (int v = 0; v < vs; ++v) dlogits[static_cast<std::size_t>(v)] = -coef * dist[v];
    dlogits[static_cast<std::size_t>(target)] += coef;

    for (int v = 0; v < vs; ++v) {
      const double dv = dlogits[static_cast<std::size_t>(v)];
      if (dv == 0.0) continue;
      double* grow = &grad.w_out[static_cast<std::size_t>(v) * hd];
      for (int h = 0; h < hd; ++h) grow[h] += dv * hidden[h];
      grad.b_out[static_cast<std::size_t>(v)] += dv;
    }
    for (int h = 0; h < hd; ++h) {
      double acc = 0.0;
      for (int v = 0; v < vs; ++v) {
        acc += p.w_out[static_cast<std::size_t>(v) * hd + static_cast<std::size_t>(h)] *
               dlogits[static_cast<std::size_t>(v)];
      }
      dpre[static_cast<std::size_t>(h)] = acc * (1.0 - hidden[h] * hidden[h]);
    }
    for (int h = 0; h < hd; ++h) {
      const double dh = dpre[static_cast<std::size_t>(h)];
      if (dh == 0.0) continue;
      double* grow = &grad.w_in[static_cast<std::size_t>(h) * in_dim];
      for (int i = 0; i < in_dim; ++i) grow[i] += dh * ecat[i];
      grad.b_in[static_cast<std::size_t>(h)] += dh;
    }
    for (int w = 0; w < window; ++w) {
      double* erow = &grad.embed[static_cast<std::size_t>(rows[w]) * ed];
      for (int e = 0; e < ed; ++e) {
        double acc = 0.0;
        const int col = w * ed + e;
        for (int h = 0; h < hd; ++h) {
          acc += p.w_in[static_cast<std::size_t>(h) * in_dim + static_cast<std::size_t>(col)] *
                 dpre[static_cast<std::size_t>(h)];
        }
        erow[e] += acc;
      }
    }
  }
  return grad;
}

GradientVector backward_hidden(const ToyModel& model, const ForwardTrace& trace,
                               std::span<const double> hidden_grad) {
  const ModelConfig& cfg = model.config();
  const Parameters& p = model.params();
  const int n = trace.positions();
  const int hd = cfg.hidden_dim;
  if (static_cast<int>(hidden_grad.size()) != n * hd) {
    throw ShapeError("backward_hidden: gradient length mismatch");
  }
  const int window = cfg.context_window;
  const int ed = cfg.embed_dim;
  const int in_dim = window * ed;

  GradientVector grad = Parameters::zeros(cfg);
  std::vector<double> dpre(static_cast<std::size_t>(hd));
  for (int k = 0; k < n; ++k) {
    const double* hidden = &trace.hidden[static_cast<std::size_t>(k) * hd];
    const double* dh = &hidden_grad[static_cast<std::size_t>(k) * hd];
    const double* ecat = &trace.embed_cat[static_cast<std::size_t>(k) * in_dim];
    const TokenId* rows = &trace.contexts[static_cast<std::size_t>(k) * window];
    for (int h = 0; h < hd; ++h) {
      dpre[static_cast<std::size_t>(h)] = dh[h] * (1.0 - hidden[h] * hidden[h]);
    }
    for (int h = 0; h < hd; ++h) {
      const double d = dpre[static_cast<std::size_t>(h)];
      if (d == 0.0) continue;
      double* grow = &grad.w_in[static_cast<std::size_t>(h) * in_dim];
      for (int i = 0; i < in_dim; ++i) grow[i] += d * ecat[i];
      grad.b_in[static_cast<std::size_t>(h)] += d;
    }
    for (int w = 0; w < window; ++w) {
      double* erow = &grad.embed[static_cast<std::size_t>(rows[w]) * ed];
      for (int e = 0; e < ed; ++e) {
        double acc = 0.0;
        const int col = w * ed + e;
        for (int h = 0; h < hd; ++h) {
          acc += p.w_in[static_cast<std::size_t>(h) * in_dim + static_cast<std::size_t>(col)] *
                 dpre[static_cast<std::size_t>(h)];
        }
        erow[e] += acc;
      }
    }
  }
  return grad;
}

TokenSequence greedy_decode(const ToyModel& model, std::span<const TokenId> prompt,
                            int max_len) {
  if (max_len < 1) throw ParameterError("greedy_decode: max_len must be >= 1");
  const ModelConfig& cfg = model.config();
  check_tokens(cfg, prompt);

  const int window = cfg.context_window;
  const int in_dim = window * cfg.embed_dim;
  std::vector<TokenId> rows(static_cast<std::size_t>(window));
  std::vector<double> ecat(static_cast<std::size_t>(in_dim));
  std::vector<double> hidden(static_cast<std::size_t>(cfg.hidden_dim));
  std::vector<double> dist(static_cast<std::size_t>(cfg.vocab_size));

  TokenSequence seq(prompt.begin(), prompt.end());
  TokenSequence out;
  for (int step = 0; step < max_len; ++step) {
    for (int w = 0; w < window; ++w) {
      const long idx = static_cast<long>(seq.size()) - window + w;
      rows[static_cast<std::size_t>(w)] =
          idx < 0 ? static_cast<TokenId>(cfg.vocab_size) : seq[static_cast<std::size_t>(idx)];
    }
    eval_position(cfg, model.params(), rows.data(), ecat.data(), hidden.data(),
                  dist.data());
    TokenId best = 0;
    for (int v = 1; v < cfg.vocab_size; ++v) {
      if (dist[static_cast<std::size_t>(v)] > dist[static_cast<std::size_t>(best)]) best = v;
    }
    out.push_back(best);
    seq.push_back(best);
  }
  return out;
}

OptimizerState OptimizerState::make(OptimizerKind kind, const ModelConfig& cfg) {
  OptimizerState s;
  s.kind = kind;
  if (kind == OptimizerKind::adam) {
    s.m = Parameters::zeros(cfg);
    s.v = Parameters::zeros(cfg);
  }
  return s;
}

void optimizer_step(ToyModel& model, const GradientVector& grad,
                    OptimizerState& state, double lr) {
  if (lr <= 0.0) throw ParameterError("optimizer_step: lr must be positive");
  if (!grad.all_finite()) {
    throw TrainingError("optimizer_step: non-finite gradient, training aborted");
  }
  Parameters& p = model.params();
  state.step += 1;
  if (state.kind == OptimizerKind::sgd) {
    p.axpy(-lr, grad);
    return;
  }
  const double b1 = state.adam_beta1;
  const double b2 = state.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto update = [&](std::vector<double>& theta, std::vector<double>& m,
                    std::vector<double>& v, const std::vector<double>& g) {
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + state.adam_eps);
    }
  };
  update(p.embed, state.m.embed, state.v.embed, grad.embed);
  update(p.w_in, state.m.w_in, state.v.w_in, grad.w_in);
  update(p.b_in, state.m.b_in, state.v.b_in, grad.b_in);
  update(p.w_out, state.m.w_out, state.v.w_out, grad.w_out);
  update(p.b_out, state.m.b_out, state.v.b_out, grad.b_out);
}

double scheduled_lr(const TrainSchedule& schedule, long step, long total_steps) {
  const long warmup = std::lround(schedule.warmup_fraction * static_cast<double>(total_steps));
  if (warmup > 0 && step < warmup) {
    return schedule.base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  }
  const long decay_span = std::max<long>(total_steps - warmup, 1);
  const double frac =
      static_cast<double>(total_steps - step) / static_cast<double>(decay_span);
  return schedule.base_lr * std::clamp(frac, 0.0, 1.0);
}

TrainResult finetune(ToyModel& model, const Corpus& corpus,
                     std::span<const int> subset, const TrainSchedule& schedule) {
  if (subset.empty()) throw ParameterError("finetune: empty training subset");
  if (schedule.batch_size < 1) throw ParameterError("finetune: batch_size must be >= 1");

  TrainResult result;
  result.pair_ids_seen.assign(subset.begin(), subset.end());
  std::sort(result.pair_ids_seen.begin(), result.pair_ids_seen.end());
  result.pair_ids_seen.erase(
      std::unique(result.pair_ids_seen.begin(), result.pair_ids_seen.end()),
      result.pair_ids_seen.end());
  if (schedule.epochs == 0) return result;
  if (schedule.epochs < 0) throw ParameterError("finetune: epochs must be >= 0");

  const long steps_per_epoch =
      (static_cast<long>(subset.size()) + schedule.batch_size - 1) / schedule.batch_size;
  const long total_steps = steps_per_epoch * schedule.epochs;
  OptimizerState opt = OptimizerState::make(schedule.optimizer, model.config());
  Rng shuffle_rng(schedule.shuffle_seed);

  std::vector<int> order(subset.begin(), subset.end());
  long step = 0;
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    shuffle_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(schedule.batch_size)) {
      const std::size_t end = std::min(order.size(), at + static_cast<std::size_t>(schedule.batch_size));
      GradientVector grad = Parameters::zeros(model.config());
      const double inv_batch = 1.0 / static_cast<double>(end - at);
      for (std::size_t i = at; i < end; ++i) {
        const QAPair& pair = corpus.pairs[static_cast<std::size_t>(order[i])];
        ForwardTrace trace = forward(model, pair);
        // mean-per-token NLL: coefficient -1/|y| on each log p_k
        std::vector<double> w(static_cast<std::size_t>(trace.positions()),
                              inv_batch / trace.positions());
        grad.axpy(1.0, backward_weighted(model, trace, w, -1));
      }
      optimizer_step(model, grad, opt, scheduled_lr(schedule, step, total_steps));
      ++step;
    }
    double nll = 0.0;
    long tokens = 0;
    for (int id : subset) {
      ForwardTrace trace = forward(model, corpus.pairs[static_cast<std::size_t>(id)]);
      for (double lp : trace.token_log_prob) nll -= lp;
      tokens += trace.positions();
    }
    const double mean_nll = nll / static_cast<double>(tokens);
    if (!std::isfinite(mean_nll)) {
      throw TrainingError("finetune: training diverged (non-finite NLL)");
    }
    result.epoch_mean_nll.push_back(mean_nll);
  }
  return result;
}

void save_checkpoint(const ToyModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_checkpoint: cannot open " + path.string());
  out.write("TOYLM001", 8);
  const ModelConfig& cfg = model.config();
  write_u32le(out, static_cast<std::uint32_t>(cfg.vocab_size));
  write_u32le(out, static_cast<std::uint32_t>(cfg.context_window));
  write_u32le(out, static_cast<std::uint32_t>(cfg.embed_dim));
  write_u32le(out, static_cast<std::uint32_t>(cfg.hidden_dim));
  const Parameters& p = model.params();
  for (const auto* blk : {&p.embed, &p.w_in, &p.b_in, &p.w_out, &p.b_out}) {
    for (double v : *blk) write_f64le(out, v);
  }
  if (!out) throw IoError("save_checkpoint: write failed for " + path.string());
}

ToyModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "TOYLM001", 8) != 0) {
    throw IoError("load_checkpoint: bad magic in " + path.string());
  }
  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(read_u32le(in));
  cfg.context_window = static_cast<int>(read_u32le(in));
  cfg.embed_dim = static_cast<int>(read_u32le(in));
  cfg.hidden_dim = static_cast<int>(read_u32le(in));
  ToyModel model(cfg);
  Parameters& p = model.params();
  for (auto* blk : {&p.embed, &p.w_in, &p.b_in, &p.w_out, &p.b_out}) {
    for (double& v : *blk) v = read_f64le(in);
  }
  if (!in) throw IoError("load_checkpoint: truncated file " + path.string());
  return model;
}

}  // namespace unlab

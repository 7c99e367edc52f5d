#include "unlab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace unlab {

namespace {

double softplus(double x) {  // log(1 + e^x), overflow-safe
  if (x > 0.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

WeightVector ones(int n) { return WeightVector(static_cast<std::size_t>(n), 1.0); }

}  // namespace

const char* family_name(ObjectiveFamily f) {
  switch (f) {
    case ObjectiveFamily::ga: return "ga";
    case ObjectiveFamily::reweighted_ga: return "reweighted_ga";
    case ObjectiveFamily::po: return "po";
    case ObjectiveFamily::dpo: return "dpo";
    case ObjectiveFamily::npo: return "npo";
    case ObjectiveFamily::simnpo: return "simnpo";
    case ObjectiveFamily::rmu: return "rmu";
  }
  return "?";
}

ObjectiveFamily family_from_name(const std::string& name) {
  for (ObjectiveFamily f :
       {ObjectiveFamily::ga, ObjectiveFamily::reweighted_ga, ObjectiveFamily::po,
        ObjectiveFamily::dpo, ObjectiveFamily::npo, ObjectiveFamily::simnpo,
        ObjectiveFamily::rmu}) {
    if (name == family_name(f)) return f;
  }
  throw ConfigError("unknown objective family '" + name + "'");
}

double ObjectiveSpec::effective_beta() const {
  if (beta) return *beta;
  switch (family) {
    case ObjectiveFamily::dpo: return 0.3;
    case ObjectiveFamily::simnpo: return 2.5;
    default: return 0.1;
  }
}

void ObjectiveSpec::validate() const {
  if ((family == ObjectiveFamily::reweighted_ga) != criterion.has_value()) {
    throw ConfigError("objective: criterion must be present exactly for reweighted_ga");
  }
  if (criterion) criterion->validate();
  if (sampling) {
    if (family != ObjectiveFamily::ga && family != ObjectiveFamily::reweighted_ga) {
      throw ConfigError("objective: hard sampling applies to ga/reweighted_ga only");
    }
    sampling->validate();
  }
  if (group_count < 1) throw ConfigError("objective: group_count must be >= 1");
  if (retain_lambda < 0.0) throw ConfigError("objective: retain_lambda must be >= 0");
  if ((family == ObjectiveFamily::dpo || family == ObjectiveFamily::npo ||
       family == ObjectiveFamily::simnpo) &&
      !(effective_beta() > 0.0)) {
    throw ConfigError("objective: beta must be positive for dpo/npo/simnpo");
  }
}

LossResult loss_ga(const ToyModel& model, const ForwardTrace& trace) {
  LossResult r;
  r.loss = trace.sequence_log_prob();
  r.grad = backward_weighted(model, trace, ones(trace.positions()), +1);
  return r;
}

LossResult loss_reweighted_ga(const ToyModel& model, const ForwardTrace& trace,
                              const WeightVector& weights) {
  if (static_cast<int>(weights.size()) != trace.positions()) {
    throw ShapeError("loss_reweighted_ga: weight length mismatch");
  }
  LossResult r;
  r.loss = 0.0;
  for (int k = 0; k < trace.positions(); ++k) {
    r.loss += weights[static_cast<std::size_t>(k)] *
              trace.token_log_prob[static_cast<std::size_t>(k)];
  }
  r.grad = backward_weighted(model, trace, weights, +1);
  return r;
}

LossResult loss_gd(const LossResult& forget, const ToyModel& model,
                   const ForwardTrace& retain_trace, double lambda) {
  if (lambda < 0.0) throw ParameterError("loss_gd: lambda must be >= 0");
  if (lambda == 0.0) return forget;
  LossResult r = forget;
  r.loss -= lambda * retain_trace.sequence_log_prob();
  r.grad.axpy(lambda,
              backward_weighted(model, retain_trace, ones(retain_trace.positions()), -1));
  return r;
}

LossResult loss_po(const ToyModel& model, const ForwardTrace& idk_trace) {
  LossResult r;
  r.loss = -idk_trace.sequence_log_prob();
  r.grad = backward_weighted(model, idk_trace, ones(idk_trace.positions()), -1);
  return r;
}

LossResult loss_dpo(const ToyModel& model, const ForwardTrace& trace_win,
                    const ForwardTrace& trace_lose, const ForwardTrace& ref_win,
                    const ForwardTrace& ref_lose, double beta) {
  if (!(beta > 0.0)) throw ParameterError("loss_dpo: beta must be positive");
  const double z = beta * ((trace_win.sequence_log_prob() - ref_win.sequence_log_prob()) -
                           (trace_lose.sequence_log_prob() - ref_lose.sequence_log_prob()));
  LossResult r;
  r.loss = (2.0 / beta) * softplus(-z);
  const double coef = 2.0 * sigmoid(-z);
  r.grad = backward_weighted(model, trace_win, ones(trace_win.positions()), +1);
  r.grad.scale(-coef);
  r.grad.axpy(coef,
              backward_weighted(model, trace_lose, ones(trace_lose.positions()), +1));
  return r;
}

LossResult loss_npo(const ToyModel& model, const ForwardTrace& trace_cur,
                    const ForwardTrace& trace_ref, double beta) {
  if (!(beta > 0.0)) throw ParameterError("loss_npo: beta must be positive");
  const double t = trace_cur.sequence_log_prob() - trace_ref.sequence_log_prob();
  LossResult r;
  r.loss = (2.0 / beta) * softplus(beta * t);
  const double coef = 2.0 * sigmoid(beta * t);  // the implicit instance weight
  r.grad = backward_weighted(model, trace_cur, ones(trace_cur.positions()), +1);
  r.grad.scale(coef);
  return r;
}

LossResult loss_simnpo(const ToyModel& model, const ForwardTrace& trace, double beta,
                       double gamma) {
  if (!(beta > 0.0)) throw ParameterError("loss_simnpo: beta must be positive");
  const int n = trace.positions();
  if (n < 1) throw ParameterError("loss_simnpo: empty trace");
  const double z = -(beta / n) * trace.sequence_log_prob() - gamma;
  LossResult r;
  r.loss = (2.0 / beta) * softplus(-z);
  const double coef = (2.0 / n) * sigmoid(-z);
  r.grad = backward_weighted(model, trace, ones(n), +1);
  r.grad.scale(coef);
  return r;
}

std::vector<double> rmu_direction(int hidden_dim, std::uint64_t seed) {
  if (hidden_dim < 1) throw ParameterError("rmu_direction: hidden_dim must be >= 1");
  Rng rng(Rng::mix(seed, 0x726d755f75ull));
  std::vector<double> u(static_cast<std::size_t>(hidden_dim));
  for (double& v : u) v = rng.unit();
  return u;
}

LossResult loss_rmu(const ToyModel& model, const ForwardTrace& trace,
                    std::span<const double> u, double rmu_beta) {
  const int n = trace.positions();
  if (n < 2) throw MetricError("loss_rmu: needs at least two answer tokens");
  const int hd = model.config().hidden_dim;
  if (static_cast<int>(u.size()) != hd) {
    throw ShapeError("loss_rmu: direction length mismatch");
  }
  const int m = n - 1;
  std::vector<double> hidden_grad(static_cast<std::size_t>(n) * hd, 0.0);
  double loss = 0.0;
  for (int k = 0; k < m; ++k) {
    const double* phi = &trace.hidden[static_cast<std::size_t>(k) * hd];
    double* dphi = &hidden_grad[static_cast<std::size_t>(k) * hd];
    for (int h = 0; h < hd; ++h) {
      const double diff = phi[h] - rmu_beta * u[static_cast<std::size_t>(h)];
      loss += diff * diff;
      dphi[h] = 2.0 * diff / m;
    }
  }
  LossResult r;
  r.loss = loss / m;
  r.grad = backward_hidden(model, trace, hidden_grad);
  return r;
}

std::string telemetry_csv_header() {
  return "step,forget_loss,retain_loss,grad_norm,w_min,w_mean,w_max";
}

std::string telemetry_csv_row(const StepTelemetry& t) {
  std::ostringstream out;
  out << t.step << ',' << format_double(t.forget_loss) << ','
      << format_double(t.retain_loss) << ',' << format_double(t.grad_norm) << ','
      << format_double(t.w_min) << ',' << format_double(t.w_mean) << ','
      << format_double(t.w_max);
  return out.str();
}

StepTelemetry unlearn_step(ToyModel& model, const Corpus& corpus,
                           std::span<const int> forget_batch,
                           std::span<const int> retain_batch,
                           const ObjectiveSpec& spec, OptimizerState& opt, double lr,
                           long step, UnlearnContext& ctx) {
  spec.validate();
  if (forget_batch.empty()) throw ParameterError("unlearn_step: empty forget batch");
  if (spec.retain_lambda > 0.0 && retain_batch.empty()) {
    throw ParameterError("unlearn_step: retain batch required when lambda > 0");
  }
  if (spec.needs_reference() && ctx.reference == nullptr) {
    throw ConfigError("unlearn_step: objective needs a reference snapshot");
  }
  if (spec.family == ObjectiveFamily::rmu && ctx.rmu_u.empty()) {
    ctx.rmu_u = rmu_direction(model.config().hidden_dim, spec.rmu_seed);
  }
  const int vocab = corpus.vocab_size;

  const std::size_t nb = forget_batch.size();
  std::vector<ForwardTrace> traces;
  traces.reserve(nb);
  for (int id : forget_batch) {
    traces.push_back(forward(model, corpus.pairs[static_cast<std::size_t>(id)]));
  }

  const bool weighted_family = spec.family == ObjectiveFamily::ga ||
                               spec.family == ObjectiveFamily::reweighted_ga;

  // criterion -> mask product -> granularity, in that order
  std::vector<WeightVector> weights(nb);
  if (weighted_family) {
    for (std::size_t i = 0; i < nb; ++i) {
      const QAPair& pair = corpus.pairs[static_cast<std::size_t>(forget_batch[i])];
      const ForwardTrace& tr = traces[i];
      WeightVector w;
      if (spec.family == ObjectiveFamily::ga) {
        w = ones(tr.positions());
      } else {
        const CriterionSpec& c = *spec.criterion;
        switch (c.kind) {
          case CriterionKind::uniform: w = ones(tr.positions()); break;
          case CriterionKind::importance:
            w = weight_importance(pair.key_positions, tr.positions(), c.p);
            break;
          case CriterionKind::saturation:
            w = weight_saturation(tr.token_prob, c.tau);
            break;
          case CriterionKind::wga:
            w = weight_wga(tr.token_prob, c.effective_beta());
            break;
          case CriterionKind::simsat:
            w = weight_simsat(tr.token_prob, c.effective_beta());
            break;
          case CriterionKind::simimp:
            w = weight_simimp(tr.token_prob, c.effective_beta());
            break;
          case CriterionKind::satimp:
            w = weight_satimp(tr.token_prob, c.beta1, c.beta2);
            break;
          case CriterionKind::npo: {
            if (ctx.reference == nullptr) {
              throw ConfigError("unlearn_step: npo criterion needs a reference snapshot");
            }
            const ForwardTrace ref = forward(*ctx.reference, pair);
            const double wi =
                weight_npo(std::max(std::exp(tr.sequence_log_prob()), 1e-300),
                           std::max(std::exp(ref.sequence_log_prob()), 1e-300),
                           c.effective_beta());
            w.assign(static_cast<std::size_t>(tr.positions()), wi);
            break;
          }
          case CriterionKind::simnpo: {
            const double wi =
                weight_simnpo(std::max(std::exp(tr.sequence_log_prob()), 1e-300),
                              c.effective_beta(), tr.positions());
            w.assign(static_cast<std::size_t>(tr.positions()), wi);
            break;
          }
        }
      }
      if (spec.sampling) {
        const std::uint64_t salt =
            Rng::mix(static_cast<std::uint64_t>(step),
                     static_cast<std::uint64_t>(forget_batch[i]) + 1);
        w = combine_weights(w, hard_sample_mask(tr.token_prob, *spec.sampling, salt));
      }
      if (spec.granularity != Granularity::batch) {
        w = aggregate_granularity(w, spec.granularity, spec.group_count);
      }
      weights[i] = std::move(w);
    }
    if (spec.granularity == Granularity::batch) {
      double sum = 0.0;
      for (const auto& w : weights) {
        sum += std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
      }
      const double batch_mean = sum / static_cast<double>(nb);
      for (auto& w : weights) w.assign(w.size(), batch_mean);
    }
  } else {
    for (std::size_t i = 0; i < nb; ++i) weights[i] = ones(traces[i].positions());
  }

  GradientVector total = Parameters::zeros(model.config());
  double forget_loss = 0.0;
  const double inv_b = 1.0 / static_cast<double>(nb);
  std::vector<double> stat_weights;

  for (std::size_t i = 0; i < nb; ++i) {
    const QAPair& pair = corpus.pairs[static_cast<std::size_t>(forget_batch[i])];
    const ForwardTrace& tr = traces[i];
    LossResult lr_pair;
    switch (spec.family) {
      case ObjectiveFamily::ga:
      case ObjectiveFamily::reweighted_ga:
        lr_pair = loss_reweighted_ga(model, tr, weights[i]);
        break;
      case ObjectiveFamily::po: {
        const TokenSequence idk = idk_answer(vocab);
        lr_pair = loss_po(model, forward(model, pair.question, idk));
        break;
      }
      case ObjectiveFamily::dpo: {
        const TokenSequence idk = idk_answer(vocab);
        const ForwardTrace win = forward(model, pair.question, idk);
        const ForwardTrace ref_win = forward(*ctx.reference, pair.question, idk);
        const ForwardTrace ref_lose = forward(*ctx.reference, pair);
        lr_pair = loss_dpo(model, win, tr, ref_win, ref_lose, spec.effective_beta());
        break;
      }
      case ObjectiveFamily::npo: {
        const ForwardTrace ref = forward(*ctx.reference, pair);
        const double beta = spec.effective_beta();
        lr_pair = loss_npo(model, tr, ref, beta);
        // the implicit instance weight, for telemetry
        const double t = tr.sequence_log_prob() - ref.sequence_log_prob();
        weights[i].assign(static_cast<std::size_t>(tr.positions()),
                          2.0 * sigmoid(beta * t));
        break;
      }
      case ObjectiveFamily::simnpo: {
        const double beta = spec.effective_beta();
        lr_pair = loss_simnpo(model, tr, beta, spec.gamma);
        weights[i].assign(
            static_cast<std::size_t>(tr.positions()),
            weight_simnpo(std::max(std::exp(tr.sequence_log_prob()), 1e-300), beta,
                          tr.positions()));
        break;
      }
      case ObjectiveFamily::rmu:
        lr_pair = loss_rmu(model, tr, ctx.rmu_u, spec.rmu_beta);
        break;
    }
    forget_loss += inv_b * lr_pair.loss;
    total.axpy(inv_b, lr_pair.grad);

    for (double w : weights[i]) stat_weights.push_back(w);
    if (ctx.loss_weight_trace != nullptr && weighted_family) {
      std::vector<double> nll(static_cast<std::size_t>(tr.positions()));
      for (int k = 0; k < tr.positions(); ++k) {
        nll[static_cast<std::size_t>(k)] = -tr.token_log_prob[static_cast<std::size_t>(k)];
      }
      record_trace(*ctx.loss_weight_trace, step, forget_batch[i], nll, weights[i],
                   pair.key_positions);
    }
    if (ctx.ktl_values != nullptr && !pair.key_positions.empty()) {
      for (double k : ktl_index(tr.token_prob, pair.key_positions)) {
        ctx.ktl_values->push_back(k);
      }
    }
  }

  double retain_loss = 0.0;
  if (spec.retain_lambda > 0.0) {
    const double inv_r = 1.0 / static_cast<double>(retain_batch.size());
    for (int id : retain_batch) {
      const ForwardTrace tr = forward(model, corpus.pairs[static_cast<std::size_t>(id)]);
      retain_loss -= inv_r * tr.sequence_log_prob();
      total.axpy(spec.retain_lambda * inv_r,
                 backward_weighted(model, tr, ones(tr.positions()), -1));
    }
  }

  const double total_loss = forget_loss + spec.retain_lambda * retain_loss;
  if (!std::isfinite(total_loss)) {
    throw TrainingError("unlearn_step: non-finite loss, aborting");
  }

  StepTelemetry tele;
  tele.step = step;
  tele.forget_loss = forget_loss;
  tele.retain_loss = retain_loss;
  tele.grad_norm = std::sqrt(total.squared_norm());
  if (stat_weights.empty()) {
    tele.w_min = tele.w_mean = tele.w_max = 1.0;
  } else {
    tele.w_min = *std::min_element(stat_weights.begin(), stat_weights.end());
    tele.w_max = *std::max_element(stat_weights.begin(), stat_weights.end());
    tele.w_mean = std::accumulate(stat_weights.begin(), stat_weights.end(), 0.0) /
                  static_cast<double>(stat_weights.size());
  }

  optimizer_step(model, total, opt, lr);
  return tele;
}

}  // namespace unlab

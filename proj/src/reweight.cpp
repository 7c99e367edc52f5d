#include "unlab/reweight.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace unlab {

namespace {

void check_probs(std::span<const double> probs) {
  for (double p : probs) {
    if (!std::isfinite(p) || p < 0.0 || p > 1.0) {
      throw ParameterError("reweight: probabilities must lie in [0, 1]");
    }
  }
}

std::vector<int> sorted_positions(std::span<const double> probs, bool ascending) {
  std::vector<int> idx(probs.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    const double pa = probs[static_cast<std::size_t>(a)];
    const double pb = probs[static_cast<std::size_t>(b)];
    if (pa != pb) return ascending ? pa < pb : pa > pb;
    return a < b;  // ties by lower position
  });
  return idx;
}

}  // namespace

const char* criterion_name(CriterionKind kind) {
  switch (kind) {
    case CriterionKind::uniform: return "uniform";
    case CriterionKind::importance: return "importance";
    case CriterionKind::saturation: return "saturation";
    case CriterionKind::wga: return "wga";
    case CriterionKind::simsat: return "simsat";
    case CriterionKind::simimp: return "simimp";
    case CriterionKind::satimp: return "satimp";
    case CriterionKind::npo: return "npo";
    case CriterionKind::simnpo: return "simnpo";
  }
  return "?";
}

CriterionKind criterion_from_name(const std::string& name) {
  for (CriterionKind k :
       {CriterionKind::uniform, CriterionKind::importance, CriterionKind::saturation,
        CriterionKind::wga, CriterionKind::simsat, CriterionKind::simimp,
        CriterionKind::satimp, CriterionKind::npo, CriterionKind::simnpo}) {
    if (name == criterion_name(k)) return k;
  }
  throw ConfigError("unknown criterion '" + name + "'");
}

double CriterionSpec::effective_beta() const {
  if (beta) return *beta;
  switch (kind) {
    case CriterionKind::npo: return 0.1;
    case CriterionKind::simnpo: return 2.5;
    default: return 2.0;
  }
}

void CriterionSpec::validate() const {
  switch (kind) {
    case CriterionKind::importance:
      if (!(p > 0.0 && p < 1.0)) {
        throw ParameterError("importance: p must lie in (0,1)");
      }
      break;
    case CriterionKind::saturation:
      if (!(tau > 0.0)) throw ParameterError("saturation: tau must be positive");
      break;
    case CriterionKind::wga:
    case CriterionKind::simsat:
    case CriterionKind::simimp:
      if (effective_beta() < 0.0) throw ParameterError("criterion: beta must be >= 0");
      break;
    case CriterionKind::satimp:
      if (beta1 < 0.0 || beta2 < 0.0) {
        throw ParameterError("satimp: beta1 and beta2 must be >= 0");
      }
      break;
    case CriterionKind::npo:
    case CriterionKind::simnpo:
      if (!(effective_beta() > 0.0)) {
        throw ParameterError("criterion: beta must be positive");
      }
      break;
    case CriterionKind::uniform:
      break;
  }
}

const char* sampling_name(SamplingStrategy s) {
  switch (s) {
    case SamplingStrategy::topk: return "topk";
    case SamplingStrategy::bottomk: return "bottomk";
    case SamplingStrategy::random: return "random";
  }
  return "?";
}

SamplingStrategy sampling_from_name(const std::string& name) {
  for (SamplingStrategy s :
       {SamplingStrategy::topk, SamplingStrategy::bottomk, SamplingStrategy::random}) {
    if (name == sampling_name(s)) return s;
  }
  throw ConfigError("unknown sampling strategy '" + name + "'");
}

void SamplingSpec::validate() const {
  if (!(beta > 0.0 && beta <= 1.0)) {
    throw ParameterError("sampling: beta must lie in (0, 1]");
  }
}

const char* granularity_name(Granularity g) {
  switch (g) {
    case Granularity::token: return "token";
    case Granularity::group: return "group";
    case Granularity::instance: return "instance";
    case Granularity::batch: return "batch";
  }
  return "?";
}

Granularity granularity_from_name(const std::string& name) {
  for (Granularity g : {Granularity::token, Granularity::group, Granularity::instance,
                        Granularity::batch}) {
    if (name == granularity_name(g)) return g;
  }
  throw ConfigError("unknown granularity '" + name + "'");
}

WeightVector weight_importance(const std::vector<int>& key_positions,
                               int answer_len, double p) {
  if (!(p > 0.0 && p < 1.0)) throw ParameterError("weight_importance: p must lie in (0,1)");
  if (answer_len < 1) throw ParameterError("weight_importance: empty answer");
  WeightVector w(static_cast<std::size_t>(answer_len), p);
  for (int pos : key_positions) {
    if (pos < 0 || pos >= answer_len) {
      throw ParameterError("weight_importance: key position out of range");
    }
    w[static_cast<std::size_t>(pos)] = 1.0 - p;
  }
  return w;
}

WeightVector weight_saturation(std::span<const double> probs, double tau) {
  if (!(tau > 0.0)) throw ParameterError("weight_saturation: tau must be positive");
  check_probs(probs);
  WeightVector w(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) w[k] = probs[k] / (probs[k] + tau);
  return w;
}

WeightVector weight_wga(std::span<const double> probs, double beta) {
  if (beta < 0.0) throw ParameterError("weight_wga: beta must be >= 0");
  check_probs(probs);
  WeightVector w(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) w[k] = std::pow(probs[k], beta);
  return w;
}

WeightVector weight_simsat(std::span<const double> probs, double beta) {
  if (beta < 0.0) throw ParameterError("weight_simsat: beta must be >= 0");
  check_probs(probs);
  WeightVector w(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) w[k] = std::pow(probs[k], beta);
  return w;
}

WeightVector weight_simimp(std::span<const double> probs, double beta) {
  if (beta < 0.0) throw ParameterError("weight_simimp: beta must be >= 0");
  check_probs(probs);
  WeightVector w(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) w[k] = std::pow(1.0 - probs[k], beta);
  return w;
}

WeightVector weight_satimp(std::span<const double> probs, double beta1, double beta2) {
  if (beta1 < 0.0 || beta2 < 0.0) {
    throw ParameterError("weight_satimp: beta1 and beta2 must be >= 0");
  }
  check_probs(probs);
  WeightVector w(probs.size());
  for (std::size_t k = 0; k < probs.size(); ++k) {
    w[k] = std::pow(probs[k], beta1) * std::pow(1.0 - probs[k], beta2);
  }
  return w;
}

double weight_npo(double seq_prob_cur, double seq_prob_ref, double beta) {
  if (!(beta > 0.0)) throw ParameterError("weight_npo: beta must be positive");
  if (!(seq_prob_cur > 0.0 && seq_prob_cur <= 1.0)) {
    throw ParameterError("weight_npo: current probability must lie in (0,1]");
  }
  if (seq_prob_ref <= 0.0) seq_prob_ref = 1e-300;  // numeric guard
  if (seq_prob_ref > 1.0) {
    throw ParameterError("weight_npo: reference probability must lie in (0,1]");
  }
  // the powers can underflow to 0 for tiny sequence probabilities; floor at
  // the smallest subnormal so the ratio keeps its limits instead of 0/0
  const double tiny = std::numeric_limits<double>::denorm_min();
  const double a = std::max(std::pow(seq_prob_cur, beta), tiny);
  const double b = std::max(std::pow(seq_prob_ref, beta), tiny);
  return 2.0 * a / (a + b);
}

double weight_simnpo(double seq_prob, double beta, int answer_len) {
  if (!(beta > 0.0)) throw ParameterError("weight_simnpo: beta must be positive");
  if (answer_len < 1) throw ParameterError("weight_simnpo: answer_len must be >= 1");
  if (!(seq_prob > 0.0 && seq_prob <= 1.0)) {
    throw ParameterError("weight_simnpo: probability must lie in (0,1]");
  }
  const double a = std::max(std::pow(seq_prob, beta / answer_len),
                            std::numeric_limits<double>::denorm_min());
  return 2.0 * a / (a + 1.0) / answer_len;
}

WeightVector combine_weights(const WeightVector& a, const WeightVector& b) {
  if (a.size() != b.size()) throw ShapeError("combine_weights: length mismatch");
  WeightVector w(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) w[k] = a[k] * b[k];
  return w;
}

WeightVector hard_sample_mask(std::span<const double> probs, const SamplingSpec& spec,
                              std::uint64_t salt) {
  spec.validate();
  check_probs(probs);
  const int n = static_cast<int>(probs.size());
  if (n == 0) throw ParameterError("hard_sample_mask: empty sequence");
  const int s = std::max(1, static_cast<int>(std::floor(spec.beta * n)));

  WeightVector mask(probs.size(), 0.0);
  switch (spec.strategy) {
    case SamplingStrategy::topk: {
      const std::vector<int> order = sorted_positions(probs, /*ascending=*/true);
      for (int i = 0; i < s; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1.0;
      break;
    }
    case SamplingStrategy::bottomk: {
      const std::vector<int> order = sorted_positions(probs, /*ascending=*/false);
      for (int i = 0; i < s; ++i) mask[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = 1.0;
      break;
    }
    case SamplingStrategy::random: {
      std::vector<int> idx(probs.size());
      std::iota(idx.begin(), idx.end(), 0);
      Rng rng(Rng::mix(spec.seed, salt));
      rng.shuffle(idx);
      for (int i = 0; i < s; ++i) mask[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])] = 1.0;
      break;
    }
  }
  return mask;
}

WeightVector aggregate_granularity(const WeightVector& weights, Granularity level,
                                   int group_count,
                                   const std::vector<WeightVector>& batch_peers) {
  if (weights.empty()) throw ParameterError("aggregate_granularity: empty weights");
  const int n = static_cast<int>(weights.size());
  switch (level) {
    case Granularity::token:
      return weights;
    case Granularity::instance: {
      const double mean = std::accumulate(weights.begin(), weights.end(), 0.0) / n;
      return WeightVector(weights.size(), mean);
    }
    case Granularity::group: {
      if (group_count < 1 || group_count > n) {
        throw ParameterError("aggregate_granularity: group_count must lie in [1, |weights|]");
      }
      const std::vector<int> order = sorted_positions(weights, /*ascending=*/false);
      WeightVector out(weights.size(), 0.0);
      const int base = n / group_count;
      const int extra = n % group_count;  // remainder goes to earlier blocks
      int at = 0;
      for (int g = 0; g < group_count; ++g) {
        const int size = base + (g < extra ? 1 : 0);
        double sum = 0.0;
        for (int i = at; i < at + size; ++i) {
          sum += weights[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
        }
        const double mean = sum / size;
        for (int i = at; i < at + size; ++i) {
          out[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = mean;
        }
        at += size;
      }
      return out;
    }
    case Granularity::batch: {
      double sum = std::accumulate(weights.begin(), weights.end(), 0.0) /
                   static_cast<double>(n);
      double count = 1.0;
      for (const auto& peer : batch_peers) {
        if (peer.empty()) throw ParameterError("aggregate_granularity: empty batch peer");
        sum += std::accumulate(peer.begin(), peer.end(), 0.0) /
               static_cast<double>(peer.size());
        count += 1.0;
      }
      return WeightVector(weights.size(), sum / count);
    }
  }
  throw ParameterError("aggregate_granularity: unknown level");
}

std::vector<double> ktl_index(std::span<const double> probs,
                              const std::vector<int>& key_positions) {
  if (key_positions.empty()) throw MetricError("ktl_index: empty key set");
  check_probs(probs);
  const int n = static_cast<int>(probs.size());
  const std::vector<int> order = sorted_positions(probs, /*ascending=*/false);
  std::vector<int> rank(probs.size(), 0);  // 1-based descending rank
  for (int r = 0; r < n; ++r) {
    rank[static_cast<std::size_t>(order[static_cast<std::size_t>(r)])] = r + 1;
  }
  std::vector<double> out;
  out.reserve(key_positions.size());
  for (int pos : key_positions) {
    if (pos < 0 || pos >= n) throw MetricError("ktl_index: key position out of range");
    out.push_back(static_cast<double>(rank[static_cast<std::size_t>(pos)]) / n);
  }
  return out;
}

std::string LossWeightTrace::to_csv() const {
  std::ostringstream out;
  out << "step,pair_id,token_pos,nll,weight,is_key\n";
  for (const TraceRow& r : rows_) {
    out << r.step << ',' << r.pair_id << ',' << r.token_pos << ','
        << format_double(r.nll) << ',' << format_double(r.weight) << ','
        << (r.is_key ? 1 : 0) << '\n';
  }
  return out.str();
}

void LossWeightTrace::save_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("LossWeightTrace: cannot open " + path.string());
  out << to_csv();
}

LossWeightTrace LossWeightTrace::load_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("LossWeightTrace: cannot open " + path.string());
  LossWeightTrace trace;
  std::string line;
  std::getline(in, line);  // header
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    TraceRow r;
    std::getline(row, field, ','); r.step = std::stol(field);
    std::getline(row, field, ','); r.pair_id = std::stoi(field);
    std::getline(row, field, ','); r.token_pos = std::stoi(field);
    std::getline(row, field, ','); r.nll = std::stod(field);
    std::getline(row, field, ','); r.weight = std::stod(field);
    std::getline(row, field, ','); r.is_key = field == "1";
    trace.append(r);
  }
  return trace;
}

void record_trace(LossWeightTrace& trace, long step, int pair_id,
                  std::span<const double> nll_per_token,
                  std::span<const double> weights,
                  const std::vector<int>& key_positions) {
  if (nll_per_token.size() != weights.size()) {
    throw ShapeError("record_trace: nll/weight length mismatch");
  }
  for (int pos = 0; pos < static_cast<int>(weights.size()); ++pos) {
    TraceRow r;
    r.step = step;
    r.pair_id = pair_id;
    r.token_pos = pos;
    r.nll = nll_per_token[static_cast<std::size_t>(pos)];
    r.weight = weights[static_cast<std::size_t>(pos)];
    r.is_key = std::find(key_positions.begin(), key_positions.end(), pos) !=
               key_positions.end();
    trace.append(r);
  }
}

}  // namespace unlab

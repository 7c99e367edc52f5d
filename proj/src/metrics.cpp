#include "unlab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json.hpp"

namespace unlab {

namespace {

using nlohmann::json;

// P(answer | question) ^ (1 / |answer|)
double normalized_prob(const ToyModel& model, std::span<const TokenId> question,
                       std::span<const TokenId> answer) {
  const ForwardTrace tr = forward(model, question, answer);
  return std::exp(tr.sequence_log_prob() / tr.positions());
}

// D as an integer statistic max|i*m - j*n| over the pooled walk; exact and
// tie-safe.
long ks_d_int(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const long n = static_cast<long>(a.size());
  const long m = static_cast<long>(b.size());
  long i = 0, j = 0, best = 0;
  while (i < n || j < m) {
    double v;
    if (i < n && (j >= m || a[static_cast<std::size_t>(i)] <= b[static_cast<std::size_t>(j)])) {
      v = a[static_cast<std::size_t>(i)];
    } else {
      v = b[static_cast<std::size_t>(j)];
    }
    while (i < n && a[static_cast<std::size_t>(i)] == v) ++i;
    while (j < m && b[static_cast<std::size_t>(j)] == v) ++j;
    best = std::max(best, std::labs(i * m - j * n));
  }
  return best;
}

// P(D < d_int/(n*m)) over uniformly random interleavings: lattice paths
// from (0,0) to (n,m) that keep |i*m - j*n| < d_int at every node, with
// step probabilities i/(i+j), j/(i+j) keeping everything normalized.
double ks_exact_cdf_below(long n, long m, long d_int) {
  std::vector<double> prev(static_cast<std::size_t>(m) + 1, 0.0);
  std::vector<double> cur(static_cast<std::size_t>(m) + 1, 0.0);
  prev[0] = 1.0;  // row i = 0
  for (long j = 1; j <= m; ++j) {
    prev[static_cast<std::size_t>(j)] =
        (std::labs(-j * n) < d_int) ? prev[static_cast<std::size_t>(j - 1)] : 0.0;
  }
  for (long i = 1; i <= n; ++i) {
    cur[0] = (std::labs(i * m) < d_int) ? prev[0] : 0.0;
    for (long j = 1; j <= m; ++j) {
      if (std::labs(i * m - j * n) >= d_int) {
        cur[static_cast<std::size_t>(j)] = 0.0;
        continue;
      }
      const double total = static_cast<double>(i + j);
      cur[static_cast<std::size_t>(j)] =
          prev[static_cast<std::size_t>(j)] * (static_cast<double>(i) / total) +
          cur[static_cast<std::size_t>(j - 1)] * (static_cast<double>(j) / total);
    }
    std::swap(prev, cur);
  }
  return prev[static_cast<std::size_t>(m)];
}

// Kolmogorov survival function Q(t) = 2 sum (-1)^{j-1} exp(-2 j^2 t^2),
// truncated at 100 terms.
double kolmogorov_q(double t) {
  if (t <= 0.0) return 1.0;
  double q = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * std::exp(-2.0 * j * j * t * t);
    q += (j % 2 == 1) ? term : -term;
  }
  return std::clamp(q, 0.0, 1.0);
}

int lcs_length(std::span<const TokenId> a, std::span<const TokenId> b) {
  const std::size_t n = a.size();
  const std::size_t m = b.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

void put(json& j, const char* key, const std::optional<double>& v) {
  if (v) j[key] = *v;
}

void get(const json& j, const char* key, std::optional<double>& v) {
  if (j.contains(key)) v = j.at(key).get<double>();
}

}  // namespace

std::string MetricReport::to_json() const {
  json j = json::object();
  put(j, "es_retain", es_retain);
  put(j, "es_unlearn", es_unlearn);
  put(j, "es_retain_perturb", es_retain_perturb);
  put(j, "es_unlearn_perturb", es_unlearn_perturb);
  put(j, "forget_quality", forget_quality);
  put(j, "model_utility", model_utility);
  put(j, "verbmem", verbmem);
  put(j, "knowmem", knowmem);
  put(j, "utilpres", utilpres);
  put(j, "privleak", privleak);
  put(j, "accuracy", accuracy);
  return j.dump();
}

MetricReport MetricReport::from_json(const std::string& text) {
  const json j = json::parse(text);
  MetricReport r;
  get(j, "es_retain", r.es_retain);
  get(j, "es_unlearn", r.es_unlearn);
  get(j, "es_retain_perturb", r.es_retain_perturb);
  get(j, "es_unlearn_perturb", r.es_unlearn_perturb);
  get(j, "forget_quality", r.forget_quality);
  get(j, "model_utility", r.model_utility);
  get(j, "verbmem", r.verbmem);
  get(j, "knowmem", r.knowmem);
  get(j, "utilpres", r.utilpres);
  get(j, "privleak", r.privleak);
  get(j, "accuracy", r.accuracy);
  return r;
}

int es_prefix_search(const ToyModel& model, std::span<const TokenId> question,
                     std::span<const TokenId> target) {
  const int len = static_cast<int>(target.size());
  if (len == 0) throw MetricError("es_prefix_search: empty target");
  TokenSequence prompt(question.begin(), question.end());
  for (int k = 0; k < len; ++k) {
    const TokenSequence decoded = greedy_decode(model, prompt, len - k);
    if (std::equal(decoded.begin(), decoded.end(), target.begin() + k)) return k;
    prompt.push_back(target[static_cast<std::size_t>(k)]);
  }
  return -1;
}

double es_from_prefix(int kstar, int target_len) {
  if (target_len < 1) throw MetricError("es_from_prefix: empty target");
  if (kstar < 0) return 0.0;  // no prefix restores the suffix
  return 1.0 - static_cast<double>(kstar) / target_len;
}

double es_score(const ToyModel& model, const QAPair& pair, EsVariant variant) {
  const TokenSequence* target = &pair.answer;
  if (variant == EsVariant::perturb) {
    if (pair.perturbed.empty()) {
      throw MetricError("es_score: perturb variant needs a perturbed answer");
    }
    target = &pair.perturbed.front();
  }
  const int kstar = es_prefix_search(model, pair.question, *target);
  return es_from_prefix(kstar, static_cast<int>(target->size()));
}

double mean_es(const ToyModel& model, const Corpus& corpus, std::span<const int> ids,
               EsVariant variant) {
  if (ids.empty()) throw MetricError("mean_es: empty pair set");
  double acc = 0.0;
  for (int id : ids) {
    acc += es_score(model, corpus.pairs[static_cast<std::size_t>(id)], variant);
  }
  return acc / static_cast<double>(ids.size());
}

double answer_probability(const ToyModel& model, const QAPair& pair) {
  if (pair.answer.empty()) throw MetricError("answer_probability: empty answer");
  return normalized_prob(model, pair.question, pair.answer);
}

double truth_ratio(const ToyModel& model, const QAPair& pair) {
  if (pair.paraphrase.empty() || pair.perturbed.empty()) {
    throw MetricError("truth_ratio: pair needs a paraphrase and perturbed answers");
  }
  double wrong = 0.0;
  for (const TokenSequence& alt : pair.perturbed) {
    wrong += normalized_prob(model, pair.question, alt);
  }
  wrong /= static_cast<double>(pair.perturbed.size());
  const double right = normalized_prob(model, pair.question, pair.paraphrase);
  if (right <= 0.0) throw MetricError("truth_ratio: paraphrase probability underflow");
  return wrong / right;
}

KsResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw MetricError("ks_two_sample: empty sample");
  const long n = static_cast<long>(a.size());
  const long m = static_cast<long>(b.size());
  const long d_int = ks_d_int(std::vector<double>(a.begin(), a.end()),
                              std::vector<double>(b.begin(), b.end()));
  KsResult r;
  r.d = static_cast<double>(d_int) / (static_cast<double>(n) * static_cast<double>(m));
  if (d_int == 0) {
    r.p_value = 1.0;
  } else if (n * m <= 4000000L) {
    r.p_value = std::clamp(1.0 - ks_exact_cdf_below(n, m, d_int), 0.0, 1.0);
  } else {
    const double ne = static_cast<double>(n) * static_cast<double>(m) /
                      static_cast<double>(n + m);
    r.p_value = kolmogorov_q(std::sqrt(ne) * r.d);
  }
  return r;
}

double forget_quality(std::span<const double> unlearned_trs,
                      std::span<const double> gold_trs) {
  return ks_two_sample(unlearned_trs, gold_trs).p_value;
}

double model_utility(std::span<const double> nine_values) {
  if (nine_values.size() != 9) throw MetricError("model_utility: expects nine values");
  double inv_sum = 0.0;
  for (double v : nine_values) {
    if (v < 0.0) throw MetricError("model_utility: values must be nonnegative");
    if (v == 0.0) return 0.0;
    inv_sum += 1.0 / v;
  }
  return 9.0 / inv_sum;
}

double rouge_l_recall(std::span<const TokenId> candidate,
                      std::span<const TokenId> reference) {
  if (reference.empty()) throw MetricError("rouge_l_recall: empty reference");
  return static_cast<double>(lcs_length(candidate, reference)) /
         static_cast<double>(reference.size());
}

double verbmem(const ToyModel& model, const Corpus& corpus,
               std::span<const int> forget_ids, int prefix_k) {
  if (forget_ids.empty()) throw MetricError("verbmem: empty pair set");
  if (prefix_k < 1) throw MetricError("verbmem: prefix_k must be >= 1");
  double acc = 0.0;
  for (int id : forget_ids) {
    const QAPair& pair = corpus.pairs[static_cast<std::size_t>(id)];
    TokenSequence text = pair.question;
    text.insert(text.end(), pair.answer.begin(), pair.answer.end());
    if (prefix_k >= static_cast<int>(text.size())) {
      throw MetricError("verbmem: prefix_k leaves no continuation to score");
    }
    const std::span<const TokenId> prefix(text.data(), static_cast<std::size_t>(prefix_k));
    const std::span<const TokenId> cont(text.data() + prefix_k,
                                        text.size() - static_cast<std::size_t>(prefix_k));
    const TokenSequence decoded =
        greedy_decode(model, prefix, static_cast<int>(cont.size()));
    acc += rouge_l_recall(decoded, cont);
  }
  return acc / static_cast<double>(forget_ids.size());
}

double knowmem(const ToyModel& model, const Corpus& corpus, std::span<const int> ids) {
  if (ids.empty()) throw MetricError("knowmem: empty pair set");
  double acc = 0.0;
  for (int id : ids) {
    const QAPair& pair = corpus.pairs[static_cast<std::size_t>(id)];
    const TokenSequence decoded =
        greedy_decode(model, pair.question, static_cast<int>(pair.answer.size()));
    acc += rouge_l_recall(decoded, pair.answer);
  }
  return acc / static_cast<double>(ids.size());
}

double utilpres(const ToyModel& model, const Corpus& corpus,
                std::span<const int> retain_ids) {
  return knowmem(model, corpus, retain_ids);
}

double min_k_prob(std::span<const double> token_log_probs, double k_percent) {
  if (token_log_probs.empty()) throw MetricError("min_k_prob: empty sequence");
  if (!(k_percent > 0.0 && k_percent <= 1.0)) {
    throw ParameterError("min_k_prob: k_percent must lie in (0, 1]");
  }
  const int n = static_cast<int>(token_log_probs.size());
  const int take = std::min(n, static_cast<int>(std::ceil(k_percent * n)));
  std::vector<double> sorted(token_log_probs.begin(), token_log_probs.end());
  std::sort(sorted.begin(), sorted.end());
  double acc = 0.0;
  for (int i = 0; i < take; ++i) acc += sorted[static_cast<std::size_t>(i)];
  return acc / take;
}

double auc_roc(std::span<const double> member_scores,
               std::span<const double> nonmember_scores) {
  if (member_scores.empty() || nonmember_scores.empty()) {
    throw MetricError("auc_roc: empty score set");
  }
  const std::size_t nm = member_scores.size();
  const std::size_t nn = nonmember_scores.size();
  std::vector<std::pair<double, int>> pool;  // (score, is_member)
  pool.reserve(nm + nn);
  for (double s : member_scores) pool.emplace_back(s, 1);
  for (double s : nonmember_scores) pool.emplace_back(s, 0);
  std::sort(pool.begin(), pool.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });

  // rank-sum with midranks for ties
  double member_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < pool.size()) {
    std::size_t j = i;
    while (j < pool.size() && pool[j].first == pool[i].first) ++j;
    const double midrank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j));
    for (std::size_t k = i; k < j; ++k) {
      if (pool[k].second) member_rank_sum += midrank;
    }
    i = j;
  }
  const double u = member_rank_sum - static_cast<double>(nm) * (static_cast<double>(nm) + 1.0) / 2.0;
  return u / (static_cast<double>(nm) * static_cast<double>(nn));
}

double privleak_from_aucs(double auc_unlearned, double auc_gold) {
  if (auc_gold == 0.0) throw MetricError("privleak: gold AUC is zero");
  return 100.0 * (auc_unlearned - auc_gold) / auc_gold;
}

namespace {

std::vector<double> min_k_scores(const ToyModel& model, const Corpus& corpus,
                                 std::span<const int> ids, double k_percent) {
  std::vector<double> out;
  out.reserve(ids.size());
  for (int id : ids) {
    const ForwardTrace tr = forward(model, corpus.pairs[static_cast<std::size_t>(id)]);
    out.push_back(min_k_prob(tr.token_log_prob, k_percent));
  }
  return out;
}

}  // namespace

double privleak(const ToyModel& unlearned, const ToyModel& gold, const Corpus& corpus,
                std::span<const int> forget_ids, std::span<const int> holdout_ids,
                double k_percent) {
  if (forget_ids.empty() || holdout_ids.empty()) {
    throw MetricError("privleak: needs nonempty forget and holdout sets");
  }
  // AUC of separating holdout from forget by Min-K% score. Over-unlearning
  // pushes forget likelihoods below the never-trained holdout, lifting the
  // AUC above one half and PrivLeak above zero; under-unlearning leaves the
  // forget set more likely and drives it negative.
  const double auc_u = auc_roc(min_k_scores(unlearned, corpus, holdout_ids, k_percent),
                               min_k_scores(unlearned, corpus, forget_ids, k_percent));
  const double auc_g = auc_roc(min_k_scores(gold, corpus, holdout_ids, k_percent),
                               min_k_scores(gold, corpus, forget_ids, k_percent));
  return privleak_from_aucs(auc_u, auc_g);
}

double mc_accuracy(const ToyModel& model, std::span<const McItem> items) {
  if (items.empty()) throw MetricError("mc_accuracy: empty item set");
  int correct = 0;
  for (const McItem& item : items) {
    if (item.options.size() < 2) throw InputError("mc_accuracy: item needs >= 2 options");
    if (item.correct_index < 0 ||
        item.correct_index >= static_cast<int>(item.options.size())) {
      throw InputError("mc_accuracy: correct_index out of range");
    }
    int best = 0;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < static_cast<int>(item.options.size()); ++i) {
      const ForwardTrace tr =
          forward(model, item.question, item.options[static_cast<std::size_t>(i)]);
      const double score = tr.sequence_log_prob() / tr.positions();
      if (score > best_score) {  // ties keep the lowest index
        best_score = score;
        best = i;
      }
    }
    if (best == item.correct_index) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(items.size());
}

std::vector<McItem> make_mc_items(const Corpus& corpus, std::span<const int> ids,
                                  std::uint64_t seed) {
  std::vector<McItem> items;
  items.reserve(ids.size());
  for (int id : ids) {
    const QAPair& pair = corpus.pairs[static_cast<std::size_t>(id)];
    if (pair.perturbed.empty()) continue;
    McItem item;
    item.question = pair.question;
    item.options.push_back(pair.answer);
    const std::size_t wrong = std::min<std::size_t>(pair.perturbed.size(), 3);
    for (std::size_t i = 0; i < wrong; ++i) item.options.push_back(pair.perturbed[i]);
    std::vector<int> order(item.options.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(Rng::mix(seed, static_cast<std::uint64_t>(id)));
    rng.shuffle(order);
    std::vector<TokenSequence> shuffled;
    shuffled.reserve(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
      shuffled.push_back(item.options[static_cast<std::size_t>(order[i])]);
      if (order[i] == 0) item.correct_index = static_cast<int>(i);
    }
    item.options = std::move(shuffled);
    items.push_back(std::move(item));
  }
  return items;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) {
    throw MetricError("pearson: needs two equally sized samples of length >= 2");
  }
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw MetricError("pearson: degenerate sample");
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace unlab

#include "unlab/seq.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace unlab {

namespace {

using nlohmann::json;

TokenId filler(Rng& rng) {
  return Vocab::kFillerBase + static_cast<TokenId>(rng.below(Vocab::kFillers));
}

TokenId relation(Rng& rng) {
  return Vocab::kRelationBase + static_cast<TokenId>(rng.below(Vocab::kRelations));
}

// A function (non-entity) token other than `avoid`.
TokenId other_function_token(TokenId avoid) {
  for (TokenId t = Vocab::kFillerBase; t < Vocab::kFillerBase + Vocab::kFillers; ++t) {
    if (t != avoid) return t;
  }
  return Vocab::kRelationBase;  // unreachable with kFillers >= 2
}

std::vector<int> entity_positions(const TokenSequence& answer) {
  std::vector<int> out;
  for (int i = 0; i < static_cast<int>(answer.size()); ++i) {
    if (Vocab::is_entity(answer[i])) out.push_back(i);
  }
  return out;
}

// Reorder of the non-key tokens; keys stay put. A single transposition of
// the first two differing non-key tokens keeps the paraphrase close to the
// answer (the truth ratio wants "correct but differently phrased", not
// "scrambled"). Falls back to swapping in a different function token when
// all non-key tokens are equal.
TokenSequence build_paraphrase(const TokenSequence& answer,
                               const std::vector<int>& keys) {
  std::vector<int> free_pos;
  std::set<int> key_set(keys.begin(), keys.end());
  for (int i = 0; i < static_cast<int>(answer.size()); ++i) {
    if (!key_set.count(i)) free_pos.push_back(i);
  }
  const int m = static_cast<int>(free_pos.size());
  for (int i = 0; i < m; ++i) {
    for (int j = i + 1; j < m; ++j) {
      if (answer[free_pos[i]] != answer[free_pos[j]]) {
        TokenSequence cand = answer;
        std::swap(cand[free_pos[i]], cand[free_pos[j]]);
        return cand;
      }
    }
  }
  if (m == 0) {
    throw ParameterError("paraphrase: answer has no non-key tokens to rephrase");
  }
  TokenSequence cand = answer;
  cand[free_pos[0]] = other_function_token(answer[free_pos[0]]);
  return cand;
}

json pair_to_json(const QAPair& p) {
  json rec;
  rec["profile_id"] = p.profile_id;
  rec["question"] = p.question;
  rec["answer"] = p.answer;
  rec["key_positions"] = p.key_positions;
  rec["paraphrase"] = p.paraphrase;
  rec["perturbed"] = p.perturbed;
  return rec;
}

QAPair pair_from_json(const json& rec) {
  QAPair p;
  p.profile_id = rec.at("profile_id").get<int>();
  p.question = rec.at("question").get<TokenSequence>();
  p.answer = rec.at("answer").get<TokenSequence>();
  p.key_positions = rec.at("key_positions").get<std::vector<int>>();
  p.paraphrase = rec.at("paraphrase").get<TokenSequence>();
  p.perturbed = rec.at("perturbed").get<std::vector<TokenSequence>>();
  return p;
}

}  // namespace

int Corpus::profile_count() const {
  int maxp = -1;
  for (const auto& p : pairs) maxp = std::max(maxp, p.profile_id);
  return maxp + 1;
}

void SplitAssignment::validate(int corpus_size) const {
  const std::vector<const std::vector<int>*> sets = {&forget, &retain, &holdout,
                                                     &aux_real, &aux_world};
  std::vector<int> seen(static_cast<std::size_t>(corpus_size), 0);
  for (const auto* s : sets) {
    for (int id : *s) {
      if (id < 0 || id >= corpus_size) {
        throw SplitError("split: pair index out of range");
      }
      if (seen[static_cast<std::size_t>(id)]++) {
        throw SplitError("split: subsets are not pairwise disjoint");
      }
    }
  }
  for (int id = 0; id < corpus_size; ++id) {
    if (!seen[static_cast<std::size_t>(id)]) {
      throw SplitError("split: subsets do not cover the corpus");
    }
  }
}

Corpus generate_corpus(std::uint64_t seed, int profiles, int qa_per_profile,
                       int vocab_size, int perturbations_per_pair) {
  if (profiles < 2) throw ParameterError("generate_corpus: profiles must be >= 2");
  if (qa_per_profile < 1) {
    throw ParameterError("generate_corpus: qa_per_profile must be >= 1");
  }
  if (vocab_size < 16) {
    throw ParameterError("generate_corpus: vocab_size must be >= 16");
  }
  if (perturbations_per_pair < 1) {
    throw ParameterError("generate_corpus: perturbations_per_pair must be >= 1");
  }
  if (qa_per_profile > Vocab::kQuestionWords * Vocab::kRelations) {
    throw ParameterError("generate_corpus: qa_per_profile exceeds distinct question templates");
  }
  if (Vocab::entity_pool_size(vocab_size) < profiles + 1) {
    throw ParameterError(
        "generate_corpus: vocabulary too small for the requested profile count");
  }

  Corpus corpus;
  corpus.vocab_size = vocab_size;
  corpus.seed = seed;
  const int pool = Vocab::entity_pool_size(vocab_size);
  Rng root(seed);

  for (int prof = 0; prof < profiles; ++prof) {
    Rng rng = root.fork(static_cast<std::uint64_t>(prof));
    // distinct (question word, relation) template per QA of this profile
    std::vector<std::pair<int, int>> templates;
    for (int q = 0; q < Vocab::kQuestionWords; ++q) {
      for (int r = 0; r < Vocab::kRelations; ++r) templates.emplace_back(q, r);
    }
    rng.shuffle(templates);

    for (int k = 0; k < qa_per_profile; ++k) {
      QAPair pair;
      pair.profile_id = prof;
      pair.question = {Vocab::kQuestionBase + templates[k].first,
                       Vocab::kRelationBase + templates[k].second,
                       Vocab::profile_entity(prof)};

      const int len = 4 + static_cast<int>(rng.below(3));  // 4..6 tokens
      pair.answer.resize(static_cast<std::size_t>(len));
      for (int i = 0; i < len; ++i) {
        pair.answer[static_cast<std::size_t>(i)] =
            (rng.below(2) == 0) ? filler(rng) : relation(rng);
      }
      // the profile's own entity plus one object entity from the pool
      const int own_pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
      int obj_pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
      while (obj_pos == own_pos) {
        obj_pos = static_cast<int>(rng.below(static_cast<std::uint64_t>(len)));
      }
      pair.answer[static_cast<std::size_t>(own_pos)] = Vocab::profile_entity(prof);
      pair.answer[static_cast<std::size_t>(obj_pos)] =
          Vocab::kEntityBase + static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(pool)));

      // paraphrase rotation needs at least two distinct non-key tokens
      std::vector<int> non_key;
      for (int i = 0; i < len; ++i) {
        if (i != own_pos && i != obj_pos) non_key.push_back(i);
      }
      if (non_key.size() >= 2) {
        bool all_equal = true;
        for (std::size_t i = 1; i < non_key.size(); ++i) {
          if (pair.answer[static_cast<std::size_t>(non_key[i])] !=
              pair.answer[static_cast<std::size_t>(non_key[0])]) {
            all_equal = false;
            break;
          }
        }
        if (all_equal) {
          const int pos = non_key.back();
          pair.answer[static_cast<std::size_t>(pos)] =
              other_function_token(pair.answer[static_cast<std::size_t>(pos)]);
        }
      }

      pair.key_positions = entity_positions(pair.answer);
      pair.paraphrase = build_paraphrase(pair.answer, pair.key_positions);
      const std::uint64_t pert_seed =
          Rng::mix(seed, 0x7065727475726200ull + static_cast<std::uint64_t>(corpus.pairs.size()));
      pair.perturbed =
          make_perturbations(pair, perturbations_per_pair, pert_seed, vocab_size);
      corpus.pairs.push_back(std::move(pair));
    }
  }
  return corpus;
}

SplitAssignment split_corpus(const Corpus& corpus, double forget_fraction,
                             double holdout_fraction, std::uint64_t seed,
                             double aux_fraction) {
  if (!(forget_fraction > 0.0 && forget_fraction < 1.0) ||
      !(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ParameterError("split_corpus: fractions must lie in (0,1)");
  }
  if (forget_fraction + holdout_fraction >= 1.0) {
    throw ParameterError("split_corpus: fractions must sum to less than 1");
  }
  if (aux_fraction < 0.0 || aux_fraction >= 0.5) {
    throw ParameterError("split_corpus: aux_fraction must lie in [0, 0.5)");
  }
  const int profiles = corpus.profile_count();
  if (profiles < 2) throw SplitError("split_corpus: need at least 2 profiles");
  const int qa = static_cast<int>(corpus.pairs.size()) / std::max(profiles, 1);

  const int n_holdout = static_cast<int>(std::lround(holdout_fraction * profiles));
  const int n_aux = static_cast<int>(std::lround(aux_fraction * profiles));
  const int remainder = profiles - n_holdout - 2 * n_aux;
  if (remainder < 2) {
    throw SplitError("split_corpus: holdout/aux fractions leave fewer than 2 profiles");
  }

  const double ideal = forget_fraction * remainder;
  int n_forget = static_cast<int>(std::lround(ideal));
  n_forget = std::clamp(n_forget, 1, remainder - 1);
  // achieved forget share must sit within one pair of the request
  if (std::abs(n_forget - ideal) * qa > 1.0 + 1e-9) {
    std::ostringstream msg;
    msg << "split_corpus: forget_fraction " << forget_fraction
        << " infeasible at profile granularity; nearest feasible fraction is "
        << (static_cast<double>(n_forget) / remainder);
    throw SplitError(msg.str());
  }

  std::vector<int> order(static_cast<std::size_t>(profiles));
  for (int i = 0; i < profiles; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<int> role(static_cast<std::size_t>(profiles), 1);  // 1 = retain
  int at = 0;
  for (int i = 0; i < n_forget; ++i) role[static_cast<std::size_t>(order[at++])] = 0;
  for (int i = 0; i < n_holdout; ++i) role[static_cast<std::size_t>(order[at++])] = 2;
  for (int i = 0; i < n_aux; ++i) role[static_cast<std::size_t>(order[at++])] = 3;
  for (int i = 0; i < n_aux; ++i) role[static_cast<std::size_t>(order[at++])] = 4;

  SplitAssignment split;
  for (int id = 0; id < static_cast<int>(corpus.pairs.size()); ++id) {
    switch (role[static_cast<std::size_t>(corpus.pairs[static_cast<std::size_t>(id)].profile_id)]) {
      case 0: split.forget.push_back(id); break;
      case 1: split.retain.push_back(id); break;
      case 2: split.holdout.push_back(id); break;
      case 3: split.aux_real.push_back(id); break;
      default: split.aux_world.push_back(id); break;
    }
  }
  split.validate(static_cast<int>(corpus.pairs.size()));
  return split;
}

Annotation annotate_key_tokens(const QAPair& pair, const std::string& rule) {
  if (pair.answer.empty()) throw ParameterError("annotate_key_tokens: empty answer");
  if (rule != "entity") {
    throw ParameterError("annotate_key_tokens: unknown rule '" + rule + "'");
  }
  Annotation ann;
  ann.positions = entity_positions(pair.answer);
  ann.no_entities = ann.positions.empty();
  return ann;
}

std::vector<TokenSequence> make_perturbations(const QAPair& pair, int n,
                                              std::uint64_t seed, int vocab_size) {
  if (n < 1) throw ParameterError("make_perturbations: n must be >= 1");
  if (pair.answer.empty()) throw ParameterError("make_perturbations: empty answer");
  const std::vector<int> keys =
      pair.key_positions.empty() ? entity_positions(pair.answer) : pair.key_positions;
  if (keys.empty()) {
    throw PerturbationError("make_perturbations: answer has no key tokens to substitute");
  }
  const int pool = Vocab::entity_pool_size(vocab_size);
  if (pool < 2) {
    throw PerturbationError("make_perturbations: vocabulary too small to substitute");
  }
  // upper bound on distinct substitutions: (pool-1) choices per key position
  double capacity = 1.0;
  for (std::size_t i = 0; i < keys.size() && capacity < 1e9; ++i) capacity *= pool - 1;
  if (capacity < static_cast<double>(n)) {
    throw PerturbationError("make_perturbations: vocabulary too small for n distinct perturbations");
  }

  Rng rng(seed);
  std::set<TokenSequence> seen;
  std::vector<TokenSequence> out;
  int guard = 0;
  while (static_cast<int>(out.size()) < n) {
    if (++guard > 1000 * n) {
      throw PerturbationError("make_perturbations: could not find distinct substitutions");
    }
    TokenSequence cand = pair.answer;
    for (int pos : keys) {
      const TokenId original = pair.answer[static_cast<std::size_t>(pos)];
      TokenId sub = Vocab::kEntityBase +
                    static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(pool)));
      while (sub == original) {
        sub = Vocab::kEntityBase +
              static_cast<TokenId>(rng.below(static_cast<std::uint64_t>(pool)));
      }
      cand[static_cast<std::size_t>(pos)] = sub;
    }
    if (cand != pair.answer && seen.insert(cand).second) out.push_back(std::move(cand));
  }
  return out;
}

TokenSequence idk_answer(int vocab_size) {
  if (vocab_size <= Vocab::kIdk) {
    throw ConfigError("idk_answer: idk token not present in vocabulary");
  }
  return {Vocab::kIdk, Vocab::kIdk, Vocab::kIdk};
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::ostringstream out;
  for (const auto& p : corpus.pairs) out << pair_to_json(p).dump() << '\n';
  return out.str();
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_corpus: cannot open " + path.string());
  out << corpus_to_jsonl(corpus);
  if (!out) throw IoError("save_corpus: write failed for " + path.string());
}

Corpus load_corpus(const std::filesystem::path& path, int vocab_size,
                   std::uint64_t seed) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_corpus: cannot open " + path.string());
  Corpus corpus;
  corpus.vocab_size = vocab_size;
  corpus.seed = seed;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    corpus.pairs.push_back(pair_from_json(json::parse(line)));
  }
  return corpus;
}

std::string split_to_json(const SplitAssignment& split) {
  json j;
  j["forget"] = split.forget;
  j["retain"] = split.retain;
  j["holdout"] = split.holdout;
  j["aux_real"] = split.aux_real;
  j["aux_world"] = split.aux_world;
  return j.dump();
}

void save_split(const SplitAssignment& split, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("save_split: cannot open " + path.string());
  out << split_to_json(split) << '\n';
}

SplitAssignment load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("load_split: cannot open " + path.string());
  json j = json::parse(in);
  SplitAssignment split;
  split.forget = j.at("forget").get<std::vector<int>>();
  split.retain = j.at("retain").get<std::vector<int>>();
  split.holdout = j.at("holdout").get<std::vector<int>>();
  split.aux_real = j.at("aux_real").get<std::vector<int>>();
  split.aux_world = j.at("aux_world").get<std::vector<int>>();
  return split;
}

}  // namespace unlab

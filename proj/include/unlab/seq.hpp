#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "unlab/common.hpp"

namespace unlab {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

// Fixed synthetic vocabulary layout. Ids below kEntityBase are function
// tokens (question words, relations, fillers) plus two reserved ids; the
// remainder of the vocabulary is the entity pool. Entity tokens are the
// "key" tokens; profile p owns entity id kEntityBase + p.
struct Vocab {
  static constexpr TokenId kIdk = 0;   // the "I don't know" answer token
  static constexpr TokenId kJunk = 1;  // reserved, never generated
  static constexpr TokenId kQuestionBase = 2;
  static constexpr int kQuestionWords = 4;
  static constexpr TokenId kRelationBase = 6;
  static constexpr int kRelations = 3;
  static constexpr TokenId kFillerBase = 9;
  static constexpr int kFillers = 3;
  static constexpr TokenId kEntityBase = 12;

  static bool is_entity(TokenId t) { return t >= kEntityBase; }
  static TokenId profile_entity(int profile) { return kEntityBase + profile; }
  static int entity_pool_size(int vocab_size) { return vocab_size - kEntityBase; }
};

struct QAPair {
  int profile_id = 0;
  TokenSequence question;
  TokenSequence answer;
  std::vector<int> key_positions;  // sorted indices into answer
  TokenSequence paraphrase;
  std::vector<TokenSequence> perturbed;
};

struct Corpus {
  int vocab_size = 0;
  std::uint64_t seed = 0;
  std::vector<QAPair> pairs;

  int profile_count() const;
};

// Pair-index sets; pairwise disjoint and jointly covering the corpus.
struct SplitAssignment {
  std::vector<int> forget;
  std::vector<int> retain;
  std::vector<int> holdout;
  std::vector<int> aux_real;
  std::vector<int> aux_world;

  void validate(int corpus_size) const;
};

struct Annotation {
  std::vector<int> positions;
  bool no_entities = false;  // diagnostic: answer had nothing to mark
};

Corpus generate_corpus(std::uint64_t seed, int profiles, int qa_per_profile,
                       int vocab_size, int perturbations_per_pair = 3);

// Profile-level split: every profile's pairs land in exactly one subset.
// The forget fraction applies to the forget+retain remainder after holdout
// and the two aux subsets are carved out; if the nearest profile count
// misses the requested fraction by more than one pair, throws SplitError
// naming the nearest feasible fraction.
SplitAssignment split_corpus(const Corpus& corpus, double forget_fraction,
                             double holdout_fraction, std::uint64_t seed,
                             double aux_fraction = 0.05);

// rule "entity": mark every entity-pool token position in the answer.
Annotation annotate_key_tokens(const QAPair& pair, const std::string& rule);

std::vector<TokenSequence> make_perturbations(const QAPair& pair, int n,
                                              std::uint64_t seed,
                                              int vocab_size);

TokenSequence idk_answer(int vocab_size);

// Corpus file: one JSON object per line with keys
//   profile_id, question, answer, key_positions, paraphrase, perturbed
// Split file: single JSON object {forget, retain, holdout, aux_real, aux_world}.
std::string corpus_to_jsonl(const Corpus& corpus);
void save_corpus(const Corpus& corpus, const std::filesystem::path& path);
Corpus load_corpus(const std::filesystem::path& path, int vocab_size,
                   std::uint64_t seed);
std::string split_to_json(const SplitAssignment& split);
void save_split(const SplitAssignment& split, const std::filesystem::path& path);
SplitAssignment load_split(const std::filesystem::path& path);

}  // namespace unlab

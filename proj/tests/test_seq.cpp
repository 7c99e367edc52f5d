#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "unlab/seq.hpp"

using namespace unlab;
namespace fs = std::filesystem;

TEST(GenerateCorpus, DeterministicAndSized) {
  const Corpus a = generate_corpus(7, 10, 4, 64);
  const Corpus b = generate_corpus(7, 10, 4, 64);
  EXPECT_EQ(a.pairs.size(), 40u);
  EXPECT_EQ(corpus_to_jsonl(a), corpus_to_jsonl(b));
}

TEST(GenerateCorpus, KeyPositionsNonempty) {
  const Corpus c = generate_corpus(7, 2, 1, 64);
  ASSERT_EQ(c.pairs.size(), 2u);
  for (const QAPair& p : c.pairs) {
    EXPECT_FALSE(p.key_positions.empty());
    EXPECT_FALSE(p.answer.empty());
    // the profile's own entity token must appear in the answer
    bool own = false;
    for (TokenId t : p.answer) own |= (t == Vocab::profile_entity(p.profile_id));
    EXPECT_TRUE(own);
  }
}

TEST(GenerateCorpus, SeedChangesContent) {
  const Corpus a = generate_corpus(7, 10, 4, 64);
  const Corpus b = generate_corpus(8, 10, 4, 64);
  EXPECT_NE(corpus_to_jsonl(a), corpus_to_jsonl(b));
}

TEST(GenerateCorpus, InvalidCounts) {
  EXPECT_THROW(generate_corpus(1, 1, 4, 64), ParameterError);
  EXPECT_THROW(generate_corpus(1, 10, 0, 64), ParameterError);
  EXPECT_THROW(generate_corpus(1, 10, 4, 8), ParameterError);
  // entity pool too small for the profile count
  EXPECT_THROW(generate_corpus(1, 60, 4, 64), ParameterError);
}

TEST(GenerateCorpus, Invariants) {
  const Corpus c = generate_corpus(11, 6, 3, 48);
  for (const QAPair& p : c.pairs) {
    for (int pos : p.key_positions) {
      ASSERT_GE(pos, 0);
      ASSERT_LT(pos, static_cast<int>(p.answer.size()));
      EXPECT_TRUE(Vocab::is_entity(p.answer[static_cast<std::size_t>(pos)]));
    }
    EXPECT_NE(p.paraphrase, p.answer);
    ASSERT_EQ(p.paraphrase.size(), p.answer.size());
    for (int pos : p.key_positions) {
      EXPECT_EQ(p.paraphrase[static_cast<std::size_t>(pos)],
                p.answer[static_cast<std::size_t>(pos)]);
    }
    for (const TokenSequence& alt : p.perturbed) {
      EXPECT_NE(alt, p.answer);
      EXPECT_EQ(alt.size(), p.answer.size());
    }
    for (TokenId t : p.question) EXPECT_LT(t, c.vocab_size);
    for (TokenId t : p.answer) EXPECT_LT(t, c.vocab_size);
  }
}

TEST(SplitCorpus, HundredProfilesOnePercent) {
  const Corpus c = generate_corpus(3, 100, 1, 128);
  const SplitAssignment s = split_corpus(c, 0.01, 0.1, 5);
  std::set<int> forget_profiles;
  for (int id : s.forget) forget_profiles.insert(c.pairs[static_cast<std::size_t>(id)].profile_id);
  EXPECT_EQ(forget_profiles.size(), 1u);
}

TEST(SplitCorpus, TwoProfilesHalf) {
  const Corpus c = generate_corpus(3, 2, 2, 64);
  const SplitAssignment s = split_corpus(c, 0.5, 0.2, 5, /*aux_fraction=*/0.0);
  std::set<int> forget_profiles;
  for (int id : s.forget) forget_profiles.insert(c.pairs[static_cast<std::size_t>(id)].profile_id);
  EXPECT_EQ(forget_profiles.size(), 1u);
}

TEST(SplitCorpus, HoldoutDisjointFromForget) {
  const Corpus c = generate_corpus(3, 10, 2, 64);
  const SplitAssignment s = split_corpus(c, 0.2, 0.1, 5, 0.0);
  std::set<int> holdout_profiles, forget_profiles;
  for (int id : s.holdout) holdout_profiles.insert(c.pairs[static_cast<std::size_t>(id)].profile_id);
  for (int id : s.forget) forget_profiles.insert(c.pairs[static_cast<std::size_t>(id)].profile_id);
  EXPECT_EQ(holdout_profiles.size(), 1u);
  for (int p : holdout_profiles) EXPECT_EQ(forget_profiles.count(p), 0u);
}

TEST(SplitCorpus, DisjointAndCoveringAcrossSeeds) {
  const Corpus c = generate_corpus(9, 20, 3, 64);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const SplitAssignment s = split_corpus(c, 0.25, 0.1, seed, 0.05);
    EXPECT_NO_THROW(s.validate(static_cast<int>(c.pairs.size())));
    // profile boundaries respected
    std::set<int> forget_profiles, retain_profiles;
    for (int id : s.forget) forget_profiles.insert(c.pairs[static_cast<std::size_t>(id)].profile_id);
    for (int id : s.retain) retain_profiles.insert(c.pairs[static_cast<std::size_t>(id)].profile_id);
    for (int p : forget_profiles) EXPECT_EQ(retain_profiles.count(p), 0u);
  }
}

TEST(SplitCorpus, InfeasibleFractionNamesNearest) {
  // 8 usable profiles, qa 4: 0.31 asks for 2.48 profiles; best is 2, off by
  // 0.48 profiles = 1.92 pairs > 1 pair
  const Corpus c = generate_corpus(3, 10, 4, 64);
  try {
    split_corpus(c, 0.31, 0.2, 5, 0.0);
    FAIL() << "expected SplitError";
  } catch (const SplitError& e) {
    EXPECT_NE(std::string(e.what()).find("nearest feasible"), std::string::npos);
  }
}

TEST(Annotate, EntityRule) {
  QAPair p;
  p.answer = {Vocab::kFillerBase, Vocab::kRelationBase, Vocab::kFillerBase + 1,
              Vocab::kEntityBase + 2};
  const Annotation a = annotate_key_tokens(p, "entity");
  EXPECT_EQ(a.positions, (std::vector<int>{3}));
  EXPECT_FALSE(a.no_entities);
}

TEST(Annotate, NoEntitiesFlagged) {
  QAPair p;
  p.answer = {Vocab::kFillerBase, Vocab::kRelationBase};
  const Annotation a = annotate_key_tokens(p, "entity");
  EXPECT_TRUE(a.positions.empty());
  EXPECT_TRUE(a.no_entities);
}

TEST(Annotate, TwoOccurrencesMatchScanOracle) {
  QAPair p;
  p.answer = {Vocab::kFillerBase, Vocab::kEntityBase + 1, Vocab::kRelationBase,
              Vocab::kFillerBase + 1, Vocab::kEntityBase + 1, Vocab::kFillerBase};
  // oracle: scan and compare against the entity predicate
  std::vector<int> expected;
  for (int i = 0; i < static_cast<int>(p.answer.size()); ++i) {
    if (p.answer[static_cast<std::size_t>(i)] >= Vocab::kEntityBase) expected.push_back(i);
  }
  ASSERT_EQ(expected, (std::vector<int>{1, 4}));
  const Annotation a = annotate_key_tokens(p, "entity");
  EXPECT_EQ(a.positions, expected);
  EXPECT_EQ(annotate_key_tokens(p, "entity").positions, a.positions);  // idempotent
}

TEST(Annotate, UnknownRule) {
  QAPair p;
  p.answer = {Vocab::kFillerBase};
  EXPECT_THROW(annotate_key_tokens(p, "tfidf"), ParameterError);
}

TEST(Perturbations, DistinctEqualLength) {
  const Corpus c = generate_corpus(7, 4, 2, 64);
  const QAPair& p = c.pairs[0];
  const auto alts = make_perturbations(p, 3, 99, c.vocab_size);
  ASSERT_EQ(alts.size(), 3u);
  std::set<TokenSequence> uniq(alts.begin(), alts.end());
  EXPECT_EQ(uniq.size(), 3u);
  for (const auto& alt : alts) {
    EXPECT_EQ(alt.size(), p.answer.size());
    EXPECT_NE(alt, p.answer);
  }
}

TEST(Perturbations, ForcedSingleSpareEntity) {
  // vocab 14 = entity pool {12, 13}; one key token 12 leaves 13 as the only
  // possible substitution
  QAPair p;
  p.question = {Vocab::kQuestionBase};
  p.answer = {Vocab::kFillerBase, 12, Vocab::kRelationBase};
  p.key_positions = {1};
  const auto alts = make_perturbations(p, 1, 4, /*vocab_size=*/14);
  ASSERT_EQ(alts.size(), 1u);
  EXPECT_EQ(alts[0][1], 13);
}

TEST(Perturbations, DeterministicInSeed) {
  const Corpus c = generate_corpus(7, 4, 2, 64);
  const auto a = make_perturbations(c.pairs[1], 3, 42, c.vocab_size);
  const auto b = make_perturbations(c.pairs[1], 3, 42, c.vocab_size);
  EXPECT_EQ(a, b);
}

TEST(Perturbations, VocabTooSmall) {
  QAPair p;
  p.answer = {12};
  p.key_positions = {0};
  EXPECT_THROW(make_perturbations(p, 1, 4, 13), PerturbationError);  // pool of 1
  EXPECT_THROW(make_perturbations(p, 3, 4, 14), PerturbationError);  // 1 spare, n=3
}

TEST(SeqIo, CorpusRoundTrip) {
  const Corpus c = generate_corpus(13, 5, 3, 64);
  const fs::path path = fs::temp_directory_path() / "unlab_corpus_test.jsonl";
  save_corpus(c, path);
  const Corpus back = load_corpus(path, c.vocab_size, c.seed);
  EXPECT_EQ(corpus_to_jsonl(back), corpus_to_jsonl(c));
  fs::remove(path);
}

TEST(SeqIo, SplitRoundTrip) {
  const Corpus c = generate_corpus(13, 10, 2, 64);
  const SplitAssignment s = split_corpus(c, 0.1, 0.1, 2);
  const fs::path path = fs::temp_directory_path() / "unlab_split_test.json";
  save_split(s, path);
  const SplitAssignment back = load_split(path);
  EXPECT_EQ(split_to_json(back), split_to_json(s));
  fs::remove(path);
}

TEST(IdkAnswer, ReservedSequence) {
  const TokenSequence idk = idk_answer(64);
  ASSERT_FALSE(idk.empty());
  for (TokenId t : idk) EXPECT_EQ(t, Vocab::kIdk);
}

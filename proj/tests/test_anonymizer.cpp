#include <anoncomplete/anonymizer.hpp>

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

using namespace anoncomplete;

namespace {

// Values given as raw ids; dummies pass through.
FlatProgram program_from(const std::vector<std::int32_t>& raw) {
  FlatProgram p;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    p.types.push_back(1);
    p.values.push_back(raw[i]);
    p.orig.push_back(raw[i]);
    p.parent.push_back(-1);
  }
  return p;
}

FlatProgram with_distinct(int n) {
  std::vector<std::int32_t> raw;
  for (int i = 0; i < n; ++i) raw.push_back(100 + i);
  return program_from(raw);
}

bool is_placeholder(std::int32_t v, int k) { return v >= kNumDummies && v < kNumDummies + k; }

}  // namespace

TEST(SelectK, AllSmallPrograms) {
  std::vector<FlatProgram> corpus = {with_distinct(1), with_distinct(3), with_distinct(2)};
  EXPECT_EQ(select_k(corpus, 0.99), 3);
}

TEST(SelectK, OneOutlierInHundred) {
  std::vector<FlatProgram> corpus;
  for (int i = 0; i < 99; ++i) corpus.push_back(with_distinct(1 + i % 5));
  corpus.push_back(with_distinct(40));
  EXPECT_EQ(select_k(corpus, 0.99), 5);
  EXPECT_EQ(select_k(corpus, 1.0), 40);
}

TEST(SelectK, DummiesDoNotCount) {
  std::vector<FlatProgram> corpus = {program_from({kEmpty, kEof}), program_from({kEmpty, 100, 100, kEof})};
  EXPECT_EQ(select_k(corpus, 1.0), 1);
  EXPECT_THROW(select_k(corpus, 0.0), ConfigError);
}

TEST(Anonymize, SameValueSamePlaceholder) {
  // [x, EMPTY, x, y]
  const auto out = anonymize(program_from({100, kEmpty, 100, 101}), 2, 17);
  EXPECT_EQ(out.values[1], kEmpty);
  EXPECT_EQ(out.values[0], out.values[2]);
  EXPECT_NE(out.values[0], out.values[3]);
  EXPECT_TRUE(is_placeholder(out.values[0], 2));
  EXPECT_TRUE(is_placeholder(out.values[3], 2));
  // the map inverts the assignment
  EXPECT_EQ(out.anon_map[static_cast<std::size_t>(out.values[0] - kNumDummies)], 100);
  EXPECT_EQ(out.anon_map[static_cast<std::size_t>(out.values[3] - kNumDummies)], 101);
  EXPECT_EQ(out.orig, (std::vector<std::int32_t>{100, kEmpty, 100, 101}));
}

TEST(Anonymize, DummyOnlyProgramUnchanged) {
  const auto p = program_from({kEmpty, kEmpty, kEof});
  const auto out = anonymize(p, 4, 3);
  EXPECT_EQ(out.values, p.values);
}

TEST(Anonymize, OverflowByFirstAppearance) {
  // z appears first at index 3, after x and y
  const auto out = anonymize(program_from({100, 101, 100, 102, 102, kEof}), 2, 5);
  EXPECT_TRUE(is_placeholder(out.values[0], 2));
  EXPECT_TRUE(is_placeholder(out.values[1], 2));
  EXPECT_EQ(out.values[3], kUnk);
  EXPECT_EQ(out.values[4], kUnk);
  EXPECT_THROW(anonymize(out, 0, 1), ConfigError);
}

TEST(Anonymize, WithinProgramConsistencyOnRandomPrograms) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<std::int32_t> raw;
    const int n = 1 + static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) raw.push_back(rng() % 4 == 0 ? kEmpty : 100 + static_cast<std::int32_t>(rng() % 12));
    const int k = 1 + static_cast<int>(rng() % 10);
    const auto p = program_from(raw);
    const auto out = anonymize(p, k, rng());
    std::vector<std::int32_t> first_k;
    for (auto r : raw) {
      if (!is_dummy(r) && std::find(first_k.begin(), first_k.end(), r) == first_k.end()) first_k.push_back(r);
    }
    if (first_k.size() > static_cast<std::size_t>(k)) first_k.resize(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < raw.size(); ++i) {
      for (std::size_t j = 0; j < raw.size(); ++j) {
        if (raw[i] == raw[j]) EXPECT_EQ(out.values[i], out.values[j]);
        const bool both_kept = std::find(first_k.begin(), first_k.end(), raw[i]) != first_k.end() &&
                               std::find(first_k.begin(), first_k.end(), raw[j]) != first_k.end();
        if (raw[i] != raw[j] && both_kept) EXPECT_NE(out.values[i], out.values[j]);
      }
    }
  }
}

TEST(Anonymize, DifferentSeedsDifferOnlyByPermutation) {
  const auto p = program_from({100, 101, kEmpty, 100, 102, 103, 101, kEof});
  const auto a = anonymize(p, 6, 1), b = anonymize(p, 6, 2);
  EXPECT_EQ(canonical_values(a), canonical_values(b));
  // and the relabeling actually varies across seeds
  std::set<std::int32_t> firsts;
  for (std::uint64_t s = 0; s < 50; ++s) firsts.insert(anonymize(p, 6, s).values[0]);
  EXPECT_GT(firsts.size(), 1u);
}

TEST(Anonymize, FirstVariablePlaceholderIsRoughlyUniform) {
  // chi-square over K = 8 cells with 4000 draws; 7 degrees of freedom, 0.999 quantile 24.32
  const int k = 8, draws = 4000;
  const auto p = program_from({100, 101, 102, kEof});
  std::vector<int> hits(static_cast<std::size_t>(k), 0);
  for (int s = 0; s < draws; ++s) ++hits[static_cast<std::size_t>(anonymize(p, k, mix_seed(99, static_cast<std::uint64_t>(s))).values[0] - kNumDummies)];
  const double expected = static_cast<double>(draws) / k;
  double chi2 = 0.0;
  for (int h : hits) chi2 += (h - expected) * (h - expected) / expected;
  EXPECT_LT(chi2, 24.32);
}

TEST(Anonymize, FilterSendsOtherPositionsToUnk) {
  auto p = program_from({100, 101, 100});
  p.types = {1, 2, 1};
  const auto out = anonymize(p, 3, 4, [](std::int32_t t) { return t == 1; });
  EXPECT_TRUE(is_placeholder(out.values[0], 3));
  EXPECT_EQ(out.values[1], kUnk);
  EXPECT_EQ(out.values[0], out.values[2]);
}

TEST(Strip, ReplacesNonDummies) {
  const auto out = strip_variables(program_from({100, kEmpty, 101}));
  EXPECT_EQ(out.values, (std::vector<std::int32_t>{kUnk, kEmpty, kUnk}));
  const auto dummies = program_from({kEmpty, kEof});
  EXPECT_EQ(strip_variables(dummies).values, dummies.values);
  EXPECT_EQ(strip_variables(out).values, out.values);
}

TEST(AnonymizeCorpus, VocabularyIsKPlusThree) {
  Corpus full;
  full.kind = CorpusKind::full;
  full.vocab.type_names = {"<EOF>", "T"};
  full.vocab.value_names = {kEmptyName, kUnkName, kEofName};
  full.vocab.value_raw = {0, 1, 2};
  full.raw_values = {kEmptyName, kUnkName, kEofName};
  for (int i = 0; i < 12; ++i) full.raw_values.push_back("n" + std::to_string(i));
  full.programs = {program_from({3, 4, 3, kEof}), program_from({5, 6, 7, 8, kEof})};
  const auto anon = anonymize_corpus(full, 5, 42);
  EXPECT_EQ(anon.vocab.num_values(), 8u);
  EXPECT_EQ(anon.vocab.value_names[3], "var1");
  EXPECT_EQ(anon.vocab.value_names[7], "var5");
  EXPECT_EQ(anon.kind, CorpusKind::anonymized);
  // per-program seeds: program i uses mix_seed(42, i)
  EXPECT_EQ(anon.programs[1].values, anonymize(full.programs[1], 5, mix_seed(42, 1)).values);
  // resolve maps placeholders back through the program's map
  const auto& p0 = anon.programs[0];
  EXPECT_EQ(anon.resolve(p0, p0.values[0]), std::optional<std::int32_t>(3));
  const auto stripped = strip_corpus(full);
  EXPECT_EQ(stripped.vocab.num_values(), 3u);
  EXPECT_EQ(stripped.resolve(stripped.programs[0], kUnk), std::nullopt);
}

TEST(Seeds, UniformBelowStaysInRange) {
  std::mt19937_64 rng(1);
  for (std::uint64_t n : {1ull, 2ull, 3ull, 7ull, 1000ull}) {
    for (int i = 0; i < 200; ++i) EXPECT_LT(uniform_below(rng, n), n);
  }
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
  EXPECT_NE(mix_seed(1, 0), mix_seed(2, 0));
}

#include <anoncomplete/evaluator.hpp>

#include <gtest/gtest.h>

using namespace anoncomplete;

namespace {

// One named value "x" (id 3, raw 3).
Corpus corpus_of(const std::vector<std::vector<std::int32_t>>& programs) {
  Corpus c;
  c.kind = CorpusKind::full;
  c.vocab.type_names = {"<EOF>", "T"};
  c.vocab.value_names = {kEmptyName, kUnkName, kEofName, "x"};
  c.vocab.value_counts = {0, 0, 0, 1};
  c.vocab.value_raw = {0, 1, 2, 3};
  c.raw_values = {kEmptyName, kUnkName, kEofName, "x", "y"};
  for (const auto& values : programs) {
    FlatProgram p;
    p.values = values;
    p.orig = values;
    for (auto& o : p.orig) {
      if (o == kUnk) o = 4;
    }
    p.types.assign(values.size(), 1);
    p.parent.assign(values.size(), -1);
    c.programs.push_back(p);
  }
  return c;
}

ModelConfig plain(bool pointer = false) {
  ModelConfig m;
  m.mode = EmbeddingMode::static_embeddings;
  m.num_types = 2;
  m.value_vocab = 4;
  m.type_dim = 2;
  m.value_dim = 2;
  m.hidden_dim = 3;
  m.window = 4;
  m.attention = pointer;
  m.pointer = pointer;
  return m;
}

// All weights zero, output bias picks `favourite`.
Model<double> always(std::int32_t favourite, bool pointer = false) {
  Model<double> m(plain(pointer));
  for (auto& p : m.parameters()) std::fill(p.value.begin(), p.value.end(), 0.0);
  m.parameter("output.bias").value[static_cast<std::size_t>(favourite)] = 5.0;
  return m;
}

ResolvedPrediction pred(std::int32_t original, double p) {
  ResolvedPrediction r;
  r.prediction.probability = p;
  r.original = original;
  return r;
}

}  // namespace

TEST(Evaluate, AlwaysEmptyOnEmptyTargets) {
  auto m = always(kEmpty);
  const auto c = corpus_of({{kEmpty, kEmpty, kEmpty}, {kEmpty, kEmpty}});
  const auto r = evaluate(m, c);
  EXPECT_EQ(r.total, 3u);
  EXPECT_DOUBLE_EQ(r.accuracy(), 1.0);
  EXPECT_EQ(r.dummy.total, 3u);
}

TEST(Evaluate, UnkPredictionsAreNeverCorrect) {
  auto m = always(kUnk);
  const auto c = corpus_of({{kEmpty, kUnk, kUnk, kUnk}});
  const auto r = evaluate(m, c);
  EXPECT_EQ(r.total, 3u);
  EXPECT_EQ(r.correct, 0u);
  EXPECT_EQ(r.oov.total, 3u);
}

TEST(Evaluate, CategoriesOnHandCountedProgram) {
  auto m = always(3);
  const auto c = corpus_of({{3, 3, kEmpty, kEof}});
  const auto r = evaluate(m, c);
  EXPECT_EQ(r.total, 3u);
  EXPECT_EQ(r.correct, 1u);
  EXPECT_EQ(r.values.correct, 1u);
  EXPECT_EQ(r.values.total, 1u);
  EXPECT_EQ(r.dummy.total, 2u);
  EXPECT_EQ(r.dummy.correct, 0u);
  // loss of a uniform-with-bias softmax: -log(e^5 / (e^5 + 3)) at the hit, -log(1 / (e^5 + 3)) elsewhere
  const double z = std::exp(5.0) + 3.0;
  EXPECT_NEAR(r.mean_loss(), (-std::log(std::exp(5.0) / z) - 2.0 * std::log(1.0 / z)) / 3.0, 1e-9);
  const auto j = r.to_json();
  EXPECT_EQ(j["total"], 3);
  EXPECT_EQ(j["categories"]["values"]["correct"], 1);
}

TEST(Evaluate, CopiesResolveThroughOriginalValues) {
  // the switch sends everything to the pointer; equal scores pick the previous token
  auto m = always(kEmpty, true);
  m.parameter("switch.bias").value[0] = -20.0;
  m.parameter("output.bias").value[kEmpty] = 0.0;
  const auto c = corpus_of({{kUnk, kUnk, kUnk, kUnk, kUnk}});
  const auto preds = predict_program(m, c, c.programs[0]);
  ASSERT_EQ(preds.size(), 4u);
  EXPECT_FALSE(preds[0].prediction.copy);
  for (std::size_t i = 1; i < preds.size(); ++i) {
    EXPECT_TRUE(preds[i].prediction.copy);
    EXPECT_EQ(preds[i].prediction.offset, 1);
    EXPECT_EQ(preds[i].original, std::optional<std::int32_t>(4));
  }
  EXPECT_DOUBLE_EQ(evaluate(m, c).accuracy(), 0.75);
}

TEST(Ensemble, ConstructedThreePositions) {
  const auto c = corpus_of({{kEmpty, 3, 3, 3}});
  // targets (original ids) at positions 1..3 are 3, 3, 3
  const std::vector<std::vector<ResolvedPrediction>> a = {{pred(3, 0.6), pred(4, 0.5), pred(3, 0.4)}};
  const std::vector<std::vector<ResolvedPrediction>> b = {{pred(4, 0.3), pred(3, 0.9), pred(4, 0.4)}};
  EXPECT_EQ(merge_predictions(c, a, a).correct, 2u);
  EXPECT_EQ(merge_predictions(c, b, b).correct, 1u);
  // position 3 is a tie and model_a supplies it
  EXPECT_EQ(merge_predictions(c, a, b).correct, 3u);
  // swapping the roles hands the tie to the wrong answer
  EXPECT_EQ(merge_predictions(c, b, a).correct, 2u);
}

TEST(Ensemble, IdenticalModelsMatchTheSingleModel) {
  auto m = always(3);
  const auto c = corpus_of({{3, 3, kEmpty, kEof}, {kEmpty, 3}});
  EXPECT_EQ(ensemble_evaluate(m, m, c, c).correct, evaluate(m, c).correct);
}

TEST(Ensemble, MisalignedCorporaAreRejected) {
  auto m = always(3);
  const auto a = corpus_of({{3, 3}});
  const auto b = corpus_of({{3, 3, 3}});
  EXPECT_THROW(ensemble_evaluate(m, m, a, b), std::invalid_argument);
}

TEST(Evaluate, FingerprintMismatch) {
  auto m = always(3);
  const auto c = corpus_of({{3, 3}});
  EvalOptions opts;
  opts.value_fingerprint = value_fingerprint(c.vocab) + 1;
  EXPECT_THROW(evaluate(m, c, opts), FingerprintError);
  auto wider = c;
  wider.vocab.value_names.push_back("y");
  EXPECT_THROW(evaluate(m, wider), FingerprintError);
  opts.value_fingerprint = value_fingerprint(c.vocab);
  EXPECT_NO_THROW(evaluate(m, c, opts));
}

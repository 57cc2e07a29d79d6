#include <anoncomplete/diagnostics.hpp>
#include <anoncomplete/model.hpp>

#include "support/oracle.hpp"

#include <gtest/gtest.h>

#include <numeric>
#include <random>

using namespace anoncomplete;

namespace {

ModelConfig tiny(EmbeddingMode mode, int vocab = kNumDummies + 4, bool attention = true, bool pointer = true) {
  ModelConfig c;
  c.mode = mode;
  c.num_types = 5;
  c.value_vocab = vocab;
  c.type_dim = 3;
  c.value_dim = 4;
  c.hidden_dim = 5;
  c.window = 6;
  c.attention = attention;
  c.pointer = pointer;
  return c;
}

// Nonzero initial states so that the trainable starting points matter.
void randomize(Model<double>& m, std::uint64_t seed, double range = 0.5) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-range, range);
  for (auto& p : m.parameters()) {
    for (auto& x : p.value) x = u(rng);
  }
}

std::vector<StepOutput<double>> run(Model<double>& m, Tape<double>& tape, const FlatProgram& p) {
  auto state = m.attach(tape, m.begin_program(p));
  return m.forward_chunk(tape, state, p, 0, p.length());
}

std::vector<double> values_of(const Var<double>& v) { return {v.value().begin(), v.value().end()}; }

void expect_near(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "index " << i;
}

// Relabels placeholders: slot k becomes slot perm[k].
FlatProgram relabel(FlatProgram p, const std::vector<int>& perm) {
  for (auto& v : p.values) {
    if (!is_dummy(v)) v = kNumDummies + perm[static_cast<std::size_t>(v - kNumDummies)];
  }
  return p;
}

std::vector<int> random_perm(std::mt19937_64& rng, int n) {
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  return perm;
}

// Merged distribution with placeholder entries pulled back through the relabeling.
std::vector<double> pulled_back(const std::vector<double>& dist, const std::vector<int>& perm) {
  auto out = dist;
  for (std::size_t k = 0; k < perm.size(); ++k) out[kNumDummies + k] = dist[kNumDummies + static_cast<std::size_t>(perm[k])];
  return out;
}

}  // namespace

TEST(Layout, CountsForSmallConfigs) {
  // dynamic: type 5x3, dummy 3x4, init_h/c 4+4, dyn lstm 16x(5+3+4)+16,
  // main lstm 20x(4+3+5)+20, init 5+5, attention 25+25+5, head 4x15+4, switch 4+1
  const int dynamic = 15 + 12 + 8 + (16 * 12 + 16) + (20 * 12 + 20) + 10 + 55 + (4 * 15 + 4) + 5;
  EXPECT_EQ(parameter_count(tiny(EmbeddingMode::dynamic)), static_cast<std::size_t>(dynamic));
  // static: value 7x4, head 5x15+5, output 7x5+7, switch 5+1
  const int stat = 15 + 28 + (20 * 12 + 20) + 10 + 55 + (5 * 15 + 5) + (7 * 5 + 7) + 6;
  EXPECT_EQ(parameter_count(tiny(EmbeddingMode::static_embeddings)), static_cast<std::size_t>(stat));
  // no attention: head reads only the hidden state and there is no switch
  const int plain = 15 + 28 + (20 * 12 + 20) + 10 + (5 * 5 + 5) + (7 * 5 + 7);
  EXPECT_EQ(parameter_count(tiny(EmbeddingMode::static_embeddings, 7, false, false)), static_cast<std::size_t>(plain));
  EXPECT_THROW(parameter_count(tiny(EmbeddingMode::dynamic, 7, false, true)), std::invalid_argument);
  // tied static: head 4x15+4 and switch 4+1, no output layer
  auto tied = tiny(EmbeddingMode::static_embeddings);
  tied.tie_output = true;
  EXPECT_EQ(parameter_count(tied), static_cast<std::size_t>(15 + 28 + (20 * 12 + 20) + 10 + 55 + (4 * 15 + 4) + 5));
}

TEST(Model, InitialStatesStartAtZero) {
  Model<double> m(tiny(EmbeddingMode::dynamic));
  m.init_uniform(3);
  for (const char* name : {"main.init_h", "main.init_c", "dynamic.init_h", "dynamic.init_c"}) {
    for (double x : m.parameter(name).value) EXPECT_EQ(x, 0.0) << name;
  }
  for (double x : m.parameter("main_lstm.weight").value) {
    EXPECT_LE(std::abs(x), 0.05);
  }
}

TEST(Model, FirstTokenGivesEqualPlaceholderLogits) {
  Model<double> m(tiny(EmbeddingMode::dynamic));
  randomize(m, 1);
  FlatProgram p;
  p.types = {1};
  p.values = {kEmpty};
  p.orig = {kEmpty};
  p.parent = {-1};
  Tape<double> tape;
  const auto outs = run(m, tape, p);
  const auto logits = values_of(outs[0].logits);
  for (std::size_t k = kNumDummies + 1; k < logits.size(); ++k) EXPECT_DOUBLE_EQ(logits[k], logits[kNumDummies]);
  // a chunk of length one still yields a distribution
  const auto dist = merged_distribution(outs[0], m.config());
  EXPECT_NEAR(std::accumulate(dist.begin(), dist.end(), 0.0), 1.0, 1e-12);
  EXPECT_FALSE(pointer_active(outs[0], m.config()));
}

TEST(Model, OnlyTheReadPlaceholderMoves) {
  Model<double> m(tiny(EmbeddingMode::dynamic));
  randomize(m, 2);
  FlatProgram p;
  p.types = {1};
  p.values = {kNumDummies};
  p.orig = {1000};
  p.parent = {-1};
  Tape<double> tape;
  auto state = m.attach(tape, m.begin_program(p));
  const auto init = m.parameter("dynamic.init_h").value;
  m.step(tape, state, 1, kNumDummies, -1);
  EXPECT_NE(values_of(state.bank.h[0]), init);
  for (std::size_t k = 1; k < state.bank.size(); ++k) EXPECT_EQ(values_of(state.bank.h[k]), init);
}

TEST(Model, MatchesStraightLineOracleOnShortPrograms) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Model<double> m(tiny(EmbeddingMode::dynamic));
    randomize(m, 100 + static_cast<std::uint64_t>(trial));
    const auto p = random_program(rng, 3, 5, m.config().value_vocab);
    Tape<double> tape;
    const auto outs = run(m, tape, p);
    const auto want = oracle::Reference(m).run(p);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      expect_near(values_of(outs[i].logits), want[i].logits, 1e-6);
      if (outs[i].history > 0) expect_near(values_of(outs[i].scores), want[i].scores, 1e-6);
      expect_near(merged_distribution(outs[i], m.config()), want[i].dist, 1e-6);
    }
  }
}

TEST(Model, MatchesOracleAcrossModesAndPastTheWindow) {
  std::mt19937_64 rng(12);
  std::vector<ModelConfig> configs = {
      tiny(EmbeddingMode::dynamic),
      tiny(EmbeddingMode::static_embeddings, 9),
      tiny(EmbeddingMode::no_vars, 3),
      tiny(EmbeddingMode::dynamic_full_data, 8),
      tiny(EmbeddingMode::dynamic, 7, true, false),
      tiny(EmbeddingMode::static_embeddings, 9, false, false),
  };
  configs.push_back(tiny(EmbeddingMode::static_embeddings, 9));
  configs.back().tie_output = true;
  configs.push_back(tiny(EmbeddingMode::no_vars, 3, true, false));
  configs.back().tie_output = true;
  for (const auto& cfg : configs) {
    Model<double> m(cfg);
    randomize(m, 7);
    const auto p = random_program(rng, 20, cfg.num_types, cfg.value_vocab);
    Tape<double> tape;
    const auto outs = run(m, tape, p);
    const auto want = oracle::Reference(m).run(p);
    for (std::size_t i = 0; i < outs.size(); ++i) {
      expect_near(values_of(outs[i].logits), want[i].logits, 1e-9);
      expect_near(merged_distribution(outs[i], cfg), want[i].dist, 1e-9);
    }
  }
}

TEST(Model, TiedStaticGradientsMatchFiniteDifferences) {
  auto cfg = tiny_gradcheck_config();
  cfg.mode = EmbeddingMode::static_embeddings;
  cfg.tie_output = true;
  const auto g = tiny_gradcheck(3, 1e-5, cfg);
  EXPECT_LT(g.result.max_relative_error, 1e-4) << g.result.worst;
}

TEST(Model, ChunkSplitMatchesSinglePass) {
  auto cfg = tiny(EmbeddingMode::dynamic);
  cfg.window = 50;
  Model<double> m(cfg);
  randomize(m, 5);
  std::mt19937_64 rng(5);
  const auto p = random_program(rng, 60, cfg.num_types, cfg.value_vocab);
  Tape<double> whole;
  const auto one = run(m, whole, p);

  Tape<double> first;
  auto s1 = m.attach(first, m.begin_program(p));
  auto a = m.forward_chunk(first, s1, p, 0, 50);
  const auto carried = m.detach(s1);
  Tape<double> second;
  auto s2 = m.attach(second, carried);
  auto b = m.forward_chunk(second, s2, p, 50, 60);
  a.insert(a.end(), b.begin(), b.end());
  ASSERT_EQ(a.size(), one.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    expect_near(merged_distribution(a[i], cfg), merged_distribution(one[i], cfg), 1e-12);
  }
  // the window caps the pointer history
  EXPECT_EQ(one[59].history, 50);
}

TEST(Model, DynamicIsEquivariantUnderRelabeling) {
  std::mt19937_64 rng(21);
  const auto cfg = tiny(EmbeddingMode::dynamic, kNumDummies + 6);
  int pairs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Model<double> m(cfg);
    randomize(m, 300 + static_cast<std::uint64_t>(trial));
    const auto p = random_program(rng, 12, cfg.num_types, cfg.value_vocab);
    const auto perm = random_perm(rng, cfg.num_slots());
    const auto q = relabel(p, perm);
    Tape<double> ta, tb;
    const auto oa = run(m, ta, p), ob = run(m, tb, q);
    for (std::size_t i = 0; i < oa.size(); ++i) {
      expect_near(pulled_back(merged_distribution(ob[i], cfg), perm), merged_distribution(oa[i], cfg), 1e-5);
    }
    ++pairs;
  }
  EXPECT_EQ(pairs, 100);
}

TEST(Model, StaticEmbeddingsAreNotEquivariant) {
  std::mt19937_64 rng(22);
  const auto cfg = tiny(EmbeddingMode::static_embeddings, kNumDummies + 6);
  bool witness = false;
  for (int trial = 0; trial < 100 && !witness; ++trial) {
    Model<double> m(cfg);
    randomize(m, 500 + static_cast<std::uint64_t>(trial), 1.0);
    const auto p = random_program(rng, 8, cfg.num_types, cfg.value_vocab);
    const auto perm = random_perm(rng, cfg.value_vocab - kNumDummies);
    Tape<double> ta, tb;
    const auto oa = run(m, ta, p), ob = run(m, tb, relabel(p, perm));
    for (std::size_t i = 0; i < oa.size(); ++i) {
      const auto da = merged_distribution(oa[i], cfg);
      const auto db = pulled_back(merged_distribution(ob[i], cfg), perm);
      const auto pa = predict_next(da, cfg.value_vocab), pb = predict_next(db, cfg.value_vocab);
      if (pa.copy != pb.copy || pa.value != pb.value || pa.offset != pb.offset) witness = true;
    }
  }
  EXPECT_TRUE(witness);
}

TEST(Model, IsolationFuzz) {
  auto cfg = tiny(EmbeddingMode::dynamic, kNumDummies + 5);
  cfg.window = 8;
  Model<double> m(cfg);
  randomize(m, 9);
  std::mt19937_64 rng(9);
  FlatProgram p = random_program(rng, 1000, cfg.num_types, cfg.value_vocab);
  p.parent.assign(p.length(), -1);
  Tape<double> tape;
  tape.set_recording(false);
  auto state = m.attach(tape, m.begin_program(p));
  const auto dummies = m.parameter("dummy_embedding").value;
  for (std::size_t i = 0; i < p.length(); ++i) {
    std::vector<std::vector<double>> before;
    for (const auto& h : state.bank.h) before.push_back(values_of(h));
    m.step(tape, state, p.types[i], p.values[i], -1);
    int changed = 0;
    for (std::size_t k = 0; k < before.size(); ++k) {
      if (values_of(state.bank.h[k]) != before[k]) {
        ++changed;
        EXPECT_EQ(static_cast<int>(k) + kNumDummies, p.values[i]);
      }
    }
    EXPECT_EQ(changed, is_dummy(p.values[i]) ? 0 : 1) << "step " << i;
  }
  EXPECT_EQ(m.parameter("dummy_embedding").value, dummies);
}

TEST(Prediction, SwitcherAtOneMeansVocabularyOnly) {
  auto cfg = tiny(EmbeddingMode::dynamic);
  Model<double> m(cfg);
  randomize(m, 4);
  for (auto& x : m.parameter("switch.weight").value) x = 0.0;
  m.parameter("switch.bias").value[0] = 800.0;
  std::mt19937_64 rng(4);
  const auto p = random_program(rng, 5, cfg.num_types, cfg.value_vocab);
  Tape<double> tape;
  const auto outs = run(m, tape, p);
  const auto dist = merged_distribution(outs[4], cfg);
  for (std::size_t j = static_cast<std::size_t>(cfg.value_vocab); j < dist.size(); ++j) EXPECT_EQ(dist[j], 0.0);
  EXPECT_FALSE(predict_next(dist, cfg.value_vocab).copy);
}

TEST(Prediction, TiesGoToTheVocabulary) {
  const std::vector<double> dist = {0.1, 0.4, 0.0, 0.0, 0.4, 0.1};
  const auto p = predict_next(dist, 4);
  EXPECT_FALSE(p.copy);
  EXPECT_EQ(p.value, 1);
  const auto q = predict_next(std::vector<double>{0.1, 0.2, 0.0, 0.0, 0.1, 0.6}, 4);
  EXPECT_TRUE(q.copy);
  EXPECT_EQ(q.offset, 2);
}

TEST(Prediction, CopiedValueLooksBack) {
  FlatProgram p;
  p.values = {5, 6, 7};
  EXPECT_EQ(copied_value(p, 3, 1), 7);
  EXPECT_EQ(copied_value(p, 3, 3), 5);
  EXPECT_THROW(copied_value(p, 2, 3), std::out_of_range);
}

TEST(Model, RejectsBadTokens) {
  Model<double> m(tiny(EmbeddingMode::dynamic));
  FlatProgram p = {{1, 1}, {0, 0}, {0, 0}, {-1, 0}, {}};
  Tape<double> tape;
  auto state = m.attach(tape, m.begin_program(p));
  EXPECT_THROW(m.step(tape, state, 9, 0, -1), std::out_of_range);
  EXPECT_THROW(m.step(tape, state, 1, 99, -1), std::out_of_range);
  EXPECT_THROW(m.step(tape, state, 1, 0, 0), std::out_of_range);
}

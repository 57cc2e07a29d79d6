#include <anoncomplete/autodiff.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>
#include <vector>

using namespace anoncomplete;

namespace {

Parameter<double> random_param(const std::string& name, int rows, int cols, std::mt19937_64& rng, double scale = 1.0) {
  Parameter<double> p(name, rows, cols);
  std::uniform_real_distribution<double> u(-scale, scale);
  for (auto& x : p.value) x = u(rng);
  return p;
}

// Builds f on a fresh tape for every parameter perturbation and compares the
// tape gradient with central differences.
double check(std::vector<Parameter<double>*> params, const std::function<Var<double>(Tape<double>&)>& f) {
  const auto r = grad_check(f, std::span<Parameter<double>* const>(params));
  return r.max_relative_error;
}

}  // namespace

TEST(Tape, SoftmaxOfLogTwoGivesThirds) {
  Tape<double> tape;
  const std::vector<double> x = {0.0, std::log(2.0)};
  auto s = ad::softmax(tape.constant(std::span<const double>(x)));
  EXPECT_NEAR(s.value()[0], 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(s.value()[1], 2.0 / 3.0, 1e-15);
}

TEST(Tape, LogSigmoidMatchesClosedForm) {
  Tape<double> tape;
  const std::vector<double> x = {-40.0, -1.0, 0.0, 3.0, 40.0};
  auto y = ad::log_sigmoid(tape.constant(std::span<const double>(x)));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double expected = -std::log1p(std::exp(-x[i]));
    EXPECT_NEAR(y.value()[i], expected, 1e-12) << x[i];
  }
}

TEST(Tape, MatmulByHand) {
  Tape<double> tape;
  const std::vector<double> w = {1, 2, 3, 4, 5, 6};  // 2 x 3 row-major
  const std::vector<double> x = {1, 0, -1};
  auto y = ad::matmul(tape.constant(std::span<const double>(w), 2, 3), tape.constant(std::span<const double>(x)));
  ASSERT_EQ(y.size(), 2u);
  EXPECT_DOUBLE_EQ(y.value()[0], -2.0);
  EXPECT_DOUBLE_EQ(y.value()[1], -2.0);
}

TEST(Tape, RowViewWritesOnlyItsRow) {
  Parameter<double> p("emb", 3, 2);
  p.value = {1, 2, 3, 4, 5, 6};
  Tape<double> tape;
  auto r = tape.row(p, 1);
  EXPECT_DOUBLE_EQ(r.value()[0], 3.0);
  tape.backward(ad::sum(ad::mul(r, r)));
  EXPECT_EQ(p.grad, (std::vector<double>{0, 0, 6, 8, 0, 0}));
}

TEST(Tape, NonRecordingTapeLeavesGradientsUntouched) {
  Parameter<double> p("w", 1, 2);
  p.value = {1.0, 2.0};
  Tape<double> tape(false);
  auto y = ad::sum(ad::mul(tape.param(p), tape.param(p)));
  EXPECT_DOUBLE_EQ(y.item(), 5.0);
  tape.backward(y);
  EXPECT_EQ(p.grad, (std::vector<double>{0.0, 0.0}));
  EXPECT_EQ(tape.num_backward_ops(), 0u);
}

TEST(Tape, NonFiniteValuesThrow) {
  Tape<double> tape;
  const std::vector<double> x = {-1.0};
  EXPECT_THROW(ad::log(tape.constant(std::span<const double>(x))), NumericError);
}

TEST(Tape, ShapeMismatchThrows) {
  Tape<double> tape;
  const std::vector<double> a = {1, 2}, b = {1, 2, 3};
  EXPECT_THROW(ad::add(tape.constant(std::span<const double>(a)), tape.constant(std::span<const double>(b))), ShapeError);
}

TEST(Tape, GradientsAccumulateAcrossUses) {
  Parameter<double> p("x", 1, 1);
  p.value = {3.0};
  Tape<double> tape;
  auto x = tape.param(p);
  // y = x*x + 2x -> dy/dx = 2x + 2 = 8
  auto y = ad::add(ad::mul(x, x), ad::scale(x, 2.0));
  tape.backward(y);
  EXPECT_DOUBLE_EQ(p.grad[0], 8.0);
}

TEST(Tape, Min2RoutesGradientToSmallerOperand) {
  Parameter<double> a("a", 1, 1), b("b", 1, 1);
  a.value = {0.2};
  b.value = {0.9};
  Tape<double> tape;
  auto m = ad::min2(tape.param(a), tape.param(b));
  EXPECT_DOUBLE_EQ(m.item(), 0.2);
  tape.backward(m);
  EXPECT_DOUBLE_EQ(a.grad[0], 1.0);
  EXPECT_DOUBLE_EQ(b.grad[0], 0.0);
}

class OpGradients : public ::testing::Test {
 protected:
  std::mt19937_64 rng{42};
};

TEST_F(OpGradients, Elementwise) {
  auto a = random_param("a", 4, 1, rng), b = random_param("b", 4, 1, rng);
  EXPECT_LT(check({&a, &b}, [&](Tape<double>& t) {
              auto x = t.param(a), y = t.param(b);
              auto z = ad::add(ad::mul(ad::sigmoid(x), ad::tanh(y)), ad::sub(ad::neg(x), ad::add_scalar(y, 0.5)));
              return ad::sum(ad::mul(z, z));
            }),
            1e-7);
}

TEST_F(OpGradients, LogAndLogSigmoid) {
  auto a = random_param("a", 5, 1, rng);
  EXPECT_LT(check({&a}, [&](Tape<double>& t) {
              auto x = t.param(a);
              return ad::sum(ad::add(ad::log_sigmoid(x), ad::log(ad::add_scalar(ad::mul(x, x), 1.0))));
            }),
            1e-7);
}

TEST_F(OpGradients, SoftmaxAndLogSoftmax) {
  auto a = random_param("a", 6, 1, rng, 2.0), w = random_param("w", 6, 1, rng);
  EXPECT_LT(check({&a, &w}, [&](Tape<double>& t) {
              auto x = t.param(a);
              return ad::add(ad::dot(ad::softmax(x), t.param(w)), ad::pick(ad::log_softmax(x), 2));
            }),
            1e-7);
}

TEST_F(OpGradients, MatmulLinearConcatSlice) {
  auto w = random_param("w", 3, 5, rng), b = random_param("b", 3, 1, rng), x = random_param("x", 2, 1, rng),
       y = random_param("y", 3, 1, rng);
  EXPECT_LT(check({&w, &b, &x, &y}, [&](Tape<double>& t) {
              auto in = ad::concat({t.param(x), t.param(y)});
              auto h = ad::tanh(ad::linear(t.param(w), t.param(b), in));
              auto m = ad::matmul(t.param(w), in);
              return ad::add(ad::sum(ad::slice(h, 1, 2)), ad::dot(m, m));
            }),
            1e-7);
}

TEST_F(OpGradients, RowsRepeatScatter) {
  auto e = random_param("e", 4, 3, rng), s = random_param("s", 1, 1, rng), v = random_param("v", 3, 1, rng);
  EXPECT_LT(check({&e, &s, &v}, [&](Tape<double>& t) {
              auto m = t.param(e);
              auto r = ad::add(ad::row(m, 2), ad::row(m, 0));
              auto rep = ad::repeat(t.param(s), 3);
              const std::vector<int> idx = {1};
              const std::vector<Var<double>> vals = {t.param(s)};
              auto sc = ad::scatter_replace(t.param(v), std::span<const int>(idx), std::span<const Var<double>>(vals));
              return ad::dot(ad::mul(r, rep), ad::tanh(sc));
            }),
            1e-7);
}

TEST_F(OpGradients, DotsAttentionWeightedSum) {
  auto k1 = random_param("k1", 4, 1, rng), k2 = random_param("k2", 4, 1, rng), k3 = random_param("k3", 4, 1, rng);
  auto q = random_param("q", 4, 1, rng), v = random_param("v", 4, 1, rng);
  EXPECT_LT(check({&k1, &k2, &k3, &q, &v}, [&](Tape<double>& t) {
              std::vector<Var<double>> keys = {t.param(k1), t.param(k2), t.param(k3)};
              auto scores = ad::attention_scores(std::span<const Var<double>>(keys), t.param(q), t.param(v));
              auto ctx = ad::weighted_sum(std::span<const Var<double>>(keys), ad::softmax(scores));
              auto d = ad::dots(std::span<const Var<double>>(keys), ctx);
              return ad::add(ad::sum(d), ad::pick(ad::log_softmax(scores), 1));
            }),
            1e-7);
}

TEST(AttentionScores, MatchAdditiveFormula) {
  Tape<double> tape;
  const std::vector<double> k1 = {0.5, -1.0}, k2 = {2.0, 0.25}, q = {0.1, 0.3}, v = {1.5, -0.5};
  std::vector<Var<double>> keys = {tape.constant(std::span<const double>(k1)), tape.constant(std::span<const double>(k2))};
  auto s = ad::attention_scores(std::span<const Var<double>>(keys), tape.constant(std::span<const double>(q)),
                                tape.constant(std::span<const double>(v)));
  const double s1 = 1.5 * std::tanh(0.6) - 0.5 * std::tanh(-0.7);
  const double s2 = 1.5 * std::tanh(2.1) - 0.5 * std::tanh(0.55);
  EXPECT_NEAR(s.value()[0], s1, 1e-14);
  EXPECT_NEAR(s.value()[1], s2, 1e-14);
}

// Straight-line LSTM step written out per unit.
TEST(LstmCell, MatchesScalarRecomputation) {
  std::mt19937_64 rng(3);
  const int in = 3, hd = 2;
  auto w = random_param("w", 4 * hd, in + hd, rng, 0.7), b = random_param("b", 4 * hd, 1, rng, 0.7);
  auto x = random_param("x", in, 1, rng), h = random_param("h", hd, 1, rng), c = random_param("c", hd, 1, rng);
  Tape<double> tape;
  auto [h2, c2] = ad::lstm_cell(tape.param(x), tape.param(h), tape.param(c), tape.param(w), tape.param(b));
  auto sig = [](double z) { return 1.0 / (1.0 + std::exp(-z)); };
  std::vector<double> xh(x.value);
  xh.insert(xh.end(), h.value.begin(), h.value.end());
  auto gate = [&](int row) {
    double z = b.value[static_cast<std::size_t>(row)];
    for (int j = 0; j < in + hd; ++j) z += w.value[static_cast<std::size_t>(row * (in + hd) + j)] * xh[static_cast<std::size_t>(j)];
    return z;
  };
  for (int u = 0; u < hd; ++u) {
    const double ig = sig(gate(u)), fg = sig(gate(hd + u)), g = std::tanh(gate(2 * hd + u)), og = sig(gate(3 * hd + u));
    const double cn = fg * c.value[static_cast<std::size_t>(u)] + ig * g;
    EXPECT_NEAR(c2.value()[static_cast<std::size_t>(u)], cn, 1e-14);
    EXPECT_NEAR(h2.value()[static_cast<std::size_t>(u)], og * std::tanh(cn), 1e-14);
  }
}

TEST(LstmCell, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(5);
  auto w = random_param("w", 12, 5, rng, 0.5), b = random_param("b", 12, 1, rng, 0.5);
  auto x = random_param("x", 2, 1, rng), h = random_param("h", 3, 1, rng), c = random_param("c", 3, 1, rng);
  EXPECT_LT(check({&w, &b, &x, &h, &c}, [&](Tape<double>& t) {
              auto [h1, c1] = ad::lstm_cell(t.param(x), t.param(h), t.param(c), t.param(w), t.param(b));
              auto [h2, c2] = ad::lstm_cell(t.param(x), h1, c1, t.param(w), t.param(b));
              return ad::add(ad::sum(h2), ad::dot(c2, c2));
            }),
            1e-7);
}

TEST(GradCheck, DetectsAWrongGradient) {
  Parameter<double> p("x", 1, 1);
  p.value = {0.7};
  // value x^2 but backward claims 3x
  auto f = [&](Tape<double>& t) {
    auto x = t.param(p);
    Var<double> out = t.make(1, 1, x.requires_grad());
    const double xv = x.value()[0];
    const_cast<double*>(out.value().data())[0] = xv * xv;
    if (out.requires_grad()) {
      t.on_backward([x, out] { x.grad()[0] += 3.0 * x.value()[0] * out.grad()[0]; });
    }
    return out;
  };
  std::vector<Parameter<double>*> ps = {&p};
  EXPECT_GT(grad_check(f, std::span<Parameter<double>* const>(ps)).max_relative_error, 0.1);
}

TEST(RelativeError, FloorHandlesVanishingGradients) {
  EXPECT_DOUBLE_EQ(relative_error(0.0, 0.0), 0.0);
  EXPECT_DOUBLE_EQ(relative_error(1e-9, 0.0), 1e-3);
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
}

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "op_cases.hpp"
#include "test_util.hpp"

using namespace pren;
using namespace testutil;

namespace {

std::vector<double> vec(const Tensor<double>& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST(Tensor, RejectsLengthMismatchAndZeroExtent) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_THROW(Tensor<double>({2, 0}, {}), DimensionError);
  Tensor<double> t({2, 3}, std::vector<double>(6, 1.0));
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.grad().size(), t.numel());
}

TEST(Autograd, IdentityGradientIsOne) {
  auto x = Tensor<double>::scalar(3.0, true);
  backward(sum(x));
  EXPECT_DOUBLE_EQ(x.grad()[0], 1.0);
}

TEST(Autograd, SumOfSquares) {
  Tensor<double> x({2}, {1, 2}, true);
  backward(sum(mul(x, x)));
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Autograd, RepeatedBackwardAccumulates) {
  Tensor<double> x({2}, {1, 2}, true);
  auto y = sum(mul(x, x));
  backward(y);
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 8.0);
  x.zero_grad();
  backward(y);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(Autograd, SharedOperandAccumulatesAdditively) {
  Tensor<double> x({3}, {1, -2, 0.5}, true);
  // y = sum(x + x + x*x) -> dy/dx = 2 + 2x
  backward(sum(add(add(x, x), mul(x, x))));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(x.grad()[i], 2.0 + 2.0 * x.data()[i]);
}

TEST(Autograd, NonScalarRootIsUsageError) {
  Tensor<double> x({2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(x, x)), UsageError);
}

TEST(Autograd, TapeIsTopologicallyOrdered) {
  Tensor<double> a({2}, {1, 2}, true), b({2}, {3, 4}, true);
  auto c = mul(a, b);
  auto d = add(c, a);
  auto e = sum(mul(d, c));
  const auto tape = Tape<double>::record(e);
  const auto entries = tape.entries();
  ASSERT_EQ(entries.size(), 6u);
  EXPECT_EQ(entries.back(), e.node());
  for (std::size_t i = 0; i < entries.size(); ++i)
    for (const auto& in : entries[i]->inputs) {
      const auto pos = std::find(entries.begin(), entries.end(), in.get()) - entries.begin();
      EXPECT_LT(static_cast<std::size_t>(pos), i) << "operand of " << entries[i]->op << " recorded after it";
    }
}

TEST(Autograd, NoGradGuardRecordsNothing) {
  Tensor<double> x({2}, {1, 2}, true);
  Tensor<double> y;
  {
    NoGradGuard ng;
    y = sum(mul(x, x));
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_TRUE(grad_enabled());
}

TEST(Autograd, BackwardIsDeterministic) {
  auto run = [] {
    Rng rng(9);
    auto x = randn(rng, {2, 6, 6}, 1.0, true);
    auto k = randn(rng, {3, 2, 3, 3}, 0.5, true);
    auto b = randn(rng, {3}, 1.0, true);
    backward(sum(swish(conv2d(x, k, b, 2, 1))));
    auto g = vec(k);
    g.assign(k.grad().begin(), k.grad().end());
    g.insert(g.end(), x.grad().begin(), x.grad().end());
    return g;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), b.size());
  EXPECT_EQ(0, std::memcmp(a.data(), b.data(), a.size() * sizeof(double)));
}

class OpGradient : public ::testing::TestWithParam<std::size_t> {};

TEST_P(OpGradient, MatchesCentralDifferencesOverTenSeeds) {
  const auto cases = op_cases();
  const auto& c = cases[GetParam()];
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto [f, params] = c.build(seed);
    const auto rep = grad_check(f, params);
    EXPECT_TRUE(rep.passed) << c.name << " seed " << seed << " max rel err " << rep.max_rel_error << " "
                            << rep.diagnostic;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::Range<std::size_t>(0, op_cases().size()),
                         [](const auto& info) { return op_cases()[info.param].name; });

TEST(GradCheck, LinearFunctionIsNearlyExact) {
  Rng rng(1);
  auto x = randn(rng, {4}, 1.0, true);
  auto w = randn(rng, {4});
  GradCheckOptions opt;
  opt.step = 1e-2;  // central differences are exact for linear maps up to rounding
  const auto rep = grad_check([&] { return sum(mul(x, w)); }, {{"x", x}}, opt);
  EXPECT_TRUE(rep.passed);
  EXPECT_LT(rep.max_rel_error, 1e-10);
}

TEST(GradCheck, ConvSigmoidChain) {
  Rng rng(2);
  auto x = randn(rng, {2, 5, 5}, 1.0, true);
  auto k = randn(rng, {2, 2, 3, 3}, 0.5, true);
  auto b = randn(rng, {2}, 1.0, true);
  const auto rep =
      grad_check([&] { return sum(sigmoid(conv2d(x, k, b, 1, 1))); }, {{"x", x}, {"k", k}, {"b", b}});
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(GradCheck, DetectsWrongBackwardRule) {
  Tensor<double> x({3}, {0.3, -1.2, 2.0}, true);
  auto bad_square = [](const Tensor<double>& in) {
    std::vector<double> v(in.data().begin(), in.data().end());
    for (auto& e : v) e *= e;
    return make_result<double>("bad_square", in.shape(), v, {in}, [](Node<double>& self) {
      auto g = self.inputs[0]->grad_span();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * 3.0 * self.inputs[0]->value[i];
    });
  };
  const auto rep = grad_check([&] { return sum(bad_square(x)); }, {{"x", x}});
  EXPECT_FALSE(rep.passed);
}

TEST(GradCheck, NamesOpProducingNonFiniteValue) {
  Tensor<double> x({2}, {1.0, 2.0}, true);
  auto blowup = [](const Tensor<double>& in) {
    std::vector<double> v(in.numel(), INFINITY);
    return make_result<double>("blowup", in.shape(), v, {in}, [](Node<double>&) {});
  };
  const auto rep = grad_check([&] { return sum(blowup(x)); }, {{"x", x}});
  EXPECT_FALSE(rep.passed);
  EXPECT_NE(rep.diagnostic.find("blowup"), std::string::npos) << rep.diagnostic;
}

TEST(Ops, MatmulExamples) {
  Tensor<double> eye({2, 2}, {1, 0, 0, 1}), m({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(vec(matmul(eye, m)), vec(m));
  EXPECT_DOUBLE_EQ(matmul(Tensor<double>({1, 1}, {2}), Tensor<double>({1, 1}, {3})).item(), 6.0);
  EXPECT_THROW(matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({2, 3})), DimensionError);
  try {
    matmul(Tensor<double>::zeros({2, 3}), Tensor<double>::zeros({4, 5}));
  } catch (const DimensionError& e) {
    EXPECT_NE(std::string(e.what()).find("[2x3]"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[4x5]"), std::string::npos);
  }
}

TEST(Ops, MatmulGradAtIdentity) {
  Tensor<double> a({2, 2}, {1, 0, 0, 1}, true);
  Rng rng(4);
  auto b = randn(rng, {2, 2}, 1.0, true);
  auto r = randn(rng, {2, 2});
  const auto rep = grad_check([&] { return project(matmul(a, b), r); }, {{"a", a}, {"b", b}});
  EXPECT_LT(rep.max_rel_error, 1e-6);
}

TEST(Ops, MatmulMatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto a = randn(rng, {5, 7}), b = randn(rng, {7, 3}), c = randn(rng, {4, 7});
    EXPECT_LT(max_abs_diff(matmul(a, b), naive_matmul(to_mat(a), to_mat(b)).v), 1e-12);
    EXPECT_LT(max_abs_diff(matmul_nt(a, c), naive_matmul(to_mat(a), naive_transpose(to_mat(c))).v), 1e-12);
  }
}

TEST(Ops, ConvIdentityKernel) {
  Rng rng(3);
  auto x = randn(rng, {1, 4, 5});
  auto y = conv2d(x, Tensor<double>::full({1, 1, 1, 1}, 1.0), Tensor<double>::zeros({1}), 1, 0);
  EXPECT_EQ(vec(y), vec(x));
}

TEST(Ops, ConvOnesKernelOnOnes) {
  auto y = conv2d(Tensor<double>::full({1, 3, 3}, 1.0), Tensor<double>::full({1, 1, 3, 3}, 1.0),
                  Tensor<double>::zeros({1}), 1, 1);
  EXPECT_DOUBLE_EQ(y.data()[4], 9.0);
  for (std::size_t i : {0, 2, 6, 8}) EXPECT_DOUBLE_EQ(y.data()[i], 4.0);
  for (std::size_t i : {1, 3, 5, 7}) EXPECT_DOUBLE_EQ(y.data()[i], 6.0);
}

TEST(Ops, ConvStrideArithmetic) {
  auto y = conv2d(Tensor<double>::zeros({1, 8, 8}), Tensor<double>::zeros({2, 1, 3, 3}), Tensor<double>::zeros({2}),
                  2, 1);
  EXPECT_EQ(y.shape(), (Shape{2, 4, 4}));
}

TEST(Ops, ConvMatchesDirectOracle) {
  struct Spec {
    std::size_t cin, cout, h, w, k, s, p;
  };
  for (Spec sp : {Spec{2, 3, 5, 7, 3, 1, 1}, Spec{3, 4, 9, 6, 3, 2, 1}, Spec{2, 2, 4, 4, 1, 1, 0},
                  Spec{1, 2, 8, 16, 3, 2, 1}, Spec{2, 3, 6, 5, 5, 2, 2}, Spec{2, 2, 5, 5, 3, 1, 0}}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      Rng rng(seed);
      auto x = randn(rng, {sp.cin, sp.h, sp.w}), k = randn(rng, {sp.cout, sp.cin, sp.k, sp.k}),
           b = randn(rng, {sp.cout});
      std::size_t oh = 0, ow = 0;
      const auto ref = naive_conv(vec(x), sp.cin, sp.h, sp.w, vec(k), vec(b), sp.cout, sp.k, sp.s, sp.p, oh, ow);
      const auto y = conv2d(x, k, b, sp.s, sp.p);
      ASSERT_EQ(y.shape(), (Shape{sp.cout, oh, ow}));
      EXPECT_LT(max_abs_diff(y, ref), 1e-12);
    }
  }
}

TEST(Ops, ConvConfigurationErrors) {
  auto x = Tensor<double>::zeros({1, 2, 2});
  auto b = Tensor<double>::zeros({1});
  EXPECT_THROW(conv2d(x, Tensor<double>::zeros({1, 1, 5, 5}), b, 1, 0), ConfigError);  // output < 1
  EXPECT_THROW(conv2d(x, Tensor<double>::zeros({1, 1, 2, 2}), b, 1, 0), ConfigError);  // even kernel
  EXPECT_THROW(conv2d(x, Tensor<double>::zeros({1, 2, 3, 3}), b, 1, 1), DimensionError);
}

TEST(Ops, GlobalAvgPool) {
  EXPECT_DOUBLE_EQ(global_avg_pool(Tensor<double>::full({2, 3, 3}, 7.0)).data()[1], 7.0);
  EXPECT_DOUBLE_EQ(global_avg_pool(Tensor<double>({1, 2, 2}, {1, 2, 3, 4})).item(), 2.5);
}

TEST(Ops, GlobalAvgPoolEqualsUniformWeightedSum) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = randn(rng, {4, 3, 5});
    const std::size_t m = 15;
    // Weighted aggregation core with a_ij = 1/m: [1 x m] * [m x c].
    auto a = Tensor<double>::full({1, m}, 1.0 / m);
    auto ref = matmul_nt(a, reshape(x, {4, m}));
    EXPECT_LT(max_abs_diff(global_avg_pool(x).data(), ref.data()), 1e-12);
  }
}

TEST(Ops, SoftmaxExamples) {
  auto u = softmax_lastdim(Tensor<double>({1, 3}, {0, 0, 0}));
  for (double v : u.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto big = softmax_lastdim(Tensor<double>({1, 3}, {1000, 1000, 1000}));
  for (double v : big.data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
  auto q = softmax_lastdim(Tensor<double>({1, 2}, {0, std::log(3.0)}));
  EXPECT_NEAR(q.data()[0], 0.25, 1e-15);
  EXPECT_NEAR(q.data()[1], 0.75, 1e-15);
}

TEST(Ops, SoftmaxRowsSumToOneAndShiftInvariant) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    auto x = randn(rng, {6, 9}, 5.0);
    auto p = softmax_lastdim(x);
    std::vector<double> shifted(x.data().begin(), x.data().end());
    for (auto& v : shifted) v += 123.25;
    auto ps = softmax_lastdim(Tensor<double>(x.shape(), shifted));
    for (std::size_t r = 0; r < 6; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        const double v = p.data()[r * 9 + j];
        EXPECT_GE(v, 0.0);
        s += v;
        EXPECT_NEAR(v, ps.data()[r * 9 + j], 1e-7);
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(Ops, CausalSoftmaxMasksFuture) {
  Rng rng(2);
  auto p = causal_softmax(randn(rng, {4, 4}));
  for (std::size_t i = 0; i < 4; ++i) {
    double s = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      if (j > i) {
        EXPECT_EQ(p.data()[i * 4 + j], 0.0);
      }
      s += p.data()[i * 4 + j];
    }
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(Ops, Activations) {
  EXPECT_DOUBLE_EQ(sigmoid(Tensor<double>::scalar(0.0)).item(), 0.5);
  EXPECT_DOUBLE_EQ(swish(Tensor<double>::scalar(0.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(activation(Tensor<double>::scalar(0.0), Activation::phi).item(), 0.0);
  auto x = Tensor<double>::scalar(0.0, true);
  backward(sum(sigmoid(x)));
  EXPECT_NEAR(x.grad()[0], 0.25, 1e-15);
  const double h = 1e-5;
  const double fd = (naive_sigmoid(h) - naive_sigmoid(-h)) / (2 * h);
  EXPECT_NEAR(x.grad()[0], fd, 1e-9);
  auto s = sigmoid(Tensor<double>({3}, {-800.0, 1.5, 800.0}));
  for (double v : s.data()) EXPECT_TRUE(std::isfinite(v));
  EXPECT_NEAR(s.data()[1], naive_sigmoid(1.5), 1e-15);
  EXPECT_NEAR(swish(Tensor<double>::scalar(1.5)).item(), naive_swish(1.5), 1e-15);
}

TEST(Ops, LayerNorm) {
  auto one = Tensor<double>::full({3}, 1.0), zero = Tensor<double>::zeros({3});
  const auto flat = layer_norm(Tensor<double>::full({1, 3}, 4.2), one, zero);
  for (double v : flat.data()) EXPECT_EQ(v, 0.0);
  auto r = layer_norm(Tensor<double>({1, 2}, {1, 3}), Tensor<double>::full({2}, 1.0), Tensor<double>::zeros({2}));
  EXPECT_NEAR(r.data()[0], -1.0, 1e-4);
  EXPECT_NEAR(r.data()[1], 1.0, 1e-4);
  EXPECT_NEAR(r.data()[1], 1.0 / std::sqrt(1.0 + kLayerNormEps), 1e-12);
  Rng rng(3);
  auto y = layer_norm(randn(rng, {5, 8}, 3.0), Tensor<double>::full({8}, 1.0), Tensor<double>::zeros({8}));
  for (std::size_t i = 0; i < 5; ++i) {
    double m = 0;
    for (std::size_t j = 0; j < 8; ++j) m += y.data()[i * 8 + j];
    EXPECT_LE(std::abs(m / 8), 1e-7);
  }
}

TEST(Ops, UpsampleNearest) {
  Rng rng(5);
  auto x = randn(rng, {2, 3, 2});
  EXPECT_EQ(vec(upsample_nearest(x, 1)), vec(x));
  auto y = upsample_nearest(Tensor<double>({1, 1, 2}, {1, 2}), 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 4}));
  EXPECT_EQ(vec(y), (std::vector<double>{1, 1, 2, 2, 1, 1, 2, 2}));
  auto xg = Tensor<double>({1, 1, 2}, {1, 2}, true);
  backward(sum(upsample_nearest(xg, 2)));
  EXPECT_DOUBLE_EQ(xg.grad()[0], 4.0);
  EXPECT_DOUBLE_EQ(xg.grad()[1], 4.0);
}

TEST(Ops, EmbeddingGathersRowsAndScattersGrad) {
  Tensor<double> table({3, 2}, {1, 2, 3, 4, 5, 6}, true);
  const std::vector<int> idx{2, 0, 2};
  auto e = embedding(table, std::span<const int>(idx));
  EXPECT_EQ(vec(e), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  backward(sum(e));
  EXPECT_EQ(std::vector<double>(table.grad().begin(), table.grad().end()), (std::vector<double>{1, 1, 0, 0, 2, 2}));
}

TEST(Ops, ConcatPreservesColumnBlocks) {
  Rng rng(8);
  auto a = randn(rng, {3, 2}), b = randn(rng, {3, 4});
  auto c = concat_cols<double>({a, b});
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 2; ++j) EXPECT_EQ(c.data()[i * 6 + j], a.data()[i * 2 + j]);
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(c.data()[i * 6 + 2 + j], b.data()[i * 4 + j]);
  }
}

TEST(Ops, FiniteOutputsOnFiniteInputs) {
  Rng rng(11);
  auto x = randn(rng, {2, 8, 8}, 10.0);
  auto k = randn(rng, {3, 2, 3, 3}, 1.0);
  auto y = softmax_lastdim(reshape(swish(conv2d(x, k, Tensor<double>::zeros({3}), 1, 1)), {3, 64}));
  for (double v : y.data()) EXPECT_TRUE(std::isfinite(v));
}

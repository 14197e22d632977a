#include <gtest/gtest.h>

#include <random>

#include "lsd/gradcheck.hpp"
#include "lsd/nn.hpp"

using lsd::ad::Tensor;
namespace ad = lsd::ad;

namespace {

Tensor<double> random_param(std::mt19937_64& rng, ad::Shape shape, double scale = 1.0) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::normal_distribution<double> dist(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return Tensor<double>::parameter(std::move(v), std::move(shape));
}

}  // namespace

TEST(Autodiff, AddMulForward) {
  auto a = Tensor<double>::constant({1, 2, 3, 4}, {2, 2});
  auto b = Tensor<double>::constant({10, 20}, {2});
  auto c = ad::add(a, b);
  EXPECT_EQ(c.data(), (std::vector<double>{11, 22, 13, 24}));
  auto d = ad::mul(a, a);
  EXPECT_EQ(d.data(), (std::vector<double>{1, 4, 9, 16}));
}

TEST(Autodiff, ShapeMismatchNamesBothShapes) {
  auto a = Tensor<double>::zeros({2, 3});
  auto b = Tensor<double>::zeros({4, 5});
  try {
    ad::matmul(a, b);
    FAIL();
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2x3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4x5)"), std::string::npos) << msg;
  }
}

TEST(Autodiff, NoGradGuardStopsRecording) {
  auto w = Tensor<double>::parameter({1, 2}, {2});
  {
    ad::NoGradGuard g;
    auto y = ad::sum(ad::mul(w, w));
    EXPECT_FALSE(y.requires_grad());
  }
  auto y = ad::sum(ad::mul(w, w));
  EXPECT_TRUE(y.requires_grad());
  ad::backward(y);
  EXPECT_DOUBLE_EQ(w.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(w.grad()[1], 4.0);
}

TEST(Autodiff, BackwardRejectsNonScalar) {
  auto w = Tensor<double>::parameter({1, 2}, {2});
  EXPECT_THROW(ad::backward(ad::mul(w, w)), std::invalid_argument);
}

TEST(Autodiff, SharedSubexpressionAccumulates) {
  auto x = Tensor<double>::parameter({3}, {1});
  auto y = ad::mul(x, x);
  auto z = ad::sum(ad::add(y, y));
  ad::backward(z);
  EXPECT_DOUBLE_EQ(x.grad()[0], 12.0);
}

TEST(Autodiff, ElementwiseOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(1);
  auto a = random_param(rng, {3, 4});
  auto b = random_param(rng, {3, 4});
  auto row = random_param(rng, {4});
  auto loss = [&] {
    auto s = ad::add(ad::mul(ad::tanh(a), ad::sigmoid(b)), row);
    auto t = ad::add(ad::softplus(ad::sub(a, b)), ad::exp(ad::scale(b, 0.3)));
    auto u = ad::log(ad::add_scalar(ad::square(a), 1.0));
    auto v = ad::sqrt(ad::add_scalar(ad::square(b), 0.5));
    return ad::sum(ad::add(ad::add(ad::mul(s, t), u), v));
  };
  auto r = lsd::check_gradients({a, b, row}, loss);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Autodiff, StructuralOpsMatchFiniteDifferences) {
  std::mt19937_64 rng(2);
  auto a = random_param(rng, {4, 3});
  auto b = random_param(rng, {3, 5});
  auto w = random_param(rng, {4, 1});
  auto loss = [&] {
    auto m = ad::matmul(a, b);                              // 4x5
    auto c = ad::concat<double>({m, a});                    // 4x8
    auto g = ad::gather_rows(c, {3, 0, 0, 2});              // 4x8
    auto sl = ad::slice_cols(g, 2, 5);                      // 4x5
    auto sc = ad::scale_rows(sl, w);
    auto mx = ad::max_rows(sc);                             // 5
    auto seg = ad::segment_max(sc, {0, 1, 0, 1}, 2);        // 2x5
    auto lsm = ad::log_softmax_rows(seg);
    auto r = ad::reshape(ad::transpose(m), {20});
    auto st = ad::vstack<double>({sl, m});  // 8x5
    return ad::add(ad::add(ad::sum(mx), ad::sum(lsm)),
                   ad::add(ad::add(ad::mean(r), ad::sum(ad::sum_cols(seg))), ad::sum(ad::tanh(st))));
  };
  auto r = lsd::check_gradients({a, b, w}, loss);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Autodiff, VstackAndRowsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  auto a = random_param(rng, {2, 3});
  auto b = random_param(rng, {3});
  auto loss = [&] {
    auto s = ad::vstack<double>({a, ad::reshape(b, {1, 3})});
    auto mr = ad::mean_rows(ad::mul(s, s));
    return ad::add(ad::sum(ad::mul(mr, ad::sum_rows(s))), ad::min_all(ad::row(s, 2)));
  };
  auto r = lsd::check_gradients({a, b}, loss);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Autodiff, LossPrimitivesMatchFiniteDifferences) {
  std::mt19937_64 rng(4);
  auto logits = random_param(rng, {5, 4});
  auto q = random_param(rng, {4});
  auto pa = random_param(rng, {7, 3});
  auto pb = random_param(rng, {6, 3});
  auto loss = [&] {
    auto ce = ad::cross_entropy(logits, {0, 3, 2, 2, 1});
    auto bce = ad::bce_with_logits(logits, std::vector<double>(20, 0.25));
    auto R = ad::quat_to_rot(q);
    auto rot = ad::sum(ad::mul(R, Tensor<double>::constant({1, 2, 3, 4, 5, 6, 7, 8, 9}, {3, 3})));
    return ad::add(ad::add(ce, bce), ad::add(rot, ad::chamfer_sq(pa, pb)));
  };
  auto r = lsd::check_gradients({logits, q, pa, pb}, loss);
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Autodiff, CrossEntropyValue) {
  auto logits = Tensor<double>::constant({0, 0, std::log(2.0)}, {1, 3});
  EXPECT_NEAR(ad::cross_entropy(logits, {2}).item(), -std::log(0.5), 1e-12);
}

TEST(Autodiff, ChamferOfIdenticalSetsIsZero) {
  auto a = Tensor<double>::constant({0, 0, 0, 1, 2, 3}, {2, 3});
  EXPECT_DOUBLE_EQ(ad::chamfer_sq(a, a).item(), 0.0);
  auto b = Tensor<double>::constant({0, 0, 1}, {1, 3});
  auto c = Tensor<double>::constant({0, 0, 0}, {1, 3});
  EXPECT_DOUBLE_EQ(ad::chamfer_sq(b, c).item(), 2.0);
}

TEST(Nn, ThreeLayerMlpMatchesFiniteDifferences) {
  lsd::nn::ParamStore<double> store(7);
  lsd::nn::Mlp<double> mlp(store, "mlp", {6, 8, 8, 3});
  std::mt19937_64 rng(8);
  auto x = random_param(rng, {2, 6});
  std::vector<Tensor<double>> inputs{x};
  for (auto& [name, t] : store.entries()) inputs.push_back(t);
  auto r = lsd::check_gradients(inputs, [&] { return ad::sum(ad::square(mlp(x))); });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Nn, LstmThreeStepsMatchesFiniteDifferences) {
  lsd::nn::ParamStore<double> store(9);
  lsd::nn::LstmCell<double> cell(store, "lstm", 4, 5);
  std::mt19937_64 rng(10);
  std::vector<Tensor<double>> xs{random_param(rng, {4}), random_param(rng, {4}), random_param(rng, {4})};
  std::vector<Tensor<double>> inputs(xs);
  for (auto& [name, t] : store.entries()) inputs.push_back(t);
  auto r = lsd::check_gradients(inputs, [&] {
    auto s = lsd::nn::LstmState<double>::zeros(5);
    Tensor<double> acc = Tensor<double>::scalar(0);
    for (auto& x : xs) {
      s = cell.step(s, x);
      acc = ad::add(acc, ad::sum(ad::mul(s.hidden, s.cell)));
    }
    return acc;
  });
  EXPECT_LT(r.max_rel_error, 1e-4) << r.worst;
}

TEST(Nn, LstmRejectsWrongInputSize) {
  lsd::nn::ParamStore<double> store(1);
  lsd::nn::LstmCell<double> cell(store, "lstm", 4, 5);
  EXPECT_THROW(cell.step(lsd::nn::LstmState<double>::zeros(5), Tensor<double>::zeros({3})), std::invalid_argument);
}

TEST(Nn, LstmZeroWeightsGiveZeroHidden) {
  lsd::nn::ParamStore<double> store(1);
  lsd::nn::LstmCell<double> cell(store, "lstm", 3, 2);
  for (auto& [name, t] : store.entries()) std::fill(t.mutable_data().begin(), t.mutable_data().end(), 0.0);
  auto s = cell.step(lsd::nn::LstmState<double>::zeros(2), Tensor<double>::vector({1, 2, 3}));
  for (double h : s.hidden.data()) EXPECT_DOUBLE_EQ(h, 0.0);
}

TEST(Nn, DuplicateParameterNameThrows) {
  lsd::nn::ParamStore<double> store(1);
  store.add_constant("a", {2}, 0.0);
  EXPECT_THROW(store.add_constant("a", {2}, 0.0), std::invalid_argument);
}

TEST(Nn, InitializationIsSeedDeterministic) {
  lsd::nn::ParamStore<double> s1(5), s2(5), s3(6);
  lsd::nn::Dense<double> a(s1, "d", 4, 3), b(s2, "d", 4, 3), c(s3, "d", 4, 3);
  EXPECT_EQ(a.weight.data(), b.weight.data());
  EXPECT_NE(a.weight.data(), c.weight.data());
  for (double w : a.weight.data()) EXPECT_LE(std::abs(w), std::sqrt(6.0 / 4));
  for (double b : a.bias.data()) EXPECT_EQ(b, 0.0);
}

TEST(Adam, SingleStepMatchesClosedForm) {
  // First bias-corrected step moves each coordinate by lr * sign(g) (up to eps).
  std::vector<double> x{1.0, -2.0}, g{0.5, -3.0}, m(2, 0.0), v(2, 0.0);
  lsd::nn::adam_step<double>(x, g, m, v, 1, {});
  EXPECT_NEAR(x[0], 1.0 - 1e-3, 1e-9);
  EXPECT_NEAR(x[1], -2.0 + 1e-3, 1e-9);
  EXPECT_THROW(lsd::nn::adam_step<double>(x, g, m, v, 0, {}), std::invalid_argument);
}

TEST(Adam, QuadraticBowlConverges) {
  auto x = Tensor<double>::parameter({1.0, 1.0}, {2});
  lsd::nn::ParamStore<double> store;
  store.add("x", x);
  lsd::nn::Adam<double> opt({1e-2, 0.9, 0.999, 1e-8});
  auto f = [&] { return ad::sum(ad::square(x)); };
  const double start = f().item();
  std::vector<double> losses;
  for (int i = 0; i < 200; ++i) {
    store.zero_grad();
    auto l = f();
    losses.push_back(l.item());
    ad::backward(l);
    opt.step(store);
  }
  // Oracle: the same update in closed form on f(x) = |x|^2.
  std::vector<double> y{1.0, 1.0}, m(2, 0), v(2, 0);
  for (long t = 1; t <= 200; ++t) {
    std::vector<double> g{2 * y[0], 2 * y[1]};
    lsd::nn::adam_step<double>(y, g, m, v, t, {1e-2, 0.9, 0.999, 1e-8});
  }
  for (int i = 0; i < 2; ++i) EXPECT_NEAR(x[i], y[i], 1e-12);
  EXPECT_LT(f().item(), 1e-3 * start);
  for (std::size_t i = 1; i < losses.size(); ++i) EXPECT_LT(losses[i], losses[i - 1]);
}

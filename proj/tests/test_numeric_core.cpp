#include <doctest.h>

#include <cmath>

#include "attentron/adam.hpp"
#include "attentron/autograd.hpp"
#include "attentron/gradcheck.hpp"
#include "attentron/random.hpp"

using namespace attentron;

namespace {

Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double scale = 1.0) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
  return m;
}

// Test-local central difference over one input of a scalar tape function.
template <typename F>
Mat<double> numeric_grad(F f, Mat<double> x, double h = 1e-6) {
  Mat<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double keep = x.data()[i];
    x.data()[i] = keep + h;
    const double up = f(x);
    x.data()[i] = keep - h;
    const double down = f(x);
    x.data()[i] = keep;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double max_rel(const Mat<double>& a, const Mat<double>& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    const double d = std::abs(a.data()[i] - b.data()[i]);
    worst = std::max(worst, d / std::max({std::abs(a.data()[i]), std::abs(b.data()[i]), 1e-6}));
  }
  return worst;
}

}  // namespace

TEST_CASE("tensor matrix view folds trailing dimensions") {
  Tensor<float> t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.matrix().rows() == 2);
  CHECK(t.matrix().cols() == 12);
  t.matrix()(1, 5) = 3.f;
  CHECK(t[12 + 5] == 3.f);
  CHECK(t.reshaped({6, 4}).matrix()(4, 1) == 3.f);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
}

TEST_CASE("tensor all_finite detects nan") {
  Tensor<double> t({3}, 1.0);
  CHECK(t.all_finite());
  t[1] = std::nan("");
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("grad_check agrees with a closed form and flags a wrong gradient") {
  // f(x) = sum x^3, df = 3x^2
  LossFunction f = [](std::span<const Mat<double>> in, std::vector<Mat<double>>* g) {
    if (g) (*g)[0] = 3.0 * in[0].array().square().matrix();
    return in[0].array().cube().sum();
  };
  Rng rng(1);
  const auto ok = grad_check(f, {random_mat(rng, 3, 2)});
  CHECK(ok.max_relative_error < 1e-7);

  LossFunction wrong = [](std::span<const Mat<double>> in, std::vector<Mat<double>>* g) {
    if (g) (*g)[0] = 2.9 * in[0].array().square().matrix();
    return in[0].array().cube().sum();
  };
  CHECK(grad_check(wrong, {random_mat(rng, 3, 2)}).max_relative_error > 1e-2);
}

TEST_CASE("linear forward matches x W + b") {
  Rng rng(2);
  const Mat<double> x = random_mat(rng, 3, 4), w = random_mat(rng, 4, 2), b = random_mat(rng, 1, 2);
  Tape<double> t;
  const Var y = nn::linear(t, t.constant(x), t.constant(w), t.constant(b));
  const Mat<double> expect = (x * w).rowwise() + b.row(0);
  CHECK((t.value(y) - expect).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("primitive gradients match test-local differences") {
  Rng rng(3);
  const Mat<double> r = random_mat(rng, 3, 5);

  auto through = [&](auto op, Mat<double> x0) {
    auto f = [&](const Mat<double>& x) {
      Tape<double> t;
      return (t.value(op(t, t.variable(x))).array() * r.array()).sum();
    };
    Tape<double> t;
    const Var x = t.variable(x0);
    const Var y = op(t, x);
    const Var s = t.push(Mat<double>::Constant(1, 1, (t.value(y).array() * r.array()).sum()), {y},
                         [y, &r](Tape<double>& tp, const Mat<double>& g) {
                           tp.grad_acc(y) += g(0, 0) * r;
                         });
    t.backward(s);
    return max_rel(t.grad(x), numeric_grad(f, x0));
  };

  const Mat<double> x0 = random_mat(rng, 3, 5);
  CHECK(through([](Tape<double>& t, Var x) { return nn::tanh(t, x); }, x0) < 1e-6);
  CHECK(through([](Tape<double>& t, Var x) { return nn::sigmoid(t, x); }, x0) < 1e-6);
  CHECK(through([](Tape<double>& t, Var x) { return nn::scale(t, x, 2.5); }, x0) < 1e-6);
  const Mat<double> w = random_mat(rng, 5, 5);
  CHECK(through([&](Tape<double>& t, Var x) { return nn::matmul(t, x, t.constant(w)); }, x0) < 1e-6);
  CHECK(through(
            [](Tape<double>& t, Var x) {
              return nn::masked_softmax(t, x, Mask{1, 1, 0, 1, 1});
            },
            x0) < 1e-6);
}

TEST_CASE("masked softmax rows sum to one and padded positions get exactly zero") {
  Rng rng(4);
  const Mat<double> logits = random_mat(rng, 4, 6, 5.0);
  const Mask mask{1, 0, 1, 1, 0, 1};
  const Mat<double> p = masked_softmax_rows(logits, mask);
  for (Eigen::Index i = 0; i < p.rows(); ++i) {
    CHECK(std::abs(p.row(i).sum() - 1.0) < 1e-12);
    CHECK(p(i, 1) == 0.0);
    CHECK(p(i, 4) == 0.0);
  }
  CHECK_THROWS(masked_softmax_rows(logits, Mask(6, 0)));
}

TEST_CASE("mse and bce_with_logits values") {
  Tape<double> t;
  Mat<double> pred(1, 2);
  pred << 1.0, 3.0;
  Mat<double> target(1, 2);
  target << 0.0, 1.0;
  CHECK(t.value(nn::mse(t, t.constant(pred), target))(0, 0) == doctest::Approx(2.5));
  Mat<double> logit(1, 1);
  logit << 0.0;
  CHECK(t.value(nn::bce_with_logits(t, t.constant(logit), Mat<double>(Mat<double>::Ones(1, 1))))(0, 0) ==
        doctest::Approx(std::log(2.0)));
  // Large logits stay finite.
  logit << 800.0;
  CHECK(std::isfinite(t.value(nn::bce_with_logits(t, t.constant(logit), Mat<double>(Mat<double>::Zero(1, 1))))(0, 0)));
}

TEST_CASE("adam step matches a hand-computed first update") {
  ParameterSet<double> ps;
  ps.add("w", {2}, Mat<double>::Constant(1, 2, 1.0));
  AdamHyper h;
  h.weight_decay = 0.0;
  auto st = AdamState<double>::zeros_like(ps, h);
  Gradients<double> g{Mat<double>(1, 2)};
  g[0] << 0.5, -2.0;
  adam_step(ps, g, st, 0.1);
  // First bias-corrected step moves each coordinate by lr * sign(g) (up to eps).
  CHECK(ps[0].value(0, 0) == doctest::Approx(0.9).epsilon(1e-6));
  CHECK(ps[0].value(0, 1) == doctest::Approx(1.1).epsilon(1e-6));
  CHECK(st.step_count == 1);
}

TEST_CASE("adam weight decay is coupled into the gradient") {
  ParameterSet<double> ps;
  ps.add("w", {1}, Mat<double>::Constant(1, 1, 2.0));
  AdamHyper h;
  h.weight_decay = 0.5;
  auto st = AdamState<double>::zeros_like(ps, h);
  Gradients<double> g{Mat<double>::Zero(1, 1)};
  adam_step(ps, g, st, 0.01);
  // Effective gradient 0.5 * 2 = 1 > 0, so the weight shrinks by lr.
  CHECK(ps[0].value(0, 0) == doctest::Approx(1.99).epsilon(1e-6));
  CHECK(st.first_moment[0](0, 0) == doctest::Approx(0.1));
}

TEST_CASE("adam refuses non-finite gradients and leaves parameters untouched") {
  ParameterSet<double> ps;
  ps.add("w", {1}, Mat<double>::Constant(1, 1, 2.0));
  auto st = AdamState<double>::zeros_like(ps);
  Gradients<double> g{Mat<double>::Constant(1, 1, std::nan(""))};
  CHECK_THROWS_AS(adam_step(ps, g, st, 0.01), OptimizerError);
  CHECK(ps[0].value(0, 0) == 2.0);
  CHECK(st.step_count == 0);
}

TEST_CASE("rng streams are reproducible and derive_seed separates coordinates") {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) CHECK(a.next() == b.next());
  CHECK(derive_seed({1, 2, 3}) != derive_seed({1, 3, 2}));
  CHECK(derive_seed({1, 2}) == derive_seed({1, 2}));
  Rng c(5);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    CHECK(c.below(7) < 7);
  }
}

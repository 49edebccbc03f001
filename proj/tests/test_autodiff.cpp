#include "doctest.h"
#include "gradcheck.hpp"

#include "powerformer/error.hpp"
#include "powerformer/optim.hpp"

#include <random>

using namespace powerformer;
using gradcheck::Mat;
using gradcheck::Tape;
using gradcheck::Var;

namespace {

Mat random(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  return Mat::NullaryExpr(r, c, [&]() { return normal(rng); });
}

std::string error_text(const std::function<void()>& f, ErrorCode expected) {
  try {
    f();
  } catch (const Error& e) {
    CHECK(e.code() == expected);
    return e.what();
  }
  FAIL("expected an error");
  return {};
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("softmax of equal entries is uniform") {
  Tape t;
  const Var s = ad::softmax_rows(t.constant(Mat::Constant(3, 4, 2.5)));
  CHECK((s.value().array() - 0.25).abs().maxCoeff() < 1e-15);
}

TEST_CASE("softmax rows sum to one and ignore row shifts") {
  Tape t;
  const Mat x = random(20, 4, 1) * 5.0;
  Mat shifted = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r) shifted.row(r).array() += 3.0 * static_cast<double>(r) - 20.0;
  const Mat a = ad::softmax_rows(t.constant(x)).value();
  const Mat b = ad::softmax_rows(t.constant(shifted)).value();
  CHECK((a.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
  CHECK((a - b).cwiseAbs().maxCoeff() <= 1e-12);
  const Mat c = ad::softmax_cols(t.constant(x)).value();
  CHECK((c.colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("broadcast Hadamard with ones is the identity") {
  Tape t;
  const Mat x = random(3, 5, 2);
  CHECK(ad::broadcast_hadamard(t.constant(x), t.constant(Mat::Ones(5, 1))).value() == x);
}

TEST_CASE("matmul against hand-computed dot products") {
  Tape t;
  Mat a(2, 3), b(3, 1);
  a << 1, 2, 3, 4, 5, 6;
  b << 7, 8, 9;
  const Mat c = ad::matmul(t.constant(a), t.constant(b)).value();
  CHECK(c(0, 0) == 1 * 7 + 2 * 8 + 3 * 9);
  CHECK(c(1, 0) == 4 * 7 + 5 * 8 + 6 * 9);
}

TEST_CASE("gradient of a sum is all ones") {
  Tape t;
  const Var x = t.variable(random(3, 4, 3));
  t.backward(ad::sum(x));
  CHECK(x.grad() == Mat::Ones(3, 4));
}

TEST_CASE("mse of softmax(Wx) matches central differences") {
  const Mat target = random(4, 3, 9).cwiseAbs();
  const double err = gradcheck::input_error(
      [&](Tape&, const std::vector<Var>& v) { return ad::mse(ad::softmax_rows(ad::matmul(v[0], v[1])), target); },
      {random(4, 5, 4), random(5, 3, 5)});
  CHECK(err < 1e-4);
}

TEST_CASE("values off the loss path get zero gradient") {
  Tape t;
  const Var x = t.variable(random(2, 2, 1));
  const Var unused = t.variable(random(2, 2, 2));
  const Var side = ad::relu(unused);
  t.backward(ad::sum(ad::scale(x, 2.0)));
  CHECK(unused.grad() == Mat::Zero(2, 2));
  CHECK(side.grad() == Mat::Zero(2, 2));
  CHECK(x.grad() == Mat::Constant(2, 2, 2.0));
}

TEST_CASE("non-scalar loss is rejected") {
  Tape t;
  const Var x = t.variable(random(2, 2, 1));
  error_text([&] { t.backward(x); }, ErrorCode::NonScalarLoss);
}

TEST_CASE("shape errors name both shapes") {
  Tape t;
  const Var a = t.variable(random(2, 3, 1));
  const Var b = t.variable(random(2, 3, 2));
  const std::string msg = error_text([&] { ad::matmul(a, b); }, ErrorCode::ShapeMismatch);
  CHECK(msg.find("(2x3)") != std::string::npos);
  CHECK(std::count(msg.begin(), msg.end(), 'x') >= 2);
  error_text([&] { ad::add(a, t.variable(random(3, 2, 1))); }, ErrorCode::ShapeMismatch);
  error_text([&] { ad::broadcast_hadamard(a, t.variable(random(2, 1, 1))); }, ErrorCode::ShapeMismatch);
}

TEST_CASE("a value used twice accumulates both paths") {
  const Mat x0 = random(3, 3, 5);
  const Mat w = random(3, 3, 6);
  Tape t;
  const Var x = t.variable(x0);
  const Var y = ad::add(ad::matmul(t.constant(w), x), ad::hadamard(x, x));
  t.backward(ad::sum(y));

  // oracle: the same expression over two independent copies of x, gradients added
  Tape t2;
  const Var x1 = t2.variable(x0);
  const Var x2 = t2.variable(x0);
  const Var x3 = t2.variable(x0);
  t2.backward(ad::sum(ad::add(ad::matmul(t2.constant(w), x1), ad::hadamard(x2, x3))));
  CHECK((x.grad() - (x1.grad() + x2.grad() + x3.grad())).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every op passes a finite-difference check") {
  Eigen::SparseMatrix<double> adj(4, 4);
  adj.insert(0, 1) = 1;
  adj.insert(1, 0) = 1;
  adj.insert(1, 2) = 1;
  adj.insert(2, 1) = 1;
  adj.insert(2, 3) = 1;
  adj.insert(3, 2) = 1;
  const std::vector<int> picks = {2, 0, 1};

  struct Case {
    const char* name;
    std::function<Var(Tape&, const std::vector<Var>&)> op;
    std::vector<Mat> inputs;
  };
  const std::vector<Case> cases = {
      {"matmul", [](Tape&, const std::vector<Var>& v) { return ad::matmul(v[0], v[1]); }, {random(3, 4, 1), random(4, 2, 2)}},
      {"transpose", [](Tape&, const std::vector<Var>& v) { return ad::transpose(v[0]); }, {random(3, 4, 1)}},
      {"add", [](Tape&, const std::vector<Var>& v) { return ad::add(v[0], v[1]); }, {random(3, 4, 1), random(3, 4, 2)}},
      {"sub", [](Tape&, const std::vector<Var>& v) { return ad::sub(v[0], v[1]); }, {random(3, 4, 1), random(3, 4, 2)}},
      {"scale", [](Tape&, const std::vector<Var>& v) { return ad::scale(v[0], -1.7); }, {random(3, 4, 1)}},
      {"hadamard", [](Tape&, const std::vector<Var>& v) { return ad::hadamard(v[0], v[1]); }, {random(3, 4, 1), random(3, 4, 2)}},
      {"broadcast_hadamard", [](Tape&, const std::vector<Var>& v) { return ad::broadcast_hadamard(v[0], v[1]); },
       {random(3, 4, 1), random(4, 1, 2)}},
      {"add_bias", [](Tape&, const std::vector<Var>& v) { return ad::add_bias(v[0], v[1]); }, {random(3, 4, 1), random(3, 1, 2)}},
      {"add_row", [](Tape&, const std::vector<Var>& v) { return ad::add_row(v[0], v[1]); }, {random(3, 4, 1), random(1, 4, 2)}},
      {"relu", [](Tape&, const std::vector<Var>& v) { return ad::relu(v[0]); }, {random(5, 4, 11)}},
      {"sum", [](Tape&, const std::vector<Var>& v) { return ad::sum(v[0]); }, {random(3, 4, 1)}},
      {"mean_pool", [](Tape&, const std::vector<Var>& v) { return ad::mean_pool(v[0], 3); }, {random(2, 9, 1)}},
      {"mean_rows", [](Tape&, const std::vector<Var>& v) { return ad::mean_rows(v[0]); }, {random(3, 4, 1)}},
      {"softmax_rows", [](Tape&, const std::vector<Var>& v) { return ad::softmax_rows(v[0]); }, {random(5, 4, 1)}},
      {"softmax_cols", [](Tape&, const std::vector<Var>& v) { return ad::softmax_cols(v[0]); }, {random(5, 4, 1)}},
      {"mse", [](Tape&, const std::vector<Var>& v) { return ad::mse(v[0], Mat(random(2, 3, 9))); }, {random(2, 3, 1)}},
      {"concat_rows", [](Tape&, const std::vector<Var>& v) { return ad::concat_rows<double>(v); }, {random(2, 3, 1), random(4, 3, 2)}},
      {"concat_cols", [](Tape&, const std::vector<Var>& v) { return ad::concat_cols<double>(v); }, {random(3, 2, 1), random(3, 1, 2)}},
      {"column", [](Tape&, const std::vector<Var>& v) { return ad::column(v[0], 2); }, {random(3, 4, 1)}},
      {"row", [](Tape&, const std::vector<Var>& v) { return ad::row(v[0], 1); }, {random(3, 4, 1)}},
      {"reshape", [](Tape&, const std::vector<Var>& v) { return ad::reshape(v[0], 6, 2); }, {random(3, 4, 1)}},
      {"repeat_cols", [](Tape&, const std::vector<Var>& v) { return ad::repeat_cols(v[0], 3); }, {random(3, 2, 1)}},
      {"column_dot", [](Tape&, const std::vector<Var>& v) { return ad::column_dot(v[0], v[1]); }, {random(3, 4, 1), random(3, 4, 2)}},
      {"pick", [&](Tape&, const std::vector<Var>& v) { return ad::pick(v[0], std::span<const int>(picks)); }, {random(4, 3, 1)}},
      {"graph_aggregate", [&](Tape&, const std::vector<Var>& v) { return ad::graph_aggregate(v[0], adj, 0.3); }, {random(3, 8, 1)}},
  };
  for (const auto& c : cases) {
    CAPTURE(c.name);
    CHECK(gradcheck::input_error(c.op, c.inputs) < 1e-4);
  }
}

TEST_CASE("first Adam step moves against the gradient sign") {
  ad::ParameterStore<double> store;
  auto& p = store.add("p", 1, 1);
  p.value(0, 0) = 1.0;
  p.grad(0, 0) = 1.0;
  ad::Adam<double> adam(ad::AdamOptions{0.1});
  adam.step(store);
  CHECK(store[0].value(0, 0) == doctest::Approx(0.9));
  CHECK(store[0].grad(0, 0) == 0.0);
  CHECK(store.step == 1);
}

TEST_CASE("zero gradients leave parameters unchanged") {
  ad::ParameterStore<double> store;
  store.add("w", 2, 3).value = random(2, 3, 4);
  const Mat before = store[0].value;
  ad::Adam<double> adam;
  adam.step(store);
  CHECK(store[0].value == before);
}

TEST_CASE("Adam runs are bitwise reproducible") {
  auto run = [] {
    ad::ParameterStore<double> store;
    store.add("w", 3, 3).value = random(3, 3, 1);
    ad::Adam<double> adam;
    const Mat target = random(3, 3, 2);
    for (int i = 0; i < 20; ++i) {
      Tape t;
      t.backward(ad::mse(ad::relu(t.param(store[0])), target));
      adam.step(store);
    }
    return store[0].value;
  };
  CHECK(run() == run());
}

TEST_CASE("missing gradient is reported") {
  ad::ParameterStore<double> store;
  store.add("w", 2, 2);
  store[0].grad.resize(0, 0);
  ad::Adam<double> adam;
  error_text([&] { adam.step(store); }, ErrorCode::MissingGrad);
}

}  // TEST_SUITE

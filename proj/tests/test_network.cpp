#include "doctest.h"
#include "fixtures.hpp"
#include "gradcheck.hpp"

#include "powerformer/environment.hpp"
#include "powerformer/error.hpp"
#include "powerformer/grid.hpp"
#include "powerformer/network.hpp"
#include "powerformer/synthetic.hpp"

#include <algorithm>
#include <numeric>
#include <random>

using namespace powerformer;
using Mat = Eigen::MatrixXd;

namespace {

Mat random(Eigen::Index r, Eigen::Index c, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  return Mat::NullaryExpr(r, c, [&]() { return normal(rng); });
}

Eigen::SparseMatrix<double> path3() {
  Eigen::SparseMatrix<double> a(3, 3);
  a.insert(0, 1) = 1;
  a.insert(1, 0) = 1;
  a.insert(1, 2) = 1;
  a.insert(2, 1) = 1;
  a.makeCompressed();
  return a;
}

// P A P^T for new index perm[i] of old node i
Eigen::SparseMatrix<double> permuted(const Eigen::SparseMatrix<double>& a, const std::vector<int>& perm) {
  std::vector<Eigen::Triplet<double>> t;
  for (int k = 0; k < a.outerSize(); ++k) {
    for (Eigen::SparseMatrix<double>::InnerIterator it(a, k); it; ++it) t.emplace_back(perm[it.row()], perm[it.col()], it.value());
  }
  Eigen::SparseMatrix<double> out(a.rows(), a.cols());
  out.setFromTriplets(t.begin(), t.end());
  return out;
}

Mat permute_columns(const Mat& m, const std::vector<int>& perm) {
  Mat out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.cols(); ++i) out.col(perm[i]) = m.col(i);
  return out;
}

std::vector<int> random_permutation(int n, std::uint64_t seed) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

// Two-layer MLP whose layers are the identity map with zero bias.
Mlp2 identity_mlp(ParameterStore& store, int d) {
  Mlp2 m = Mlp2::create(store, "stub", d, d, d);
  store[m.first.weight].value = Mat::Identity(d, d);
  store[m.second.weight].value = Mat::Identity(d, d);
  return m;
}

PowerformerConfig small_config(NetworkKind kind, std::uint64_t seed) {
  PowerformerConfig c;
  c.kind = kind;
  c.hidden = 4;
  c.query_hidden = 6;
  c.concat_hidden = 6;
  c.value_hidden = 5;
  c.advantage_hidden = 5;
  c.seed = seed;
  return c;
}

GraphBatch batch_of(const Eigen::SparseMatrix<double>& adj, const Mat& features, const Mat& sections) {
  GraphBatch b;
  b.adjacency = &adj;
  b.nodes = adj.rows();
  b.batch = sections.cols();
  b.features = features;
  b.sections = sections;
  return b;
}

constexpr NetworkKind kAllKinds[] = {NetworkKind::powerformer,   NetworkKind::concat,        NetworkKind::soft_attention,
                                     NetworkKind::powerformer_e, NetworkKind::powerformer_s, NetworkKind::powerformer_m};

}  // namespace

TEST_SUITE("network") {

TEST_CASE("network kind names round trip") {
  for (NetworkKind k : kAllKinds) CHECK(parse_network_kind(to_string(k)) == k);
  CHECK_THROWS_AS(parse_network_kind("transformer"), Error);
}

TEST_CASE("zero feature row gives the bias map on every node") {
  ParameterStore store;
  std::vector<Affine> lifts;
  for (int t = 0; t < 4; ++t) lifts.push_back(Affine::create(store, "lift.f" + std::to_string(t), 1, 3));
  for (auto& p : store) p.value = random(p.value.rows(), p.value.cols(), p.value.size());
  Mat x = random(4, 5, 1);
  x.row(2).setZero();
  Tape tape(false);
  const auto streams = factorize_and_embed(tape, store, lifts, tape.constant(x));
  REQUIRE(streams.size() == 4);
  for (Eigen::Index v = 0; v < 5; ++v) CHECK(streams[2].value().col(v) == store[lifts[2].bias].value.col(0));

  Tape one(false);
  const auto single = factorize_and_embed(one, store, lifts, one.constant(random(4, 1, 2)));
  for (const auto& s : single) CHECK((s.rows() == 3 && s.cols() == 1));

  const auto perm = random_permutation(5, 3);
  Tape p(false);
  const auto moved = factorize_and_embed(p, store, lifts, p.constant(permute_columns(x, perm)));
  for (int t = 0; t < 4; ++t) CHECK(moved[t].value() == permute_columns(streams[t].value(), perm));

  CHECK_THROWS_AS(factorize_and_embed(p, store, lifts, p.constant(random(3, 5, 1))), Error);
}

TEST_CASE("GIN aggregation on a 3-node path matches hand sums") {
  ParameterStore store;
  const Mlp2 mlp = identity_mlp(store, 1);
  const auto adj = path3();
  Mat h(1, 3);
  h << 1.0, 2.0, 4.0;
  Tape tape(false);
  const Mat out = gin_layer(tape, store, mlp, tape.constant(h), adj, 0.0).value();
  CHECK(out(0, 0) == 1.0 + 2.0);
  CHECK(out(0, 1) == 2.0 + 1.0 + 4.0);
  CHECK(out(0, 2) == 4.0 + 2.0);

  Tape t2(false);
  const Mat out_eps = gin_layer(t2, store, mlp, t2.constant(h), adj, 0.5).value();
  CHECK(out_eps(0, 1) == doctest::Approx(1.5 * 2.0 + 1.0 + 4.0));
}

TEST_CASE("GIN on an isolated node is the MLP of its own state") {
  ParameterStore store;
  const Mlp2 mlp = Mlp2::create(store, "gin", 3, 3, 3);
  for (auto& p : store) p.value = random(p.value.rows(), p.value.cols(), 10 + p.value.size());
  Eigen::SparseMatrix<double> adj(2, 2);
  const Mat h = random(3, 2, 4);
  Tape tape(false);
  const Mat out = gin_layer(tape, store, mlp, tape.constant(h), adj, 0.0).value();
  Tape t2(false);
  const Mat direct = mlp(t2, store, t2.constant(h)).value();
  CHECK((out - direct).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("GIN is permutation equivariant") {
  ParameterStore store;
  const Mlp2 mlp = Mlp2::create(store, "gin", 3, 3, 3);
  for (auto& p : store) p.value = random(p.value.rows(), p.value.cols(), 20 + p.value.size());
  const auto adj = random_regular_graph(12, 3, 5).adjacency();
  const Mat h = random(3, 12, 6);
  const auto perm = random_permutation(12, 7);
  const auto adj_p = permuted(adj, perm);
  Tape a(false), b(false);
  const Mat out = gin_layer(a, store, mlp, a.constant(h), adj, 0.0).value();
  const Mat out_p = gin_layer(b, store, mlp, b.constant(permute_columns(h, perm)), adj_p, 0.0).value();
  CHECK((permute_columns(out, perm) - out_p).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("MFSA attention properties") {
  const int d = 4;
  const auto adj = random_regular_graph(6, 2, 1).adjacency();
  ParameterStore store;
  MfsaWeights w;
  for (int t = 0; t < 4; ++t) {
    w.key.push_back(Mlp2::create(store, "key" + std::to_string(t), d, d, d));
    w.value.push_back(Mlp2::create(store, "value" + std::to_string(t), d, d, d));
  }
  for (auto& p : store) p.value = random(p.value.rows(), p.value.cols(), 30 + store.size() + p.value.size());

  SUBCASE("identical keys give uniform attention and the mean of the values") {
    for (int t = 1; t < 4; ++t) {
      store[w.key[t].first.weight].value = store[w.key[0].first.weight].value;
      store[w.key[t].first.bias].value = store[w.key[0].first.bias].value;
      store[w.key[t].second.weight].value = store[w.key[0].second.weight].value;
      store[w.key[t].second.bias].value = store[w.key[0].second.bias].value;
    }
    const Mat h = random(d, 6, 2);
    Tape tape(false);
    std::vector<Var> streams(4, tape.constant(h));
    const MfsaOutput out = mfsa_layer(tape, store, w, streams, tape.constant(random(d, 1, 3)), adj, 0.0);
    CHECK((out.attention.value().array() - 0.25).abs().maxCoeff() < 1e-15);
    Mat sum = Mat::Zero(d, 6);
    for (int t = 0; t < 4; ++t) sum += gin_layer(tape, store, w.value[t], streams[t], adj, 0.0).value();
    CHECK((out.fused.value() - 0.25 * sum).cwiseAbs().maxCoeff() < 1e-12);
  }

  SUBCASE("rows sum to one for random inputs") {
    for (std::uint64_t s = 0; s < 20; ++s) {
      Tape tape(false);
      std::vector<Var> streams;
      for (int t = 0; t < 4; ++t) streams.push_back(tape.constant(random(d, 12, 100 * s + t)));
      const MfsaOutput out = mfsa_layer(tape, store, w, streams, tape.constant(random(d, 2, s)), adj, 0.0);
      CHECK(out.attention.rows() == 12);
      CHECK((out.attention.value().rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);
    }
  }

  SUBCASE("raising one factor's score raises its weight at every node") {
    // shifting the key output bias by c * q / |q|^2 shifts that factor's score by c / sqrt(d) at every node
    const Mat q = random(d, 1, 9);
    std::vector<Mat> hs;
    for (int t = 0; t < 4; ++t) hs.push_back(random(d, 6, 40 + t));
    auto attention = [&] {
      Tape tape(false);
      std::vector<Var> streams;
      for (const auto& h : hs) streams.push_back(tape.constant(h));
      return mfsa_layer(tape, store, w, streams, tape.constant(q), adj, 0.0).attention.value();
    };
    const Mat before = attention();
    store[w.key[1].second.bias].value += (10.0 * std::sqrt(double(d)) / q.squaredNorm()) * q;
    const Mat after = attention();
    for (Eigen::Index v = 0; v < 6; ++v) CHECK(after(v, 1) > before(v, 1));
  }
}

TEST_CASE("readout is a mean over nodes") {
  const Mat h = random(3, 5, 1);
  Tape tape(false);
  CHECK((readout(tape.constant(h), 5).value() - h.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(readout(tape.constant(h.col(0)), 1).value() == h.col(0));
  Mat doubled(3, 10);
  doubled << h, h;
  CHECK((readout(tape.constant(doubled), 10).value() - h.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
  const Mat p = permute_columns(h, random_permutation(5, 2));
  CHECK((readout(tape.constant(p), 5).value() - h.rowwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("dueling head: constant advantages cancel") {
  ParameterStore store;
  DuelingHead head;
  head.value_in = Affine::create(store, "v0", 4, 5);
  head.value_mid = Affine::create(store, "v1", 5, 5);
  head.value_out = Affine::create(store, "v2", 5, 1);
  head.advantage_in = Affine::create(store, "a0", 4, 5);
  head.advantage_out = Affine::create(store, "a1", 5, 6);
  for (auto& p : store) p.value = random(p.value.rows(), p.value.cols(), 50 + p.value.size());
  const Mat e = random(4, 3, 8);

  auto value_only = [&] {
    Tape t(false);
    Var v = ad::relu(head.value_in(t, store, t.constant(e)));
    v = ad::relu(head.value_mid(t, store, v));
    return head.value_out(t, store, v).value();
  };
  // advantage weights zeroed and bias constant c: A = c for every action
  store[head.advantage_out.weight].value.setZero();
  store[head.advantage_out.bias].value.setConstant(3.7);
  Tape t2(false);
  const Mat flat = dueling_q(t2, store, head, t2.constant(e)).value();
  const Mat v = value_only();
  for (Eigen::Index a = 0; a < 6; ++a) CHECK((flat.row(a) - v).cwiseAbs().maxCoeff() < 1e-12);

}

TEST_CASE("adding a constant to every advantage keeps Q and its argmax") {
  ParameterStore store;
  DuelingHead head;
  head.value_in = Affine::create(store, "v0", 4, 5);
  head.value_mid = Affine::create(store, "v1", 5, 5);
  head.value_out = Affine::create(store, "v2", 5, 1);
  head.advantage_in = Affine::create(store, "a0", 4, 5);
  head.advantage_out = Affine::create(store, "a1", 5, 6);
  for (auto& p : store) p.value = random(p.value.rows(), p.value.cols(), 70 + p.value.size());
  const Mat e = random(4, 3, 8);
  Tape a(false);
  const Mat q = dueling_q(a, store, head, a.constant(e)).value();
  store[head.advantage_out.bias].value.array() += 5.0;
  Tape b(false);
  const Mat shifted = dueling_q(b, store, head, b.constant(e)).value();
  for (Eigen::Index c = 0; c < 3; ++c) {
    Eigen::Index i = 0, j = 0;
    q.col(c).maxCoeff(&i);
    shifted.col(c).maxCoeff(&j);
    CHECK(i == j);
  }
  CHECK((q - shifted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("118-bus network has one output per generator direction") {
  const GridCase grid = parse_matpower_case(read_text_file(fixtures::data_path("case118.m")));
  std::size_t in_service = 0;
  for (const auto& g : grid.generators) in_service += g.in_service ? 1 : 0;
  CHECK(in_service == 54);
  const PowerGraph graph = build_graph(grid);
  const auto adj = graph.adjacency();
  PowerformerConfig c;
  c.seed = 1;
  const int width = section_width(grid, c.section_encoding);
  QNetwork net(c, graph.n, width, static_cast<int>(2 * grid.generators.size()));
  const Mat q = net.predict(batch_of(adj, random(4, graph.n, 1), random(width, 1, 2)));
  CHECK(q.rows() == 108);
  CHECK(q.cols() == 1);
}

TEST_CASE("shape mismatches are rejected") {
  const auto adj = random_regular_graph(5, 2, 1).adjacency();
  QNetwork net(small_config(NetworkKind::powerformer, 1), 5, 8, 4);
  CHECK_THROWS_AS(net.predict(batch_of(adj, random(4, 6, 1), random(8, 1, 2))), Error);
  CHECK_THROWS_AS(net.predict(batch_of(adj, random(4, 5, 1), random(7, 1, 2))), Error);
  CHECK_THROWS_AS(net.predict(batch_of(adj, random(3, 5, 1), random(8, 1, 2))), Error);
}

TEST_CASE("query of an all-zero section is deterministic") {
  const auto adj = random_regular_graph(5, 2, 1).adjacency();
  QNetwork net(small_config(NetworkKind::powerformer, 4), 5, 8, 4);
  const Mat x = random(4, 5, 1);
  const Mat a = net.predict(batch_of(adj, x, Mat::Zero(8, 1)));
  const Mat b = net.predict(batch_of(adj, x, Mat::Zero(8, 1)));
  CHECK(a == b);
}

TEST_CASE("batched prediction equals per-sample prediction") {
  const auto adj = random_regular_graph(6, 3, 2).adjacency();
  for (NetworkKind kind : kAllKinds) {
    CAPTURE(to_string(kind));
    QNetwork net(small_config(kind, 3), 6, 8, 4);
    const Mat x = random(4, 18, 5);
    const Mat z = random(8, 3, 6);
    const Mat all = net.predict(batch_of(adj, x, z));
    for (Eigen::Index b = 0; b < 3; ++b) {
      const Mat one = net.predict(batch_of(adj, x.middleCols(b * 6, 6), z.col(b)));
      CHECK((all.col(b) - one).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("section encoding changes the output for almost every init") {
  const SyntheticCase c = corridor9(1);
  const PowerGraph graph = build_graph(c.grid);
  const auto adj = graph.adjacency();
  const int width = section_width(c.grid, SectionEncodingMode::full);
  const Mat x = random(4, graph.n, 1);
  Mat z1 = Mat::Zero(width, 1), z2 = Mat::Zero(width, 1);
  z1.topRows(4) = random(4, 1, 2);
  z2.bottomRows(4) = random(4, 1, 3);
  int differ = 0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    PowerformerConfig cfg;
    cfg.seed = seed;
    QNetwork net(cfg, graph.n, width, 12);
    const Mat a = net.predict(batch_of(adj, x, z1));
    const Mat b = net.predict(batch_of(adj, x, z2));
    if ((a - b).cwiseAbs().maxCoeff() > 1e-12) ++differ;
  }
  CHECK(differ >= 99);
}

TEST_CASE("embedding is invariant to node relabelling") {
  const int n = 16;
  const auto adj = random_regular_graph(n, 3, 9).adjacency();
  const auto perm = random_permutation(n, 10);
  const auto adj_p = permuted(adj, perm);
  const Mat x = random(4, n, 11);
  const Mat z = random(8, 1, 12);
  for (NetworkKind kind : kAllKinds) {
    if (kind == NetworkKind::concat) continue;  // flattens node order by construction
    CAPTURE(to_string(kind));
    PowerformerConfig cfg;
    cfg.kind = kind;
    cfg.seed = 13;
    QNetwork net(cfg, n, 8, 4);
    const Mat e = net.predict_embedding(batch_of(adj, x, z));
    const Mat e_p = net.predict_embedding(batch_of(adj_p, permute_columns(x, perm), z));
    CHECK((e - e_p).cwiseAbs().maxCoeff() <= 1e-10);
  }
}

TEST_CASE("every network kind passes a parameter finite-difference check") {
  const auto adj = random_regular_graph(5, 2, 3).adjacency();
  const Mat x = random(4, 10, 1);
  const Mat z = random(8, 2, 2);
  const Mat target = random(4, 2, 3);
  for (NetworkKind kind : kAllKinds) {
    CAPTURE(to_string(kind));
    QNetwork net(small_config(kind, 17), 5, 8, 4);
    for (auto& p : net.params()) {
      if (p.name.ends_with(".b")) p.value = 0.1 * random(p.value.rows(), 1, p.value.size());
    }
    const GraphBatch batch = batch_of(adj, x, z);
    const double err = gradcheck::parameter_error(net.params(), [&](gradcheck::Tape& tape) {
      return ad::mse(net.q_values(tape, batch), target);
    });
    CHECK(err < 1e-4);
  }
}

TEST_CASE("baseline shapes and mixing weights") {
  const SyntheticCase c = corridor9(2);
  const PowerGraph graph = build_graph(c.grid);
  const auto adj = graph.adjacency();
  const int width = section_width(c.grid, SectionEncodingMode::full);
  PowerformerConfig cfg;
  cfg.kind = NetworkKind::concat;
  QNetwork concat(cfg, graph.n, width, 12);
  const Mat x = random(4, graph.n * 3, 1);
  const Mat z = random(width, 3, 2);
  const Mat e = concat.predict_embedding(batch_of(adj, x, z));
  CHECK(e.rows() == 64);
  CHECK(concat.predict_embedding(batch_of(adj, x, Mat::Zero(width, 3))) ==
        concat.predict_embedding(batch_of(adj, x, Mat::Zero(width, 3))));

  cfg.kind = NetworkKind::soft_attention;
  QNetwork soft(cfg, graph.n, width, 12);
  soft.predict(batch_of(adj, x, z));
  REQUIRE(soft.last_mixing().rows() == 4);
  REQUIRE(soft.last_mixing().cols() == 3);
  CHECK((soft.last_mixing().colwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-12);

  cfg.kind = NetworkKind::powerformer;
  QNetwork full(cfg, graph.n, width, 12);
  full.predict(batch_of(adj, x, z));
  REQUIRE(full.last_attention().size() == 2);
  CHECK(full.last_attention()[0].rows() == graph.n * 3);
  CHECK(full.last_attention()[0].cols() == 4);
}

TEST_CASE("initialisation is seeded and biases start at zero") {
  QNetwork a(small_config(NetworkKind::powerformer, 5), 5, 8, 4);
  QNetwork b(small_config(NetworkKind::powerformer, 5), 5, 8, 4);
  QNetwork c(small_config(NetworkKind::powerformer, 6), 5, 8, 4);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].value == b.params()[i].value);
    if (a.params()[i].value != c.params()[i].value) any_diff = true;
    const auto& p = a.params()[i];
    if (p.name.ends_with(".b")) CHECK(p.value.isZero());
    if (p.name.ends_with(".w")) {
      const double limit = std::sqrt(6.0 / double(p.value.rows() + p.value.cols()));
      CHECK(p.value.cwiseAbs().maxCoeff() <= limit);
    }
  }
  CHECK(any_diff);
}

}  // TEST_SUITE

#include "powerformer/network.hpp"

#include "powerformer/error.hpp"

#include <array>
#include <cmath>
#include <random>

namespace powerformer {

std::string_view to_string(NetworkKind kind) {
  switch (kind) {
    case NetworkKind::powerformer: return "powerformer";
    case NetworkKind::concat: return "concat";
    case NetworkKind::soft_attention: return "soft_attention";
    case NetworkKind::powerformer_e: return "powerformer_E";
    case NetworkKind::powerformer_s: return "powerformer_S";
    case NetworkKind::powerformer_m: return "powerformer_M";
  }
  return "unknown";
}

NetworkKind parse_network_kind(std::string_view name) {
  for (auto kind : {NetworkKind::powerformer, NetworkKind::concat, NetworkKind::soft_attention,
                    NetworkKind::powerformer_e, NetworkKind::powerformer_s, NetworkKind::powerformer_m}) {
    if (name == to_string(kind)) return kind;
  }
  throw Error(ErrorCode::MalformedConfig, "unknown network kind '" + std::string(name) + "'");
}

Affine Affine::create(ParameterStore& store, const std::string& name, int in, int out) {
  Affine a;
  store.add(name + ".w", out, in);
  a.weight = store.size() - 1;
  store.add(name + ".b", out, 1);
  a.bias = store.size() - 1;
  return a;
}

Var Affine::operator()(Tape& tape, ParameterStore& store, Var x) const {
  return ad::add_bias(ad::matmul(tape.param(store[weight]), x), tape.param(store[bias]));
}

Mlp2 Mlp2::create(ParameterStore& store, const std::string& name, int in, int hidden, int out) {
  return {Affine::create(store, name + ".fc0", in, hidden), Affine::create(store, name + ".fc1", hidden, out)};
}

Var Mlp2::operator()(Tape& tape, ParameterStore& store, Var x) const {
  return second(tape, store, ad::relu(first(tape, store, x)));
}

Var gin_layer(Tape& tape, ParameterStore& store, const Mlp2& mlp, Var h, const Eigen::SparseMatrix<double>& adjacency,
              double eps) {
  return mlp(tape, store, ad::graph_aggregate(h, adjacency, eps));
}

std::vector<Var> factorize_and_embed(Tape& tape, ParameterStore& store, std::span<const Affine> lifts, Var features) {
  if (features.rows() != static_cast<Eigen::Index>(lifts.size())) {
    throw Error(ErrorCode::ShapeMismatch, "factorize: " + std::to_string(lifts.size()) + " factors for features " +
                                              ad::shape_str(features.rows(), features.cols()));
  }
  std::vector<Var> streams;
  streams.reserve(lifts.size());
  for (std::size_t t = 0; t < lifts.size(); ++t) {
    streams.push_back(lifts[t](tape, store, ad::row(features, static_cast<Eigen::Index>(t))));
  }
  return streams;
}

MfsaOutput mfsa_layer(Tape& tape, ParameterStore& store, const MfsaWeights& weights, std::span<const Var> streams,
                      Var query, const Eigen::SparseMatrix<double>& adjacency, double eps) {
  const std::size_t k = streams.size();
  if (weights.key.size() != k || weights.value.size() != k || k == 0) {
    throw Error(ErrorCode::ShapeMismatch, "mfsa: " + std::to_string(k) + " streams for " +
                                              std::to_string(weights.key.size()) + " key stacks");
  }
  const Eigen::Index d = streams[0].rows();
  const Eigen::Index n = adjacency.rows();
  if (query.rows() != d || streams[0].cols() != n * query.cols()) {
    throw Error(ErrorCode::ShapeMismatch, "mfsa: query " + ad::shape_str(query.rows(), query.cols()) +
                                              " for streams " + ad::shape_str(d, streams[0].cols()));
  }
  const Var q_nodes = ad::repeat_cols(query, n);
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<Var> values;
  std::vector<Var> scores;
  for (std::size_t t = 0; t < k; ++t) {
    const Var key = gin_layer(tape, store, weights.key[t], streams[t], adjacency, eps);
    values.push_back(gin_layer(tape, store, weights.value[t], streams[t], adjacency, eps));
    scores.push_back(ad::scale(ad::column_dot(key, q_nodes), inv_sqrt_d));
  }
  MfsaOutput out;
  out.attention = ad::softmax_rows(ad::concat_cols<double>(scores));
  for (std::size_t t = 0; t < k; ++t) {
    out.streams.push_back(
        ad::broadcast_hadamard(values[t], ad::column(out.attention, static_cast<Eigen::Index>(t))));
  }
  out.fused = out.streams[0];
  for (std::size_t t = 1; t < k; ++t) out.fused = ad::add(out.fused, out.streams[t]);
  return out;
}

Var readout(Var fused, Eigen::Index nodes) { return ad::mean_pool(fused, nodes); }

Var dueling_q(Tape& tape, ParameterStore& store, const DuelingHead& head, Var embedding) {
  Var v = ad::relu(head.value_in(tape, store, embedding));
  v = ad::relu(head.value_mid(tape, store, v));
  v = head.value_out(tape, store, v);  // 1 x B
  const Var a = head.advantage_out(tape, store, ad::relu(head.advantage_in(tape, store, embedding)));
  return ad::add_row(a, ad::sub(v, ad::mean_rows(a)));
}

QNetwork::QNetwork(const PowerformerConfig& config, int nodes, int section_width, int actions)
    : config_(config), nodes_(nodes), section_width_(section_width), actions_(actions) {
  if (config.hidden <= 0 || config.layers < 1 || config.factors < 1 || nodes < 1 || actions < 1) {
    throw Error(ErrorCode::ShapeMismatch, "invalid network dimensions");
  }
  const int d = config.hidden;
  const int k = config.factors;
  const int feature_rows = 4;

  switch (config.kind) {
    case NetworkKind::powerformer:
    case NetworkKind::powerformer_s:
    case NetworkKind::soft_attention:
      if (k != feature_rows) throw Error(ErrorCode::ShapeMismatch, "factorization needs k = 4");
      for (int t = 0; t < k; ++t) lifts_.push_back(Affine::create(store_, "lift.f" + std::to_string(t), 1, d));
      break;
    case NetworkKind::powerformer_e:
    case NetworkKind::powerformer_m:
      lifts_.push_back(Affine::create(store_, "lift", feature_rows, d));
      break;
    case NetworkKind::concat:
      break;
  }

  switch (config.kind) {
    case NetworkKind::powerformer:
    case NetworkKind::powerformer_m:
      for (int l = 0; l < config.layers; ++l) {
        const std::string prefix = "layer" + std::to_string(l);
        MfsaWeights w;
        for (int t = 0; t < k; ++t) {
          w.key.push_back(Mlp2::create(store_, prefix + ".key.f" + std::to_string(t), d, d, d));
          w.value.push_back(Mlp2::create(store_, prefix + ".value.f" + std::to_string(t), d, d, d));
        }
        mfsa_.push_back(std::move(w));
        if (l == 0) {
          query_.push_back(Mlp2::create(store_, "query0", section_width, config.query_hidden, d));
        } else {
          query_.push_back(Mlp2::create(store_, "query" + std::to_string(l), d, d, d));
        }
      }
      break;
    case NetworkKind::powerformer_s:
    case NetworkKind::soft_attention:
      for (int l = 0; l < config.layers; ++l) {
        std::vector<Mlp2> layer;
        for (int t = 0; t < k; ++t) {
          layer.push_back(
              Mlp2::create(store_, "layer" + std::to_string(l) + ".value.f" + std::to_string(t), d, d, d));
        }
        ginstack_.push_back(std::move(layer));
      }
      if (config.kind == NetworkKind::soft_attention) mixing_ = Affine::create(store_, "mixing", section_width, k);
      break;
    case NetworkKind::powerformer_e:
      for (int l = 0; l < config.layers; ++l) {
        ginstack_.push_back({Mlp2::create(store_, "layer" + std::to_string(l) + ".gin", d, d, d)});
      }
      break;
    case NetworkKind::concat:
      concat_mlp_ = Mlp2::create(store_, "concat", feature_rows * nodes + section_width, config.concat_hidden, d);
      break;
  }

  head_.value_in = Affine::create(store_, "head.value.fc0", d, config.value_hidden);
  head_.value_mid = Affine::create(store_, "head.value.fc1", config.value_hidden, config.value_hidden);
  head_.value_out = Affine::create(store_, "head.value.fc2", config.value_hidden, 1);
  head_.advantage_in = Affine::create(store_, "head.advantage.fc0", d, config.advantage_hidden);
  head_.advantage_out = Affine::create(store_, "head.advantage.fc1", config.advantage_hidden, actions);

  // Glorot-uniform weights, zero biases, drawn in creation order
  std::mt19937_64 rng(config.seed);
  for (auto& p : store_) {
    if (p.name.size() < 2 || p.name.compare(p.name.size() - 2, 2, ".w") != 0) continue;
    const double limit = std::sqrt(6.0 / static_cast<double>(p.value.rows() + p.value.cols()));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index j = 0; j < p.value.cols(); ++j) {
      for (Eigen::Index i = 0; i < p.value.rows(); ++i) p.value(i, j) = dist(rng);
    }
  }
}

void QNetwork::check(const GraphBatch& batch) const {
  if (!batch.adjacency || batch.adjacency->rows() != nodes_ || batch.nodes != nodes_ || batch.batch < 1 ||
      batch.features.rows() != 4 || batch.features.cols() != nodes_ * batch.batch ||
      batch.sections.rows() != section_width_ || batch.sections.cols() != batch.batch) {
    throw Error(ErrorCode::ShapeMismatch,
                "batch features " + ad::shape_str(batch.features.rows(), batch.features.cols()) + ", sections " +
                    ad::shape_str(batch.sections.rows(), batch.sections.cols()) + " for a network over " +
                    std::to_string(nodes_) + " nodes with section width " + std::to_string(section_width_));
  }
}

Var QNetwork::embed(Tape& tape, const GraphBatch& batch) {
  check(batch);
  const auto& adj = *batch.adjacency;
  const double eps = config_.gin_eps;
  const Var x = tape.constant(batch.features);
  const Var z = tape.constant(batch.sections);
  last_attention_.clear();

  switch (config_.kind) {
    case NetworkKind::powerformer:
    case NetworkKind::powerformer_m: {
      std::vector<Var> streams;
      if (config_.kind == NetworkKind::powerformer) {
        streams = factorize_and_embed(tape, store_, lifts_, x);
      } else {
        // no disentangling: every stream starts from the same coupled embedding of all four features
        const Var shared = lifts_[0](tape, store_, x);
        streams.assign(static_cast<std::size_t>(config_.factors), shared);
      }
      Var query_in = z;
      Var fused = streams[0];
      for (std::size_t l = 0; l < mfsa_.size(); ++l) {
        const Var query = query_[l](tape, store_, query_in);
        MfsaOutput out = mfsa_layer(tape, store_, mfsa_[l], streams, query, adj, eps);
        last_attention_.push_back(out.attention.value());
        streams = std::move(out.streams);
        fused = out.fused;
        query_in = query;
      }
      return readout(fused, nodes_);
    }
    case NetworkKind::powerformer_s: {
      std::vector<Var> streams = factorize_and_embed(tape, store_, lifts_, x);
      for (const auto& layer : ginstack_) {
        for (std::size_t t = 0; t < streams.size(); ++t) streams[t] = gin_layer(tape, store_, layer[t], streams[t], adj, eps);
      }
      Var fused = streams[0];
      for (std::size_t t = 1; t < streams.size(); ++t) fused = ad::add(fused, streams[t]);
      return readout(fused, nodes_);
    }
    case NetworkKind::powerformer_e: {
      Var h = lifts_[0](tape, store_, x);
      for (const auto& layer : ginstack_) h = gin_layer(tape, store_, layer[0], h, adj, eps);
      return readout(h, nodes_);
    }
    case NetworkKind::concat: {
      const Var flat = ad::reshape(x, 4 * batch.nodes, batch.batch);
      const std::array<Var, 2> parts{flat, z};
      return concat_mlp_(tape, store_, ad::concat_rows<double>(parts));
    }
    case NetworkKind::soft_attention: {
      std::vector<Var> streams = factorize_and_embed(tape, store_, lifts_, x);
      for (const auto& layer : ginstack_) {
        for (std::size_t t = 0; t < streams.size(); ++t) streams[t] = gin_layer(tape, store_, layer[t], streams[t], adj, eps);
      }
      const Var weights = ad::softmax_cols(mixing_(tape, store_, z));  // k x B
      last_mixing_ = weights.value();
      Var out = ad::broadcast_hadamard(readout(streams[0], nodes_), ad::transpose(ad::row(weights, 0)));
      for (std::size_t t = 1; t < streams.size(); ++t) {
        out = ad::add(out, ad::broadcast_hadamard(readout(streams[t], nodes_),
                                                  ad::transpose(ad::row(weights, static_cast<Eigen::Index>(t)))));
      }
      return out;
    }
  }
  throw Error(ErrorCode::MalformedConfig, "unhandled network kind");
}

Var QNetwork::q_values(Tape& tape, const GraphBatch& batch) { return dueling_q(tape, store_, head_, embed(tape, batch)); }

Eigen::MatrixXd QNetwork::predict(const GraphBatch& batch) {
  Tape tape(false);
  return q_values(tape, batch).value();
}

Eigen::MatrixXd QNetwork::predict_embedding(const GraphBatch& batch) {
  Tape tape(false);
  return embed(tape, batch).value();
}

}  // namespace powerformer

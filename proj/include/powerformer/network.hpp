#pragma once

#include "powerformer/autodiff.hpp"

#include <Eigen/SparseCore>

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace powerformer {

using Tape = ad::Tape<double>;
using Var = ad::Var<double>;
using ParameterStore = ad::ParameterStore<double>;

enum class NetworkKind { powerformer, concat, soft_attention, powerformer_e, powerformer_s, powerformer_m };

std::string_view to_string(NetworkKind kind);
NetworkKind parse_network_kind(std::string_view name);

// full: (P, Q, Vm, Va) per branch, 4m entries. active_only: P per branch, m entries.
enum class SectionEncodingMode { full, active_only };

struct PowerformerConfig {
  NetworkKind kind = NetworkKind::powerformer;
  int layers = 2;
  int hidden = 64;  // d
  int factors = 4;  // k
  int query_hidden = 128;
  int concat_hidden = 128;
  int value_hidden = 128;
  int advantage_hidden = 128;
  double gin_eps = 0.0;
  SectionEncodingMode section_encoding = SectionEncodingMode::full;
  std::uint64_t seed = 0;
};

// B observations over one topology, stacked column-wise.
struct GraphBatch {
  const Eigen::SparseMatrix<double>* adjacency = nullptr;  // n x n, must outlive any tape built on it
  Eigen::Index nodes = 0;
  Eigen::Index batch = 0;
  Eigen::MatrixXd features;  // 4 x (nodes * batch); sample b occupies columns [b*n, (b+1)*n)
  Eigen::MatrixXd sections;  // section-encoding length x batch
};

// y = W x + b. Holds positions in a ParameterStore so that copies of a network stay valid.
struct Affine {
  std::size_t weight = 0;
  std::size_t bias = 0;

  static Affine create(ParameterStore& store, const std::string& name, int in, int out);
  Var operator()(Tape& tape, ParameterStore& store, Var x) const;
};

// affine -> ReLU -> affine
struct Mlp2 {
  Affine first;
  Affine second;

  static Mlp2 create(ParameterStore& store, const std::string& name, int in, int hidden, int out);
  Var operator()(Tape& tape, ParameterStore& store, Var x) const;
};

// Per node v: MLP((1 + eps) h_v + sum_{u in N(v)} h_u). h is d x (n*B).
Var gin_layer(Tape& tape, ParameterStore& store, const Mlp2& mlp, Var h,
              const Eigen::SparseMatrix<double>& adjacency, double eps);

// Factor t of the (4 x N) input lifted to d x N by its own 1 -> d affine map.
std::vector<Var> factorize_and_embed(Tape& tape, ParameterStore& store, std::span<const Affine> lifts, Var features);

struct MfsaWeights {
  std::vector<Mlp2> key;    // one per factor
  std::vector<Mlp2> value;  // one per factor
};

struct MfsaOutput {
  Var fused;                 // d x N
  std::vector<Var> streams;  // V_t scaled by its attention column
  Var attention;             // N x k, rows sum to one
};

// K_t, V_t from GIN; a_t = K_t^T Q / sqrt(d); softmax across factors per node; fused = sum_t V_t (.) A_t.
// query is d x B and is shared by the n nodes of its sample.
MfsaOutput mfsa_layer(Tape& tape, ParameterStore& store, const MfsaWeights& weights, std::span<const Var> streams,
                      Var query, const Eigen::SparseMatrix<double>& adjacency, double eps);

// Column-wise mean over the n nodes of each sample: d x (n*B) -> d x B.
Var readout(Var fused, Eigen::Index nodes);

struct DuelingHead {
  Affine value_in, value_mid, value_out;
  Affine advantage_in, advantage_out;
};

// Q = V + A - mean(A); embedding d x B -> actions x B.
Var dueling_q(Tape& tape, ParameterStore& store, const DuelingHead& head, Var embedding);

// Powerformer, its ablations and the two baselines, with a shared dueling head.
class QNetwork {
 public:
  QNetwork(const PowerformerConfig& config, int nodes, int section_width, int actions);

  const PowerformerConfig& config() const { return config_; }
  int nodes() const { return nodes_; }
  int section_width() const { return section_width_; }
  int actions() const { return actions_; }

  ParameterStore& params() { return store_; }
  const ParameterStore& params() const { return store_; }

  Var embed(Tape& tape, const GraphBatch& batch);
  Var q_values(Tape& tape, const GraphBatch& batch);

  // Forward pass without gradient bookkeeping. Returns actions x B.
  Eigen::MatrixXd predict(const GraphBatch& batch);
  Eigen::MatrixXd predict_embedding(const GraphBatch& batch);

  // Factor attention (N x k) of every MFSA layer from the most recent embed(); empty for kinds without MFSA.
  const std::vector<Eigen::MatrixXd>& last_attention() const { return last_attention_; }
  // Soft-attention mixing weights (k x B) from the most recent embed() of the soft_attention baseline.
  const Eigen::MatrixXd& last_mixing() const { return last_mixing_; }

 private:
  void check(const GraphBatch& batch) const;

  PowerformerConfig config_;
  int nodes_;
  int section_width_;
  int actions_;
  ParameterStore store_;

  std::vector<Affine> lifts_;              // per factor (1 -> d) or a single 4 -> d
  std::vector<MfsaWeights> mfsa_;          // per layer
  std::vector<Mlp2> query_;                // per layer
  std::vector<std::vector<Mlp2>> ginstack_;  // per layer, per stream (E / S / soft attention)
  Mlp2 concat_mlp_;
  Affine mixing_;
  DuelingHead head_;

  std::vector<Eigen::MatrixXd> last_attention_;
  Eigen::MatrixXd last_mixing_;
};

}  // namespace powerformer

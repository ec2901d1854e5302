#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "forested/table.hpp"

namespace forested {

/// Tuples and attributes as the two node sets; every cell (i,j) is an edge carrying phi(D[i,j]).
struct BipartiteGraph {
  std::size_t n_tuples = 0;
  std::size_t n_attributes = 0;
  /// (N*M) x (d_e + 1) edge features, row i*M + j. The last column is the missing-value flag.
  Eigen::MatrixXd edge_features;
  /// Distinct rows of edge_features and, per edge, the index of its row there.
  Eigen::MatrixXd unique_features;
  std::vector<Eigen::Index> edge_slot;

  std::size_t edge_dim() const { return static_cast<std::size_t>(edge_features.cols()); }
  std::size_t n_edges() const { return static_cast<std::size_t>(edge_features.rows()); }
};

inline constexpr std::size_t kDefaultEdgeBuckets = 32;

/// Character 2- and 3-gram feature hashing of the boundary-marked cell text into `d_e` buckets,
/// L2-normalised, plus one missing flag. An empty cell is all zeros with the flag set.
Eigen::RowVectorXd cell_features(const std::string& value, std::size_t d_e, std::uint64_t seed);

BipartiteGraph build_bipartite_graph(const Table& t, std::size_t d_e = kDefaultEdgeBuckets, std::uint64_t seed = 0);

/// Fills unique_features and edge_slot from edge_features. Call after editing edge_features by hand.
void index_edges(BipartiteGraph& g);

/// Trainable weights of one GNN node. Rows of each weight act on column vectors:
///   msg_p  = relu(P_p [h_neighbor ; h_edge] + bp_p)
///   h_p    = relu(W_p [h_self ; mean(msg_p)] + bw_p)
///   q      = sigmoid(A2 relu(A1 [h_tuple ; h_attr] + a1) + a2)
struct GnnParams {
  Eigen::MatrixXd P1, W1, P2, W2, A1, A2;
  Eigen::VectorXd bp1, bw1, bp2, bw2, a1, a2;
  std::size_t init_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t edge_dim = 0;
  std::uint64_t seed = 0;

  static GnnParams init(std::size_t init_dim, std::size_t hidden_dim, std::size_t edge_dim, std::uint64_t seed);

  std::vector<std::string> tensor_names() const;
  std::vector<Eigen::MatrixXd*> matrices();
  std::vector<Eigen::VectorXd*> vectors();
  std::vector<const Eigen::MatrixXd*> matrices() const;
  std::vector<const Eigen::VectorXd*> vectors() const;

  bool all_finite() const;
  bool operator==(const GnnParams& other) const;
};

struct ForwardResult {
  Eigen::MatrixXd tuple_embeddings;      // N x hidden
  Eigen::MatrixXd attribute_embeddings;  // M x hidden
  Eigen::MatrixXd probabilities;         // N x M
  Eigen::MatrixXd logits;                // N x M
};

ForwardResult forward(const BipartiteGraph& g, const GnnParams& p);

struct CellLabel {
  std::size_t row = 0;
  std::size_t col = 0;
  int label = 0;
};

/// Summed binary cross-entropy over the labelled cells, computed from logits.
double bce_loss(const ForwardResult& f, const std::vector<CellLabel>& labels);

/// Loss and analytic gradient with the same layout as GnnParams.
struct LossAndGrad {
  double loss = 0.0;
  GnnParams grad;
};

LossAndGrad loss_and_gradient(const BipartiteGraph& g, const GnnParams& p, const std::vector<CellLabel>& labels);

struct TrainConfig {
  std::size_t epochs = 2000;
  double learning_rate = 1e-2;
  std::size_t hidden_dim = 64;
  std::uint64_t seed = 0;
};

class DivergenceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainResult {
  GnnParams params;
  std::vector<double> loss_trace;
};

/// Full-batch plain gradient descent on the summed BCE of the labelled cells.
TrainResult train(const BipartiteGraph& g, const std::vector<CellLabel>& labels, const TrainConfig& cfg);

/// True branch iff q > threshold; q == threshold takes the false branch.
bool infer_branch(double probability, double threshold = 0.5);
bool infer_branch(const GnnParams& p, const BipartiteGraph& g, std::size_t i, std::size_t j, double threshold = 0.5);

/// {"version": 1, "dims": {...}, "tensors": [{"name", "shape", "data": base64 little-endian float64}]}.
nlohmann::ordered_json params_to_json(const GnnParams& p);
GnnParams params_from_json(const nlohmann::json& j);

}  // namespace forested

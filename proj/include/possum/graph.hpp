#pragma once

#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace possum {

/// Undirected adjacency over S areas.
struct AreaGraph {
  std::vector<std::vector<int>> adj;

  static AreaGraph from_edges(int n, const std::vector<std::pair<int, int>>& edges);
  int size() const { return static_cast<int>(adj.size()); }
  /// Neighbour count of an area (named apart from the past-share matrix).
  int degree(int s) const { return static_cast<int>(adj[s].size()); }
  bool symmetric() const;
  std::vector<std::pair<int, int>> edges() const;  // s < t
  /// Component label per node, numbered in order of first node.
  std::vector<int> components() const;
};

/// Graph Laplacian (the ICAR precision) restricted to the listed nodes.
Eigen::MatrixXd icar_precision(const AreaGraph& g, const std::vector<int>& nodes);

/// Everything the BYM2 prior needs about the graph.
struct IcarStructure {
  std::vector<int> component;              // per node; -1 for isolated nodes
  std::vector<std::vector<int>> members;   // per non-singleton component
  std::vector<double> scaling;             // per non-singleton component
  std::vector<bool> isolated;
  std::vector<std::pair<int, int>> edges;
  /// S x m map from free coordinates to ψ. Columns are eigenvectors of each component's
  /// Laplacian scaled by 1/sqrt(eigenvalue), so ψ = B u sums to zero within each component
  /// and ψ'Qψ = u'u.
  Eigen::MatrixXd basis;
  int free_dim() const { return static_cast<int>(basis.cols()); }
};

IcarStructure icar_structure(const AreaGraph& g);

/// Geometric mean of the marginal variances of the sum-to-zero ICAR generalized inverse,
/// one value per connected component with at least two nodes. Isolated nodes are skipped
/// and reported through `isolated` when given.
std::vector<double> icar_scaling_factor(const AreaGraph& g, std::vector<int>* isolated = nullptr);

}  // namespace possum

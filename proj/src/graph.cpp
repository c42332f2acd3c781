#include "possum/graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "possum/error.hpp"

namespace possum {

AreaGraph AreaGraph::from_edges(int n, const std::vector<std::pair<int, int>>& edges) {
  if (n < 1) throw Error(Errc::InvalidArgument, "graph needs at least one node");
  std::vector<std::set<int>> sets(n);
  for (auto [a, b] : edges) {
    if (a < 0 || b < 0 || a >= n || b >= n) throw Error(Errc::InvalidArgument, "edge endpoint out of range");
    if (a == b) continue;
    sets[a].insert(b);
    sets[b].insert(a);
  }
  AreaGraph g;
  for (auto& s : sets) g.adj.emplace_back(s.begin(), s.end());
  return g;
}

bool AreaGraph::symmetric() const {
  for (int s = 0; s < size(); ++s)
    for (int t : adj[s]) {
      if (t < 0 || t >= size()) return false;
      if (std::find(adj[t].begin(), adj[t].end(), s) == adj[t].end()) return false;
    }
  return true;
}

std::vector<std::pair<int, int>> AreaGraph::edges() const {
  std::vector<std::pair<int, int>> out;
  for (int s = 0; s < size(); ++s)
    for (int t : adj[s])
      if (s < t) out.emplace_back(s, t);
  return out;
}

std::vector<int> AreaGraph::components() const {
  std::vector<int> label(size(), -1);
  int next = 0;
  for (int s = 0; s < size(); ++s) {
    if (label[s] >= 0) continue;
    std::vector<int> stack{s};
    label[s] = next;
    while (!stack.empty()) {
      int v = stack.back();
      stack.pop_back();
      for (int w : adj[v])
        if (label[w] < 0) {
          label[w] = next;
          stack.push_back(w);
        }
    }
    ++next;
  }
  return label;
}

Eigen::MatrixXd icar_precision(const AreaGraph& g, const std::vector<int>& nodes) {
  const int n = static_cast<int>(nodes.size());
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto& nb = g.adj[nodes[i]];
      if (std::find(nb.begin(), nb.end(), nodes[j]) != nb.end()) {
        Q(i, j) = -1.0;
        Q(i, i) += 1.0;
      }
    }
  return Q;
}

namespace {

double component_scaling(const Eigen::MatrixXd& Q) {
  const int n = static_cast<int>(Q.rows());
  // (Q + 11'/n)^{-1} - 11'/n is the generalized inverse on the sum-to-zero subspace
  Eigen::MatrixXd J = Eigen::MatrixXd::Constant(n, n, 1.0 / n);
  Eigen::MatrixXd inv = (Q + J).ldlt().solve(Eigen::MatrixXd::Identity(n, n)) - J;
  double log_sum = 0.0;
  for (int i = 0; i < n; ++i) log_sum += std::log(inv(i, i));
  return std::exp(log_sum / n);
}

}  // namespace

std::vector<double> icar_scaling_factor(const AreaGraph& g, std::vector<int>* isolated) {
  if (g.size() < 1) throw Error(Errc::InvalidArgument, "empty graph");
  if (!g.symmetric()) throw Error(Errc::InvalidArgument, "adjacency is not symmetric");
  auto label = g.components();
  int n_comp = *std::max_element(label.begin(), label.end()) + 1;
  std::vector<std::vector<int>> members(n_comp);
  for (int s = 0; s < g.size(); ++s) members[label[s]].push_back(s);
  std::vector<double> out;
  if (isolated) isolated->clear();
  for (const auto& m : members) {
    if (m.size() == 1) {
      if (isolated) isolated->push_back(m.front());
      continue;
    }
    out.push_back(component_scaling(icar_precision(g, m)));
  }
  return out;
}

IcarStructure icar_structure(const AreaGraph& g) {
  if (!g.symmetric()) throw Error(Errc::InvalidArgument, "adjacency is not symmetric");
  IcarStructure st;
  const int S = g.size();
  st.component.assign(S, -1);
  st.isolated.assign(S, false);
  st.edges = g.edges();
  auto label = g.components();
  int n_comp = S ? *std::max_element(label.begin(), label.end()) + 1 : 0;
  std::vector<std::vector<int>> all(n_comp);
  for (int s = 0; s < S; ++s) all[label[s]].push_back(s);

  int free_dim = 0;
  for (const auto& m : all) {
    if (m.size() == 1) st.isolated[m.front()] = true;
    else free_dim += static_cast<int>(m.size()) - 1;
  }
  st.basis = Eigen::MatrixXd::Zero(S, free_dim);
  int col = 0;
  for (const auto& m : all) {
    if (m.size() == 1) continue;
    const int c = static_cast<int>(st.members.size());
    for (int s : m) st.component[s] = c;
    st.members.push_back(m);
    auto Q = icar_precision(g, m);
    st.scaling.push_back(component_scaling(Q));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Q);
    // eigenvalues ascend; the first is the constant null vector of a connected component
    for (int k = 1; k < static_cast<int>(m.size()); ++k) {
      Eigen::VectorXd v = eig.eigenvectors().col(k);
      v.array() -= v.mean();  // remove round-off along the null direction
      v /= std::sqrt(eig.eigenvalues()(k));
      for (std::size_t i = 0; i < m.size(); ++i) st.basis(m[i], col) = v(i);
      ++col;
    }
  }
  return st;
}

}  // namespace possum

#include "sctc/spatial.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include "sctc/common.hpp"

namespace sctc {

SpatialGraph knn_graph(const Matrix& centroids, int k) {
  const Index n = centroids.rows();
  check(centroids.cols() == 2, "knn_graph: centroids must be N x 2");
  check(centroids.allFinite(), "knn_graph: centroids must be finite");
  check(k >= 1, "knn_graph: k must be >= 1");
  check(k < n, "knn_graph: k must be < N");

  std::set<std::pair<int, int>> edges;
  std::vector<std::pair<double, int>> cand(n - 1);
  for (Index i = 0; i < n; ++i) {
    Index m = 0;
    for (Index j = 0; j < n; ++j) {
      if (j == i) continue;
      double dx = centroids(i, 0) - centroids(j, 0);
      double dy = centroids(i, 1) - centroids(j, 1);
      cand[m++] = {dx * dx + dy * dy, static_cast<int>(j)};
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
    for (int q = 0; q < k; ++q) {
      int j = cand[q].second;
      edges.emplace(std::min<int>(i, j), std::max<int>(i, j));
    }
  }

  SpatialGraph g;
  g.n_nodes = n;
  g.edges.assign(edges.begin(), edges.end());
  g.centroids = centroids;
  return g;
}

SpatialGraph grid_graph(int rows, int cols) {
  check(rows >= 1 && cols >= 1, "grid_graph: rows and cols must be >= 1");
  SpatialGraph g;
  g.n_nodes = static_cast<Index>(rows) * cols;
  Matrix c(g.n_nodes, 2);
  for (int r = 0; r < rows; ++r) {
    for (int q = 0; q < cols; ++q) {
      int id = r * cols + q;
      c(id, 0) = q;
      c(id, 1) = r;
      if (q + 1 < cols) g.edges.emplace_back(id, id + 1);
      if (r + 1 < rows) g.edges.emplace_back(id, id + cols);
    }
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.centroids = c;
  return g;
}

std::vector<int> degrees(const SpatialGraph& g) {
  std::vector<int> d(g.n_nodes, 0);
  for (auto [a, b] : g.edges) {
    check(a >= 0 && b >= 0 && a < g.n_nodes && b < g.n_nodes && a != b,
          "degrees: edge endpoints out of range");
    ++d[a];
    ++d[b];
  }
  return d;
}

bool is_connected(const SpatialGraph& g) {
  if (g.n_nodes == 0) return false;
  std::vector<std::vector<int>> adj(g.n_nodes);
  for (auto [a, b] : g.edges) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<char> seen(g.n_nodes, 0);
  std::vector<int> stack{0};
  seen[0] = 1;
  Index count = 1;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    for (int w : adj[v]) {
      if (!seen[w]) {
        seen[w] = 1;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == g.n_nodes;
}

Matrix adjacency_matrix(const SpatialGraph& g) {
  Matrix a = Matrix::Zero(g.n_nodes, g.n_nodes);
  for (auto [i, j] : g.edges) {
    a(i, j) = 1.0;
    a(j, i) = 1.0;
  }
  return a;
}

Matrix normalized_laplacian(const SpatialGraph& g) {
  std::vector<int> deg = degrees(g);
  for (Index i = 0; i < g.n_nodes; ++i)
    check(deg[i] >= 1, "normalized_laplacian: node " + std::to_string(i) + " is isolated");

  Matrix q = Matrix::Identity(g.n_nodes, g.n_nodes);
  for (auto [i, j] : g.edges) {
    double w = -1.0 / std::sqrt(static_cast<double>(deg[i]) * deg[j]);
    q(i, j) = w;
    q(j, i) = w;
  }
  return q;
}

SpectralBasis eigenbasis(const Matrix& q) {
  check(q.rows() == q.cols(), "eigenbasis: matrix must be square");
  check((q - q.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * (1.0 + q.cwiseAbs().maxCoeff()),
        "eigenbasis: matrix must be symmetric");

  Eigen::SelfAdjointEigenSolver<Matrix> solver(q);
  require(solver.info() == Eigen::Success, "eigenbasis: eigendecomposition failed");

  SpectralBasis b;
  b.eigenvalues = solver.eigenvalues();  // ascending
  b.eigenvectors = solver.eigenvectors();
  fix_column_signs(b.eigenvectors);
  return b;
}

SpectralBasis spectral_basis(const SpatialGraph& g) {
  require(is_connected(g), "spectral_basis: graph is disconnected");
  return eigenbasis(normalized_laplacian(g));
}

Vector smoothness_profile(const SpectralBasis& basis, const Vector& signal) {
  check(signal.size() == basis.eigenvectors.rows(),
        "smoothness_profile: signal length must equal node count");
  return (basis.eigenvectors.transpose() * signal).cwiseAbs();
}

}  // namespace sctc

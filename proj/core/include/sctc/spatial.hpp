#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "sctc/tensor.hpp"

namespace sctc {

// Undirected spatial adjacency graph. Edges are stored as (low, high) index
// pairs, sorted and without duplicates or self-loops.
struct SpatialGraph {
  Index n_nodes = 0;
  std::vector<std::pair<int, int>> edges;
  std::optional<Matrix> centroids;  // N x 2 when the graph came from coordinates
};

// Directed k-nearest-neighbor relation under Euclidean distance, symmetrized
// by union. Distance ties break on the lower node index. Requires
// 1 <= k <= N-1 and finite centroids (N x 2).
SpatialGraph knn_graph(const Matrix& centroids, int k);

// rows x cols lattice with rook (4-neighbor) adjacency; centroids at integer
// lattice coordinates (x = column, y = row). Node id = row * cols + col.
SpatialGraph grid_graph(int rows, int cols);

std::vector<int> degrees(const SpatialGraph& g);
bool is_connected(const SpatialGraph& g);
Matrix adjacency_matrix(const SpatialGraph& g);

// Q = I - D^{-1/2} A D^{-1/2}. Every node must have degree >= 1.
Matrix normalized_laplacian(const SpatialGraph& g);

// Eigendecomposition of the normalized Laplacian: eigenvalues ascending,
// eigenvector columns orthonormal, sign fixed so the largest-magnitude entry
// of each column is positive.
struct SpectralBasis {
  Vector eigenvalues;
  Matrix eigenvectors;

  Index size() const { return eigenvalues.size(); }

  // First k columns (low frequency first).
  Matrix leading(Index k) const { return eigenvectors.leftCols(k); }
};

// Full symmetric eigendecomposition of q; q must be symmetric.
SpectralBasis eigenbasis(const Matrix& q);

// Convenience: normalized Laplacian then eigenbasis. Rejects disconnected
// graphs, which the spectral adjustment cannot handle.
SpectralBasis spectral_basis(const SpatialGraph& g);

// |phi_j' signal| for all j; diagnoses how fast spectral mass decays.
Vector smoothness_profile(const SpectralBasis& basis, const Vector& signal);

}  // namespace sctc

#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>

namespace sctc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

// Dense 3-way tensor of (unit, exposure level, outcome) values.
//
// Canonical layout: the unit index varies fastest, then the level index,
// then the outcome index; entry (i, l, o) lives at values[i + N*l + N*L*o].
// All unfoldings are defined against this layout:
//   mode 1: N x (L*O), column l + L*o
//   mode 2: L x (N*O), column i + N*o
//   mode 3: O x (N*L), column i + N*l
// so refold(unfold(t, k), k, dims) == t exactly for every mode.
class Tensor3 {
 public:
  Tensor3() = default;

  // Zero tensor of the given dims (each must be >= 1).
  Tensor3(Index n, Index l, Index o);

  // Takes ownership of values laid out canonically; all entries must be
  // finite and values.size() must equal n*l*o.
  Tensor3(Index n, Index l, Index o, Vector values);

  static Tensor3 constant(Index n, Index l, Index o, double value);

  Index n_units() const { return dims_[0]; }
  Index n_levels() const { return dims_[1]; }
  Index n_outcomes() const { return dims_[2]; }
  std::array<Index, 3> dims() const { return dims_; }
  Index size() const { return data_.size(); }

  double operator()(Index i, Index l, Index o) const {
    return data_[i + dims_[0] * (l + dims_[1] * o)];
  }
  double& operator()(Index i, Index l, Index o) {
    return data_[i + dims_[0] * (l + dims_[1] * o)];
  }

  const Vector& data() const { return data_; }
  Vector& data() { return data_; }

  bool same_dims(const Tensor3& other) const { return dims_ == other.dims_; }

  // Throws if any entry is NaN or infinite.
  void check_finite(const char* what) const;

 private:
  std::array<Index, 3> dims_{0, 0, 0};
  Vector data_;
};

// Mode-k unfolding into a matrix (k in {1,2,3}); column order as documented
// on Tensor3.
Matrix unfold(const Tensor3& t, int mode);

// Inverse of unfold: dims are the dims of the result tensor.
Tensor3 refold(const Matrix& m, int mode, std::array<Index, 3> dims);

// Tensor-matrix product along mode k: refold(m * unfold(t, k), k); the mode-k
// dimension is replaced by m.rows(). m.cols() must equal the mode-k dim.
Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode);

double frobenius_norm(const Tensor3& t);
double inner_product(const Tensor3& a, const Tensor3& b);

// Tucker factors: core of shape (r1, r2, r3) with factor matrices
// U1 (N x r1), U2 (L x r2), U3 (O x r3).
struct TuckerFactors {
  Tensor3 core;
  Matrix U1, U2, U3;
};

// core x1 U1 x2 U2 x3 U3.
Tensor3 tucker_reconstruct(const TuckerFactors& f);

// Higher-order SVD: U_k = top-r_k left singular vectors of unfold(t, k) with
// a deterministic sign convention, core = t x1 U1' x2 U2' x3 U3'. Each rank
// must satisfy 1 <= r_k <= mode-k dimension (and cannot exceed the rank of
// the unfolding's row space, i.e. the product of the other two dims).
TuckerFactors hosvd(const Tensor3& t, std::array<Index, 3> ranks);

// Flips matrix column signs so the largest-magnitude entry of each column is
// positive (ties broken by the lowest row index). Shared by hosvd and the
// Laplacian eigenbasis to make factor output deterministic.
void fix_column_signs(Matrix& m);

}  // namespace sctc

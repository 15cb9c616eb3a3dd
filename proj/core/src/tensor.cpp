#include "sctc/tensor.hpp"

#include <cmath>
#include <string>

#include "sctc/common.hpp"

namespace sctc {

Tensor3::Tensor3(Index n, Index l, Index o) : dims_{n, l, o} {
  check(n >= 1 && l >= 1 && o >= 1, "Tensor3: dims must each be >= 1");
  data_ = Vector::Zero(n * l * o);
}

Tensor3::Tensor3(Index n, Index l, Index o, Vector values) : dims_{n, l, o} {
  check(n >= 1 && l >= 1 && o >= 1, "Tensor3: dims must each be >= 1");
  check(values.size() == n * l * o, "Tensor3: values length must equal N*L*O");
  data_ = std::move(values);
  check_finite("Tensor3 constructor");
}

Tensor3 Tensor3::constant(Index n, Index l, Index o, double value) {
  Tensor3 t(n, l, o);
  t.data_.setConstant(value);
  t.check_finite("Tensor3::constant");
  return t;
}

void Tensor3::check_finite(const char* what) const {
  if (!data_.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": tensor has non-finite entries");
  }
}

namespace {

void check_mode(int mode) { check(mode >= 1 && mode <= 3, "tensor mode must be 1, 2 or 3"); }

}  // namespace

Matrix unfold(const Tensor3& t, int mode) {
  check_mode(mode);
  const Index n = t.n_units(), l = t.n_levels(), o = t.n_outcomes();
  if (mode == 1) {
    // Layout is already column-major with the unit index fastest.
    return Eigen::Map<const Matrix>(t.data().data(), n, l * o);
  }
  if (mode == 2) {
    Matrix m(l, n * o);
    for (Index io = 0; io < o; ++io)
      for (Index il = 0; il < l; ++il)
        for (Index i = 0; i < n; ++i) m(il, i + n * io) = t(i, il, io);
    return m;
  }
  // mode 3: columns i + n*l; equals the transpose of the (N*L) x O view.
  return Eigen::Map<const Matrix>(t.data().data(), n * l, o).transpose();
}

Tensor3 refold(const Matrix& m, int mode, std::array<Index, 3> dims) {
  check_mode(mode);
  const Index n = dims[0], l = dims[1], o = dims[2];
  check(n >= 1 && l >= 1 && o >= 1, "refold: dims must each be >= 1");
  if (mode == 1) {
    check(m.rows() == n && m.cols() == l * o, "refold: matrix shape inconsistent with mode-1 dims");
    Vector v = Eigen::Map<const Vector>(m.data(), m.size());
    return Tensor3(n, l, o, std::move(v));
  }
  if (mode == 2) {
    check(m.rows() == l && m.cols() == n * o, "refold: matrix shape inconsistent with mode-2 dims");
    Tensor3 t(n, l, o);
    for (Index io = 0; io < o; ++io)
      for (Index il = 0; il < l; ++il)
        for (Index i = 0; i < n; ++i) t(i, il, io) = m(il, i + n * io);
    t.check_finite("refold");
    return t;
  }
  check(m.rows() == o && m.cols() == n * l, "refold: matrix shape inconsistent with mode-3 dims");
  Matrix fibers = m.transpose();  // (N*L) x O, matching the canonical layout
  Vector v = Eigen::Map<const Vector>(fibers.data(), fibers.size());
  return Tensor3(n, l, o, std::move(v));
}

Tensor3 mode_product(const Tensor3& t, const Matrix& m, int mode) {
  check_mode(mode);
  const std::array<Index, 3> d = t.dims();
  check(m.cols() == d[mode - 1], "mode_product: matrix columns must match the mode-" +
                                     std::to_string(mode) + " dimension");
  std::array<Index, 3> out = d;
  out[mode - 1] = m.rows();
  if (mode == 1) {
    Matrix r = m * Eigen::Map<const Matrix>(t.data().data(), d[0], d[1] * d[2]);
    return refold(r, 1, out);
  }
  if (mode == 3) {
    // (N*L) x O view times m^T avoids materializing the mode-3 unfolding.
    Matrix r = Eigen::Map<const Matrix>(t.data().data(), d[0] * d[1], d[2]) * m.transpose();
    Vector v = Eigen::Map<const Vector>(r.data(), r.size());
    return Tensor3(out[0], out[1], out[2], std::move(v));
  }
  Matrix r = m * unfold(t, 2);
  return refold(r, 2, out);
}

double frobenius_norm(const Tensor3& t) { return t.data().norm(); }

double inner_product(const Tensor3& a, const Tensor3& b) {
  check(a.same_dims(b), "inner_product: tensors must have equal dims");
  return a.data().dot(b.data());
}

Tensor3 tucker_reconstruct(const TuckerFactors& f) {
  const auto d = f.core.dims();
  check(f.U1.cols() == d[0] && f.U2.cols() == d[1] && f.U3.cols() == d[2],
        "tucker_reconstruct: factor shapes inconsistent with core");
  Tensor3 t = mode_product(f.core, f.U1, 1);
  t = mode_product(t, f.U2, 2);
  return mode_product(t, f.U3, 3);
}

void fix_column_signs(Matrix& m) {
  for (Index j = 0; j < m.cols(); ++j) {
    Index arg = 0;
    double best = -1.0;
    for (Index i = 0; i < m.rows(); ++i) {
      double a = std::abs(m(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (m(arg, j) < 0.0) m.col(j) = -m.col(j);
  }
}

TuckerFactors hosvd(const Tensor3& t, std::array<Index, 3> ranks) {
  const auto d = t.dims();
  for (int k = 0; k < 3; ++k) {
    check(ranks[k] >= 1 && ranks[k] <= d[k],
          "hosvd: rank " + std::to_string(k + 1) + " must be in [1, dim]");
    Index row_space = d[(k + 1) % 3] * d[(k + 2) % 3];
    check(ranks[k] <= row_space, "hosvd: rank " + std::to_string(k + 1) +
                                     " exceeds the rank of the mode unfolding");
  }

  TuckerFactors f;
  Matrix* us[3] = {&f.U1, &f.U2, &f.U3};
  for (int k = 0; k < 3; ++k) {
    Matrix unf = unfold(t, k + 1);
    Eigen::BDCSVD<Matrix> svd(unf, Eigen::ComputeThinU);
    *us[k] = svd.matrixU().leftCols(ranks[k]);
    fix_column_signs(*us[k]);
  }
  Tensor3 core = mode_product(t, f.U1.transpose(), 1);
  core = mode_product(core, f.U2.transpose(), 2);
  f.core = mode_product(core, f.U3.transpose(), 3);
  return f;
}

}  // namespace sctc

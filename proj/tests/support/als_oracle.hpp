#pragma once

// Independent oracle for plain masked Tucker completion: alternating exact
// least squares over (U1 rows, U2 rows, U3 rows, core), started from the
// HOSVD of a slice-mean-filled tensor. Used to cross-check the gradient
// solver on exactly low-rank data.

#include <vector>

#include "sctc/tensor.hpp"

namespace sctc_test {

inline sctc::Tensor3 als_complete(const sctc::Tensor3& y, const sctc::Tensor3& mask,
                                  std::array<sctc::Index, 3> ranks, int iters) {
  using namespace sctc;
  const Index n = y.n_units(), l = y.n_levels(), o = y.n_outcomes();

  Tensor3 filled = y;
  for (Index jl = 0; jl < l; ++jl)
    for (Index jo = 0; jo < o; ++jo) {
      double s = 0;
      long c = 0;
      for (Index i = 0; i < n; ++i)
        if (mask(i, jl, jo) > 0.5) {
          s += y(i, jl, jo);
          ++c;
        }
      double mean = c ? s / c : 0.0;
      for (Index i = 0; i < n; ++i)
        if (mask(i, jl, jo) < 0.5) filled(i, jl, jo) = mean;
    }
  TuckerFactors f = hosvd(filled, ranks);
  Matrix u1 = f.U1, u2 = f.U2, u3 = f.U3;
  Tensor3 core = f.core;

  auto reconstruct = [](const Tensor3& g, const Matrix& a, const Matrix& b, const Matrix& c) {
    return mode_product(mode_product(mode_product(g, a, 1), b, 2), c, 3);
  };

  for (int it = 0; it < iters; ++it) {
    {
      Matrix design = unfold(mode_product(mode_product(core, u2, 2), u3, 3), 1);
      for (Index i = 0; i < n; ++i) {
        std::vector<Index> obs;
        for (Index c = 0; c < l * o; ++c)
          if (mask.data()[i + n * c] > 0.5) obs.push_back(c);
        if (static_cast<Index>(obs.size()) < ranks[0]) continue;
        Matrix a(static_cast<Index>(obs.size()), ranks[0]);
        Vector b(static_cast<Index>(obs.size()));
        for (std::size_t q = 0; q < obs.size(); ++q) {
          a.row(static_cast<Index>(q)) = design.col(obs[q]).transpose();
          b[static_cast<Index>(q)] = y.data()[i + n * obs[q]];
        }
        u1.row(i) = a.colPivHouseholderQr().solve(b).transpose();
      }
    }
    {
      Matrix design = unfold(mode_product(mode_product(core, u1, 1), u3, 3), 2);
      Matrix unf = unfold(y, 2), munf = unfold(mask, 2);
      for (Index j = 0; j < l; ++j) {
        std::vector<Index> obs;
        for (Index c = 0; c < n * o; ++c)
          if (munf(j, c) > 0.5) obs.push_back(c);
        if (static_cast<Index>(obs.size()) < ranks[1]) continue;
        Matrix a(static_cast<Index>(obs.size()), ranks[1]);
        Vector b(static_cast<Index>(obs.size()));
        for (std::size_t q = 0; q < obs.size(); ++q) {
          a.row(static_cast<Index>(q)) = design.col(obs[q]).transpose();
          b[static_cast<Index>(q)] = unf(j, obs[q]);
        }
        u2.row(j) = a.colPivHouseholderQr().solve(b).transpose();
      }
    }
    {
      Matrix design = unfold(mode_product(mode_product(core, u1, 1), u2, 2), 3);
      Matrix unf = unfold(y, 3), munf = unfold(mask, 3);
      for (Index j = 0; j < o; ++j) {
        std::vector<Index> obs;
        for (Index c = 0; c < n * l; ++c)
          if (munf(j, c) > 0.5) obs.push_back(c);
        if (static_cast<Index>(obs.size()) < ranks[2]) continue;
        Matrix a(static_cast<Index>(obs.size()), ranks[2]);
        Vector b(static_cast<Index>(obs.size()));
        for (std::size_t q = 0; q < obs.size(); ++q) {
          a.row(static_cast<Index>(q)) = design.col(obs[q]).transpose();
          b[static_cast<Index>(q)] = unf(j, obs[q]);
        }
        u3.row(j) = a.colPivHouseholderQr().solve(b).transpose();
      }
    }
    {
      const Index nc = ranks[0] * ranks[1] * ranks[2];
      std::vector<Index> obs;
      for (Index i = 0; i < y.size(); ++i)
        if (mask.data()[i] > 0.5) obs.push_back(i);
      Matrix a(static_cast<Index>(obs.size()), nc);
      Vector b(static_cast<Index>(obs.size()));
      for (std::size_t q = 0; q < obs.size(); ++q) {
        Index cell = obs[q];
        Index i = cell % n, rest = cell / n;
        Index jl = rest % l, jo = rest / l;
        for (Index c = 0; c < nc; ++c) {
          Index c1 = c % ranks[0], crest = c / ranks[0];
          Index c2 = crest % ranks[1], c3 = crest / ranks[1];
          a(static_cast<Index>(q), c) = u1(i, c1) * u2(jl, c2) * u3(jo, c3);
        }
        b[static_cast<Index>(q)] = y.data()[cell];
      }
      core = Tensor3(ranks[0], ranks[1], ranks[2], a.colPivHouseholderQr().solve(b));
    }
  }
  return reconstruct(core, u1, u2, u3);
}

}  // namespace sctc_test

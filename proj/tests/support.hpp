#pragma once

// Test-only oracles: straight-line reference evaluations written with raw
// loops, independent of the library kernels, plus finite-difference helpers.

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "tabl/linalg.hpp"
#include "tabl/rng.hpp"

namespace tabl::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.values()) v = rng.uniform(lo, hi);
  return m;
}

using Grid = std::vector<std::vector<double>>;

inline Grid to_grid(const Matrix& m) {
  Grid g(m.rows(), std::vector<double>(m.cols()));
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) g[i][j] = m(i, j);
  return g;
}

inline Grid grid_mul(const Grid& a, const Grid& b) {
  Grid out(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < b[0].size(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < b.size(); ++k) s += a[i][k] * b[k][j];
      out[i][j] = s;
    }
  return out;
}

inline Grid grid_add(Grid a, const Grid& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

/// Literal five-step TABL evaluation; activation 0 relu, 1 column softmax, 2 identity.
inline Grid oracle_tabl(const Grid& w1, const Grid& w, const Grid& w2, const Grid& bias,
                        double lambda, int activation, const Grid& x, bool attention = true) {
  Grid xb = grid_mul(w1, x);
  Grid xt = xb;
  if (attention) {
    Grid e = grid_mul(xb, w);
    for (std::size_t i = 0; i < e.size(); ++i) {
      double mx = *std::max_element(e[i].begin(), e[i].end());
      double s = 0.0;
      std::vector<double> a(e[i].size());
      for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] = std::exp(e[i][j] - mx));
      for (std::size_t j = 0; j < a.size(); ++j) {
        const double att = a[j] / s;
        xt[i][j] = lambda * xb[i][j] * att + (1.0 - lambda) * xb[i][j];
      }
    }
  }
  Grid z = grid_add(grid_mul(xt, w2), bias);
  if (activation == 0) {
    for (auto& row : z)
      for (double& v : row) v = std::max(v, 0.0);
  } else if (activation == 1) {
    for (std::size_t j = 0; j < z[0].size(); ++j) {
      double mx = z[0][j];
      for (auto& row : z) mx = std::max(mx, row[j]);
      double s = 0.0;
      for (auto& row : z) s += (row[j] = std::exp(row[j] - mx));
      for (auto& row : z) row[j] /= s;
    }
  }
  return z;
}

inline double max_abs_diff(const Grid& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) m = std::max(m, std::abs(a[i][j] - b(i, j)));
  return m;
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}

/// Central differences of `loss` w.r.t. each entry of `param`, compared
/// against `analytic`; returns the max relative error. Entries listed in
/// `skip` are ignored.
inline double fd_check(std::span<double> param, std::span<const double> analytic,
                       const std::function<double()>& loss, double h = 1e-5,
                       const std::vector<std::size_t>& skip = {}) {
  double worst = 0.0;
  for (std::size_t i = 0; i < param.size(); ++i) {
    if (std::find(skip.begin(), skip.end(), i) != skip.end()) continue;
    const double saved = param[i];
    param[i] = saved + h;
    const double up = loss();
    param[i] = saved - h;
    const double down = loss();
    param[i] = saved;
    worst = std::max(worst, rel_err(analytic[i], (up - down) / (2.0 * h)));
  }
  return worst;
}

/// Linear probe loss sum(G .* Y); its gradient w.r.t. Y is G.
inline double probe(const Matrix& g, const Matrix& y) {
  double s = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) s += g.values()[i] * y.values()[i];
  return s;
}

}  // namespace tabl::testing

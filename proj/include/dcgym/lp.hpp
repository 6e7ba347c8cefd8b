#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace dcgym::lp {

enum class Status { Optimal, Unbounded, IterationLimit, Invalid };

/// minimize c'x  subject to  A x <= b,  x >= 0,  with b >= 0.
/// A is row-major, rows() x cols().
struct Problem {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> c;

  Problem() = default;
  Problem(std::size_t m, std::size_t n) : rows(m), cols(n), a(m * n, 0.0), b(m, 0.0), c(n, 0.0) {}

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  /// Largest violation of A x <= b and x >= 0.
  double max_violation(const std::vector<double>& x) const {
    double worst = 0.0;
    for (std::size_t j = 0; j < cols; ++j) worst = std::max(worst, -x[j]);
    for (std::size_t i = 0; i < rows; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < cols; ++j) s += at(i, j) * x[j];
      worst = std::max(worst, s - b[i]);
    }
    return worst;
  }

  double objective(const std::vector<double>& x) const {
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += c[j] * x[j];
    return s;
  }
};

struct Solution {
  Status status = Status::Invalid;
  std::vector<double> x;
  double objective = 0.0;
  int iterations = 0;
};

/// Dense tableau simplex started from the slack basis. Bland's rule on both
/// the entering and the leaving choice, so it terminates on degenerate
/// problems.
inline Solution solve(const Problem& p, int max_iterations = 10000, double tol = 1e-9) {
  Solution out;
  const std::size_t m = p.rows;
  const std::size_t n = p.cols;
  if (p.a.size() != m * n || p.b.size() != m || p.c.size() != n) return out;
  for (double v : p.b)
    if (!(v >= -tol) || !std::isfinite(v)) return out;

  const std::size_t width = n + m + 1;  // structural, slack, rhs
  std::vector<double> t(m * width, 0.0);
  auto T = [&](std::size_t i, std::size_t j) -> double& { return t[i * width + j]; };
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) T(i, j) = p.at(i, j);
    T(i, n + i) = 1.0;
    T(i, width - 1) = std::max(0.0, p.b[i]);
    basis[i] = n + i;
  }
  std::vector<double> reduced(n + m, 0.0);
  for (std::size_t j = 0; j < n; ++j) reduced[j] = p.c[j];
  double obj = 0.0;  // current objective value is -obj

  for (out.iterations = 0; out.iterations < max_iterations; ++out.iterations) {
    std::size_t enter = width;
    for (std::size_t j = 0; j < n + m; ++j)
      if (reduced[j] < -tol) {
        enter = j;
        break;
      }
    if (enter == width) {
      out.status = Status::Optimal;
      break;
    }
    std::size_t leave = m;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < m; ++i) {
      double piv = T(i, enter);
      if (piv <= tol) continue;
      double ratio = T(i, width - 1) / piv;
      if (ratio < best - tol || (ratio <= best + tol && leave < m && basis[i] < basis[leave])) {
        best = ratio;
        leave = i;
      }
    }
    if (leave == m) {
      out.status = Status::Unbounded;
      return out;
    }
    double piv = T(leave, enter);
    for (std::size_t j = 0; j < width; ++j) T(leave, j) /= piv;
    for (std::size_t i = 0; i < m; ++i) {
      if (i == leave) continue;
      double f = T(i, enter);
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < width; ++j) T(i, j) -= f * T(leave, j);
    }
    double f = reduced[enter];
    for (std::size_t j = 0; j < n + m; ++j) reduced[j] -= f * T(leave, j);
    obj -= f * T(leave, width - 1);
    basis[leave] = enter;
  }
  if (out.status != Status::Optimal) {
    out.status = Status::IterationLimit;
    return out;
  }
  out.x.assign(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] < n) out.x[basis[i]] = std::max(0.0, T(i, width - 1));
  out.objective = p.objective(out.x);
  return out;
}

}  // namespace dcgym::lp

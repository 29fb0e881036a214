#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>

#include <Eigen/Core>

#include "gkdv/error.hpp"

namespace gkdv {

using Index = Eigen::Index;
using Vector = Eigen::VectorXd;

enum class GridKind : std::uint8_t { periodic = 0, bounded = 1 };

/// Uniform grid y_k = -L + k h, h = 2L/n, k = 0..n-1.
///
/// Periodic grids wrap at +L and require a power-of-two size; bounded grids
/// carry decaying (Dirichlet-type) data and are used for profile solves.
class Grid {
 public:
  Grid(Index n, double half_length, GridKind kind);

  static Grid periodic(Index n, double half_length) { return {n, half_length, GridKind::periodic}; }
  static Grid bounded(Index n, double half_length) { return {n, half_length, GridKind::bounded}; }

  Index size() const noexcept { return n_; }
  double half_length() const noexcept { return half_length_; }
  GridKind kind() const noexcept { return kind_; }
  bool is_periodic() const noexcept { return kind_ == GridKind::periodic; }
  double spacing() const noexcept { return 2.0 * half_length_ / static_cast<double>(n_); }
  double point(Index k) const noexcept { return -half_length_ + static_cast<double>(k) * spacing(); }
  Vector points() const;

  bool operator==(const Grid& other) const = default;

 private:
  Index n_;
  double half_length_;
  GridKind kind_;
};

/// A real function sampled on a Grid. Values are finite after construction.
class Field {
 public:
  Field(const Grid& grid, Vector values);

  static Field zeros(const Grid& grid) { return {grid, Vector::Zero(grid.size())}; }
  static Field constant(const Grid& grid, double c) { return {grid, Vector::Constant(grid.size(), c)}; }

  template <typename F>
  static Field sample(const Grid& grid, F&& f) {
    Vector v(grid.size());
    for (Index k = 0; k < grid.size(); ++k) v[k] = f(grid.point(k));
    return {grid, std::move(v)};
  }

  const Grid& grid() const noexcept { return grid_; }
  const Vector& values() const noexcept { return values_; }
  Index size() const noexcept { return values_.size(); }
  double operator[](Index k) const { return values_[k]; }

  double sup_norm() const { return values_.size() ? values_.cwiseAbs().maxCoeff() : 0.0; }

  /// Pointwise map, result on the same grid.
  template <typename F>
  Field map(F&& f) const {
    return {grid_, values_.unaryExpr(std::forward<F>(f)).eval()};
  }

 private:
  Grid grid_;
  Vector values_;
};

void require_same_grid(const Field& a, const Field& b, const char* context);

Field operator+(const Field& a, const Field& b);
Field operator-(const Field& a, const Field& b);
Field operator*(const Field& a, const Field& b);
Field operator*(double s, const Field& a);
Field operator*(const Field& a, double s);
Field operator-(const Field& a);
Field pow(const Field& a, int p);

/// Spectral derivative on periodic grids; 8th-order centered differences with
/// one-sided closures on bounded grids. Supports order 1..3.
Field differentiate(const Field& f, int order);

/// Rectangle rule on periodic grids, trapezoid on bounded grids.
double integrate(const Field& f);
double inner(const Field& f, const Field& g);
double l2_norm(const Field& f);

struct CumulativeResult {
  Field value;
  std::optional<std::string> warning;
};

/// F(y_k) = int_{y_k}^{y_{n-1}} f, composite trapezoid with Euler-Maclaurin
/// endpoint corrections, accumulated from the right end.
CumulativeResult cumulative_from_right(const Field& f);

struct ResampleResult {
  Field field;
  Index outside = 0;
};

/// g(y) = f(scale * y + shift) on `target` by 8-point Lagrange interpolation.
/// Target points mapping outside f's support are zero and counted; more than
/// `max_outside_fraction` of them is a coverage error.
ResampleResult resample(const Field& f, const Grid& target, double shift, double scale,
                        double max_outside_fraction = 0.01);

/// Interpolated value of f at an arbitrary point (0 outside support).
double evaluate_at(const Field& f, double y);

/// Transform-space energy sum h * n * sum |f_k|^2 (periodic grids only).
double parseval_sum(const Field& f);

// Snapshot file ("GKDV1\n" + u64 n, f64 L, u8 kind, f64 time, n f64; little-endian).
struct Snapshot {
  Field field;
  double time = 0.0;
};

void write_snapshot(const std::filesystem::path& path, const Field& f, double time);
Snapshot read_snapshot(const std::filesystem::path& path);

}  // namespace gkdv

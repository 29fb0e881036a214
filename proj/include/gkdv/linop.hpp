#pragma once

#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "gkdv/grid.hpp"

namespace gkdv {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// L f = -f'' + f - 5 Q^4 f evaluated with grid.differentiate.
Field apply_L(const Field& f, const Field& Q);

/// Discretization of -a d^2/dy^2 + p(y) on a bounded grid.
///
/// Unknowns are the nodes 1..n-1; node 0 and the virtual node y = L carry
/// homogeneous Dirichlet data, and the 9-point 8th-order stencil reads zero
/// ghosts beyond them, so the matrix is exactly symmetric.
class OperatorMatrix {
 public:
  OperatorMatrix(const Grid& grid, double stiffness, const Field& potential);

  /// The linearized operator L around Q.
  static OperatorMatrix linearized(const Field& Q);
  /// -d^2 + 1 (potential switched off).
  static OperatorMatrix free(const Grid& grid);

  const Grid& grid() const noexcept { return grid_; }
  const SparseMatrix& matrix() const noexcept { return matrix_; }
  const Field& potential() const noexcept { return potential_; }
  Index unknowns() const noexcept { return matrix_.rows(); }

  Field apply(const Field& f) const;

  /// Restriction of a field to the unknown nodes, and back (node 0 set to 0).
  Vector restrict_field(const Field& f) const { return f.values().tail(unknowns()); }
  Field extend(const Vector& x) const;

 private:
  Grid grid_;
  Field potential_;
  SparseMatrix matrix_;
};

struct ConstrainedSolution {
  Field f;
  double multiplier = 0.0;
};

/// Solves L f = h with (f, kernel) = 0 through the bordered system
/// [A q; q^T 0]. Requires (h, kernel) ~ 0 (relative tolerance `solvability_tol`).
ConstrainedSolution solve_constrained(const OperatorMatrix& op, const Field& kernel, const Field& h,
                                      double solvability_tol = 1e-7);

struct EigenOptions {
  Index dense_limit = 2048;   // dense symmetric solve up to this many unknowns
  Index block_size = 16;      // subspace iteration above it
  int max_iterations = 2000;
  double tolerance = 1e-12;   // change of the Ritz value between sweeps
  std::optional<double> shift;  // spectral lower bound for the iterative path
};

/// Smallest eigenvalue of A (or of the pencil (A, B)) restricted to the
/// L2-orthogonal complement of the constraint fields.
double constrained_min_eigenvalue(const SparseMatrix& A, const SparseMatrix* B, const Eigen::MatrixXd& constraints,
                                  const EigenOptions& options = {});

/// min (Lf,f)/||f||^2 over f orthogonal to every constraint field.
double coercivity_min(const OperatorMatrix& op, std::span<const Field> constraints, const EigenOptions& options = {});

struct VirialOptions {
  bool localized = false;  // restrict to |y| < B/2 and add (1/B) e^{-|y|/2}
  double B = 100.0;
  EigenOptions eigen{};
};

/// Minimum of 3 int v_y^2 + int v^2 - 5 int Q^4 v^2 + 20 int y Q' Q^3 v^2
/// normalized by int v_y^2 + v^2, over v orthogonal to the constraints.
double virial_min(const Field& Q, const Field& Qp, std::span<const Field> constraints,
                  const VirialOptions& options = {});

}  // namespace gkdv

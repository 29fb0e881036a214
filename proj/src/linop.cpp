#include "gkdv/linop.hpp"

#include <array>
#include <cmath>
#include <limits>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <Eigen/SparseLU>

namespace gkdv {

namespace {

// 8th-order centered second-derivative stencil, offsets -4..4.
constexpr std::array<double, 9> kD2 = {-1.0 / 560, 8.0 / 315, -1.0 / 5, 8.0 / 5, -205.0 / 72,
                                       8.0 / 5,    -1.0 / 5,  8.0 / 315, -1.0 / 560};

}  // namespace

Field apply_L(const Field& f, const Field& Q) {
  require_same_grid(f, Q, "apply_L");
  const Vector q4 = Q.values().array().pow(4);
  const Vector d2 = differentiate(f, 2).values();
  return {f.grid(), (-d2.array() + f.values().array() - 5.0 * q4.array() * f.values().array()).matrix()};
}

OperatorMatrix::OperatorMatrix(const Grid& grid, double stiffness, const Field& potential)
    : grid_(grid), potential_(potential) {
  if (grid.is_periodic())
    throw Error(ErrorCode::invalid_argument, "linop", "operator matrix needs a bounded grid");
  if (!(potential.grid() == grid)) throw Error(ErrorCode::grid_mismatch, "linop", "potential grid mismatch");
  const Index m = grid.size() - 1;
  const double inv_h2 = 1.0 / (grid.spacing() * grid.spacing());
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(9 * m));
  for (Index i = 0; i < m; ++i) {
    for (int o = -4; o <= 4; ++o) {
      const Index j = i + o;
      if (j < 0 || j >= m) continue;
      double value = -stiffness * kD2[o + 4] * inv_h2;
      if (o == 0) value += potential[i + 1];
      triplets.emplace_back(i, j, value);
    }
  }
  matrix_.resize(m, m);
  matrix_.setFromTriplets(triplets.begin(), triplets.end());
}

OperatorMatrix OperatorMatrix::linearized(const Field& Q) {
  const Field p = Q.map([](double q) { return 1.0 - 5.0 * q * q * q * q; });
  return {Q.grid(), 1.0, p};
}

OperatorMatrix OperatorMatrix::free(const Grid& grid) { return {grid, 1.0, Field::constant(grid, 1.0)}; }

Field OperatorMatrix::extend(const Vector& x) const {
  Vector v(grid_.size());
  v[0] = 0.0;
  v.tail(unknowns()) = x;
  return {grid_, std::move(v)};
}

Field OperatorMatrix::apply(const Field& f) const {
  if (!(f.grid() == grid_)) throw Error(ErrorCode::grid_mismatch, "linop", "apply: grid mismatch");
  return extend(matrix_ * restrict_field(f));
}

ConstrainedSolution solve_constrained(const OperatorMatrix& op, const Field& kernel, const Field& h,
                                      double solvability_tol) {
  require_same_grid(kernel, h, "solve_constrained");
  const double hn = l2_norm(h);
  const double kn = l2_norm(kernel);
  if (hn == 0.0) return {Field::zeros(h.grid()), 0.0};
  const double overlap = inner(h, kernel);
  if (std::abs(overlap) > solvability_tol * hn * kn) {
    throw Error(ErrorCode::non_solvable, "linop",
                "right-hand side is not orthogonal to the kernel: (h,k)/(|h||k|) = " +
                    std::to_string(overlap / (hn * kn)));
  }

  const Index m = op.unknowns();
  const Vector q = op.restrict_field(kernel);
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<size_t>(op.matrix().nonZeros() + 2 * m));
  for (Index c = 0; c < op.matrix().outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(op.matrix(), c); it; ++it) triplets.emplace_back(it.row(), it.col(), it.value());
  for (Index i = 0; i < m; ++i) {
    if (q[i] == 0.0) continue;
    triplets.emplace_back(i, m, q[i]);
    triplets.emplace_back(m, i, q[i]);
  }
  SparseMatrix K(m + 1, m + 1);
  K.setFromTriplets(triplets.begin(), triplets.end());

  Eigen::SparseLU<SparseMatrix> lu;
  lu.compute(K);
  if (lu.info() != Eigen::Success)
    throw Error(ErrorCode::grid_too_coarse, "linop", "bordered system is singular");
  Vector rhs(m + 1);
  rhs.head(m) = op.restrict_field(h);
  rhs[m] = 0.0;
  const Vector x = lu.solve(rhs);
  if (lu.info() != Eigen::Success || !x.allFinite())
    throw Error(ErrorCode::grid_too_coarse, "linop", "bordered solve failed");
  return {op.extend(x.head(m)), x[m]};
}

namespace {

double dense_min_eigenvalue(const SparseMatrix& A, const SparseMatrix* B, const Eigen::MatrixXd& C) {
  const Index m = A.rows();
  const Index k = C.cols();
  Eigen::MatrixXd Ad = Eigen::MatrixXd(A);
  Eigen::MatrixXd Bd;
  if (B) Bd = Eigen::MatrixXd(*B);
  if (k > 0) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(C);
    const auto hq = qr.householderQ();
    Ad.applyOnTheLeft(hq.transpose());
    Ad.applyOnTheRight(hq);
    if (B) {
      Bd.applyOnTheLeft(hq.transpose());
      Bd.applyOnTheRight(hq);
    }
  }
  const Index r = m - k;
  Eigen::MatrixXd As = Ad.bottomRightCorner(r, r);
  As = 0.5 * (As + As.transpose()).eval();
  if (!B) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(As, Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) throw Error(ErrorCode::eigensolve, "linop", "dense eigensolve failed");
    return es.eigenvalues()[0];
  }
  Eigen::MatrixXd Bs = Bd.bottomRightCorner(r, r);
  Bs = 0.5 * (Bs + Bs.transpose()).eval();
  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(As, Bs, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw Error(ErrorCode::eigensolve, "linop", "generalized eigensolve failed");
  return es.eigenvalues()[0];
}

// Gershgorin lower bound on A; only a fallback since wide stencils make it loose.
double gershgorin_lower_bound(const SparseMatrix& A) {
  double lower = std::numeric_limits<double>::infinity();
  for (Index c = 0; c < A.outerSize(); ++c) {
    double diag = 0.0, off = 0.0;
    for (SparseMatrix::InnerIterator it(A, c); it; ++it) {
      if (it.row() == it.col()) diag = it.value();
      else off += std::abs(it.value());
    }
    lower = std::min(lower, diag - off);
  }
  return std::min(lower, 0.0) - 1.0;
}

// Block inverse (subspace) iteration with Rayleigh-Ritz on the constrained
// pencil; constraint handling through a bordered sparse factorization.
double iterative_min_eigenvalue(const SparseMatrix& A, const SparseMatrix* B, const Eigen::MatrixXd& C,
                                const EigenOptions& opt) {
  const Index m = A.rows();
  const Index k = C.cols();
  const Index p = std::min<Index>(opt.block_size, m - k);
  SparseMatrix Bm;
  if (B) Bm = *B;
  else {
    Bm.resize(m, m);
    Bm.setIdentity();
  }
  const double sigma = opt.shift ? *opt.shift : gershgorin_lower_bound(A);
  SparseMatrix shifted = A - sigma * Bm;

  std::vector<Eigen::Triplet<double>> triplets;
  for (Index c = 0; c < shifted.outerSize(); ++c)
    for (SparseMatrix::InnerIterator it(shifted, c); it; ++it) triplets.emplace_back(it.row(), it.col(), it.value());
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < m; ++i)
      if (C(i, j) != 0.0) {
        triplets.emplace_back(i, m + j, C(i, j));
        triplets.emplace_back(m + j, i, C(i, j));
      }
  SparseMatrix K(m + k, m + k);
  K.setFromTriplets(triplets.begin(), triplets.end());
  Eigen::SparseLU<SparseMatrix> lu(K);
  if (lu.info() != Eigen::Success) throw Error(ErrorCode::eigensolve, "linop", "shifted factorization failed");

  // Deterministic start: smooth bumps of increasing frequency.
  Eigen::MatrixXd X(m, p);
  for (Index j = 0; j < p; ++j)
    for (Index i = 0; i < m; ++i)
      X(i, j) = std::sin(M_PI * static_cast<double>((j + 1) * (i + 1)) / static_cast<double>(m + 1));

  auto project = [&](const Eigen::MatrixXd& Y) {
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(m + k, Y.cols());
    rhs.topRows(m) = Bm * Y;
    Eigen::MatrixXd sol = lu.solve(rhs);
    return Eigen::MatrixXd(sol.topRows(m));
  };

  double previous = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= opt.max_iterations; ++iter) {
    X = project(X);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    X = qr.householderQ() * Eigen::MatrixXd::Identity(m, p);
    Eigen::MatrixXd Ar = X.transpose() * (A * X);
    Eigen::MatrixXd Br = X.transpose() * (Bm * X);
    Ar = 0.5 * (Ar + Ar.transpose()).eval();
    Br = 0.5 * (Br + Br.transpose()).eval();
    Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> es(Ar, Br);
    X = X * es.eigenvectors();
    const double theta = es.eigenvalues()[0];
    if (std::abs(theta - previous) <= opt.tolerance * std::max(1.0, std::abs(theta))) return theta;
    previous = theta;
  }
  throw Error(ErrorCode::eigensolve, "linop",
              "subspace iteration did not converge after " + std::to_string(opt.max_iterations) + " iterations");
}

}  // namespace

double constrained_min_eigenvalue(const SparseMatrix& A, const SparseMatrix* B, const Eigen::MatrixXd& constraints,
                                  const EigenOptions& options) {
  if (constraints.rows() != A.rows() && constraints.cols() > 0)
    throw Error(ErrorCode::invalid_argument, "linop", "constraint length mismatch");
  if (A.rows() <= options.dense_limit) return dense_min_eigenvalue(A, B, constraints);
  return iterative_min_eigenvalue(A, B, constraints, options);
}

namespace {

Eigen::MatrixXd constraint_matrix(const OperatorMatrix& op, std::span<const Field> constraints) {
  Eigen::MatrixXd C(op.unknowns(), static_cast<Index>(constraints.size()));
  for (size_t j = 0; j < constraints.size(); ++j) {
    if (!(constraints[j].grid() == op.grid()))
      throw Error(ErrorCode::grid_mismatch, "linop", "constraint field grid mismatch");
    C.col(static_cast<Index>(j)) = op.restrict_field(constraints[j]);
  }
  return C;
}

SparseMatrix selection(const Vector& y, double radius) {
  std::vector<Eigen::Triplet<double>> t;
  Index col = 0;
  for (Index i = 0; i < y.size(); ++i)
    if (std::abs(y[i]) < radius) t.emplace_back(i, col++, 1.0);
  SparseMatrix S(y.size(), col);
  S.setFromTriplets(t.begin(), t.end());
  return S;
}

}  // namespace

double coercivity_min(const OperatorMatrix& op, std::span<const Field> constraints, const EigenOptions& options) {
  // -d^2 is positive semidefinite, so min(p) bounds the spectrum from below.
  EigenOptions opt = options;
  if (!opt.shift) opt.shift = op.potential().values().minCoeff() - 0.5;
  return constrained_min_eigenvalue(op.matrix(), nullptr, constraint_matrix(op, constraints), opt);
}

double virial_min(const Field& Q, const Field& Qp, std::span<const Field> constraints, const VirialOptions& options) {
  require_same_grid(Q, Qp, "virial_min");
  const Grid& g = Q.grid();
  const Vector y = g.points();
  Vector p(g.size());
  for (Index i = 0; i < g.size(); ++i) {
    const double q = Q[i];
    p[i] = 1.0 - 5.0 * std::pow(q, 4) + 20.0 * y[i] * Qp[i] * q * q * q;
    if (options.localized) p[i] += std::exp(-0.5 * std::abs(y[i])) / options.B;
  }
  EigenOptions eig = options.eigen;
  if (!eig.shift) eig.shift = std::min(3.0, p.minCoeff()) - 0.5;
  const OperatorMatrix form(g, 3.0, Field(g, p));
  const OperatorMatrix gram = OperatorMatrix::free(g);
  Eigen::MatrixXd C = constraint_matrix(form, constraints);
  if (!options.localized) return constrained_min_eigenvalue(form.matrix(), &gram.matrix(), C, eig);

  const SparseMatrix S = selection(y.tail(form.unknowns()), 0.5 * options.B);
  const SparseMatrix A = S.transpose() * form.matrix() * S;
  const SparseMatrix Bm = S.transpose() * gram.matrix() * S;
  const Eigen::MatrixXd Cs = S.transpose() * C;
  return constrained_min_eigenvalue(A, &Bm, Cs, eig);
}

}  // namespace gkdv

#include "gkdv/grid.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "gkdv/spectral.hpp"

namespace gkdv {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::grid_mismatch: return "grid-mismatch";
    case ErrorCode::unsupported_order: return "unsupported-order";
    case ErrorCode::coverage: return "coverage";
    case ErrorCode::discretization: return "discretization";
    case ErrorCode::grid_too_coarse: return "grid-too-coarse";
    case ErrorCode::non_solvable: return "non-solvable";
    case ErrorCode::eigensolve: return "eigensolve";
    case ErrorCode::out_of_regime: return "out-of-regime";
    case ErrorCode::past_blowup: return "past-blowup";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::regrid: return "regrid";
    case ErrorCode::decomposition_failed: return "decomposition-failed";
    case ErrorCode::fit_window: return "fit-window";
    case ErrorCode::geometry: return "geometry";
    case ErrorCode::integrity: return "integrity";
    case ErrorCode::config: return "config";
  }
  return "unknown";
}

Grid::Grid(Index n, double half_length, GridKind kind) : n_(n), half_length_(half_length), kind_(kind) {
  if (n < 8) throw Error(ErrorCode::invalid_argument, "grid", "grid needs at least 8 points");
  if (!(half_length > 0.0) || !std::isfinite(half_length))
    throw Error(ErrorCode::invalid_argument, "grid", "half_length must be positive");
  if (kind == GridKind::periodic && (n & (n - 1)) != 0)
    throw Error(ErrorCode::invalid_argument, "grid", "periodic grid size must be a power of two");
}

Vector Grid::points() const {
  Vector y(n_);
  for (Index k = 0; k < n_; ++k) y[k] = point(k);
  return y;
}

Field::Field(const Grid& grid, Vector values) : grid_(grid), values_(std::move(values)) {
  if (values_.size() != grid_.size())
    throw Error(ErrorCode::invalid_argument, "grid", "field length does not match grid");
  if (!values_.allFinite()) throw Error(ErrorCode::invalid_argument, "grid", "field has non-finite values");
}

void require_same_grid(const Field& a, const Field& b, const char* context) {
  if (!(a.grid() == b.grid()))
    throw Error(ErrorCode::grid_mismatch, "grid", std::string(context) + ": fields live on different grids");
}

Field operator+(const Field& a, const Field& b) {
  require_same_grid(a, b, "operator+");
  return {a.grid(), a.values() + b.values()};
}
Field operator-(const Field& a, const Field& b) {
  require_same_grid(a, b, "operator-");
  return {a.grid(), a.values() - b.values()};
}
Field operator*(const Field& a, const Field& b) {
  require_same_grid(a, b, "operator*");
  return {a.grid(), a.values().cwiseProduct(b.values())};
}
Field operator*(double s, const Field& a) { return {a.grid(), s * a.values()}; }
Field operator*(const Field& a, double s) { return s * a; }
Field operator-(const Field& a) { return {a.grid(), -a.values()}; }

Field pow(const Field& a, int p) {
  Vector v = a.values();
  Vector out = Vector::Ones(v.size());
  for (int i = 0; i < p; ++i) out.array() *= v.array();
  return {a.grid(), std::move(out)};
}

namespace {

// Fornberg's algorithm: weights of the m-th derivative at x0 on `nodes`.
std::vector<double> fornberg(double x0, const std::vector<double>& nodes, int m) {
  const int n = static_cast<int>(nodes.size());
  std::vector<std::vector<std::vector<double>>> d(
      m + 1, std::vector<std::vector<double>>(n, std::vector<double>(n, 0.0)));
  d[0][0][0] = 1.0;
  double c1 = 1.0;
  for (int i = 1; i < n; ++i) {
    double c2 = 1.0;
    for (int j = 0; j < i; ++j) {
      const double c3 = nodes[i] - nodes[j];
      c2 *= c3;
      for (int k = 0; k <= std::min(i, m); ++k) {
        d[k][i][j] = ((nodes[i] - x0) * d[k][i - 1][j] - (k > 0 ? k * d[k - 1][i - 1][j] : 0.0)) / c3;
      }
    }
    for (int k = 0; k <= std::min(i, m); ++k) {
      d[k][i][i] = c1 / c2 *
                   ((k > 0 ? k * d[k - 1][i - 1][i - 1] : 0.0) - (nodes[i - 1] - x0) * d[k][i - 1][i - 1]);
    }
    c1 = c2;
  }
  std::vector<double> w(n);
  for (int j = 0; j < n; ++j) w[j] = d[m][n - 1][j];
  return w;
}

Field differentiate_spectral(const Field& f, int order) {
  const Grid& g = f.grid();
  const Index n = g.size();
  RealFft& fft = fft_for(n);
  ComplexVector spec;
  fft.forward(f.values(), spec);
  const double dk = M_PI / g.half_length();
  const std::complex<double> I(0.0, 1.0);
  for (Index j = 0; j < spec.size(); ++j) {
    const double k = dk * static_cast<double>(j);
    std::complex<double> factor = 1.0;
    for (int o = 0; o < order; ++o) factor *= I * k;
    spec[j] *= factor;
  }
  if (order % 2 == 1) spec[n / 2] = 0.0;
  Vector out;
  fft.inverse(spec, out);
  return {g, std::move(out)};
}

}  // namespace

Field differentiate(const Field& f, int order) {
  if (order < 1 || order > 3)
    throw Error(ErrorCode::unsupported_order, "grid", "differentiate supports order 1..3, got " + std::to_string(order));
  const Grid& g = f.grid();
  if (g.is_periodic()) return differentiate_spectral(f, order);

  const Index n = g.size();
  const int half = order == 3 ? 5 : 4;
  const int width = 2 * half + 1;
  const double scale = std::pow(g.spacing(), -order);
  // Weights depend only on the position of the evaluation point inside the
  // stencil, so there are at most `width` distinct sets.
  std::vector<std::vector<double>> weights(width);
  std::vector<double> nodes(width);
  for (int i = 0; i < width; ++i) nodes[i] = i;
  for (int pos = 0; pos < width; ++pos) weights[pos] = fornberg(pos, nodes, order);

  const Vector& v = f.values();
  Vector out(n);
  for (Index k = 0; k < n; ++k) {
    const Index start = std::clamp<Index>(k - half, 0, n - width);
    const auto& w = weights[k - start];
    double acc = 0.0;
    for (int i = 0; i < width; ++i) acc += w[i] * v[start + i];
    out[k] = acc * scale;
  }
  return {g, std::move(out)};
}

double integrate(const Field& f) {
  const Grid& g = f.grid();
  const Vector& v = f.values();
  double s = v.sum();
  if (!g.is_periodic()) s -= 0.5 * (v[0] + v[v.size() - 1]);
  return s * g.spacing();
}

double inner(const Field& f, const Field& g) {
  require_same_grid(f, g, "inner");
  const Vector& a = f.values();
  const Vector& b = g.values();
  double s = a.dot(b);
  if (!f.grid().is_periodic()) s -= 0.5 * (a[0] * b[0] + a[a.size() - 1] * b[b.size() - 1]);
  return s * f.grid().spacing();
}

double l2_norm(const Field& f) { return std::sqrt(std::max(0.0, inner(f, f))); }

CumulativeResult cumulative_from_right(const Field& f) {
  const Grid& g = f.grid();
  if (g.is_periodic())
    throw Error(ErrorCode::invalid_argument, "grid", "cumulative_from_right needs a bounded grid");
  const Index n = g.size();
  const double h = g.spacing();
  const Vector& v = f.values();
  const Vector d1 = differentiate(f, 1).values();
  const Vector d3 = differentiate(f, 3).values();

  Vector F(n);
  F[n - 1] = 0.0;
  double trap = 0.0;
  for (Index k = n - 2; k >= 0; --k) {
    trap += 0.5 * h * (v[k] + v[k + 1]);
    F[k] = trap - h * h / 12.0 * (d1[n - 1] - d1[k]) + std::pow(h, 4) / 720.0 * (d3[n - 1] - d3[k]);
  }

  CumulativeResult result{Field(g, std::move(F)), std::nullopt};
  const double sup = f.sup_norm();
  const double edge = v.tail(4).cwiseAbs().maxCoeff();
  if (sup > 0.0 && edge > 1e-10 * sup) {
    result.warning = "tail truncation: |f| at right edge is " + std::to_string(edge / sup) + " of sup";
  }
  return result;
}

namespace {

constexpr int kInterpPoints = 8;

// Lagrange weights at fractional offset t on nodes 0..kInterpPoints-1.
std::array<double, kInterpPoints> lagrange_weights(double t) {
  std::array<double, kInterpPoints> w{};
  for (int i = 0; i < kInterpPoints; ++i) {
    double num = 1.0, den = 1.0;
    for (int m = 0; m < kInterpPoints; ++m) {
      if (m == i) continue;
      num *= (t - m);
      den *= (i - m);
    }
    w[i] = num / den;
  }
  return w;
}

// Returns false when z falls outside f's support.
bool interpolate(const Field& f, double z, double& value) {
  const Grid& g = f.grid();
  const Index n = g.size();
  const double h = g.spacing();
  const double xi = (z + g.half_length()) / h;
  const Vector& v = f.values();
  if (g.is_periodic()) {
    if (z < -g.half_length() || z >= g.half_length()) return false;
    const Index base = static_cast<Index>(std::floor(xi)) - (kInterpPoints / 2 - 1);
    const auto w = lagrange_weights(xi - static_cast<double>(base));
    double acc = 0.0;
    for (int i = 0; i < kInterpPoints; ++i) {
      Index idx = (base + i) % n;
      if (idx < 0) idx += n;
      acc += w[i] * v[idx];
    }
    value = acc;
    return true;
  }
  if (xi < 0.0 || xi > static_cast<double>(n - 1)) return false;
  const Index base = std::clamp<Index>(static_cast<Index>(std::floor(xi)) - (kInterpPoints / 2 - 1), 0,
                                       n - kInterpPoints);
  const auto w = lagrange_weights(xi - static_cast<double>(base));
  double acc = 0.0;
  for (int i = 0; i < kInterpPoints; ++i) acc += w[i] * v[base + i];
  value = acc;
  return true;
}

}  // namespace

double evaluate_at(const Field& f, double y) {
  double value = 0.0;
  return interpolate(f, y, value) ? value : 0.0;
}

ResampleResult resample(const Field& f, const Grid& target, double shift, double scale,
                        double max_outside_fraction) {
  if (!(scale > 0.0)) throw Error(ErrorCode::invalid_argument, "grid", "resample scale must be positive");
  const Index m = target.size();
  Vector out(m);
  Index outside = 0;
  for (Index k = 0; k < m; ++k) {
    double value = 0.0;
    if (interpolate(f, scale * target.point(k) + shift, value)) {
      out[k] = value;
    } else {
      out[k] = 0.0;
      ++outside;
    }
  }
  if (static_cast<double>(outside) > max_outside_fraction * static_cast<double>(m)) {
    throw Error(ErrorCode::coverage, "grid",
                std::to_string(outside) + " of " + std::to_string(m) + " target points fall outside the source support");
  }
  return {Field(target, std::move(out)), outside};
}

double parseval_sum(const Field& f) {
  const Grid& g = f.grid();
  if (!g.is_periodic()) throw Error(ErrorCode::invalid_argument, "grid", "parseval_sum needs a periodic grid");
  const Index n = g.size();
  ComplexVector spec;
  fft_for(n).forward(f.values(), spec);
  // Full spectrum energy from the half spectrum: interior modes appear twice.
  double s = std::norm(spec[0]) + std::norm(spec[n / 2]);
  for (Index j = 1; j < n / 2; ++j) s += 2.0 * std::norm(spec[j]);
  return g.spacing() * s / static_cast<double>(n);
}

namespace {

constexpr char kMagic[] = "GKDV1\n";

template <typename T>
void put_le(std::ostream& os, T value) {
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T get_le(std::istream& is, const std::filesystem::path& path) {
  std::array<char, sizeof(T)> bytes;
  if (!is.read(bytes.data(), sizeof(T)))
    throw Error(ErrorCode::integrity, "grid", "truncated snapshot " + path.string());
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace

void write_snapshot(const std::filesystem::path& path, const Field& f, double time) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(ErrorCode::integrity, "grid", "cannot open " + path.string() + " for writing");
  os.write(kMagic, 6);
  put_le<std::uint64_t>(os, static_cast<std::uint64_t>(f.size()));
  put_le<double>(os, f.grid().half_length());
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(f.grid().kind()));
  put_le<double>(os, time);
  for (Index k = 0; k < f.size(); ++k) put_le<double>(os, f[k]);
  if (!os) throw Error(ErrorCode::integrity, "grid", "write failed for " + path.string());
}

Snapshot read_snapshot(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(ErrorCode::integrity, "grid", "cannot open snapshot " + path.string());
  char magic[6];
  if (!is.read(magic, 6) || std::memcmp(magic, kMagic, 6) != 0)
    throw Error(ErrorCode::integrity, "grid", "bad magic in " + path.string());
  const auto n = get_le<std::uint64_t>(is, path);
  const auto half_length = get_le<double>(is, path);
  const auto kind = get_le<std::uint8_t>(is, path);
  const auto time = get_le<double>(is, path);
  if (kind > 1) throw Error(ErrorCode::integrity, "grid", "bad grid kind in " + path.string());
  if (n > (std::uint64_t{1} << 32)) throw Error(ErrorCode::integrity, "grid", "implausible size in " + path.string());
  Vector values(static_cast<Index>(n));
  for (Index k = 0; k < values.size(); ++k) values[k] = get_le<double>(is, path);
  if (is.peek() != std::char_traits<char>::eof())
    throw Error(ErrorCode::integrity, "grid", "trailing bytes in " + path.string());
  Grid g(static_cast<Index>(n), half_length, static_cast<GridKind>(kind));
  return {Field(g, std::move(values)), time};
}

}  // namespace gkdv

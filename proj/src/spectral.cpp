#include "gkdv/spectral.hpp"

#include <cstring>
#include <map>
#include <mutex>

#include <fftw3.h>

#include "gkdv/error.hpp"

namespace gkdv {

namespace {
std::mutex& planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace

struct RealFft::Impl {
  double* real = nullptr;
  fftw_complex* spec = nullptr;
  fftw_plan r2c = nullptr;
  fftw_plan c2r = nullptr;
};

RealFft::RealFft(Eigen::Index n) : n_(n), impl_(std::make_unique<Impl>()) {
  if (n < 2) throw Error(ErrorCode::invalid_argument, "spectral", "fft size must be >= 2");
  std::lock_guard<std::mutex> lock(planner_mutex());
  impl_->real = fftw_alloc_real(static_cast<size_t>(n));
  impl_->spec = fftw_alloc_complex(static_cast<size_t>(n / 2 + 1));
  impl_->r2c = fftw_plan_dft_r2c_1d(static_cast<int>(n), impl_->real, impl_->spec, FFTW_ESTIMATE);
  impl_->c2r = fftw_plan_dft_c2r_1d(static_cast<int>(n), impl_->spec, impl_->real, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(planner_mutex());
  fftw_destroy_plan(impl_->c2r);
  fftw_destroy_plan(impl_->r2c);
  fftw_free(impl_->spec);
  fftw_free(impl_->real);
}

void RealFft::forward(const Eigen::Ref<const Eigen::VectorXd>& in, ComplexVector& out) {
  std::memcpy(impl_->real, in.data(), sizeof(double) * static_cast<size_t>(n_));
  fftw_execute(impl_->r2c);
  out.resize(spectrum_size());
  std::memcpy(static_cast<void*>(out.data()), impl_->spec,
              sizeof(fftw_complex) * static_cast<size_t>(spectrum_size()));
}

void RealFft::inverse(const Eigen::Ref<const ComplexVector>& in, Eigen::VectorXd& out) {
  // c2r destroys its input, so it always works on the private buffer.
  std::memcpy(impl_->spec, in.data(), sizeof(fftw_complex) * static_cast<size_t>(spectrum_size()));
  fftw_execute(impl_->c2r);
  out.resize(n_);
  const double scale = 1.0 / static_cast<double>(n_);
  for (Eigen::Index k = 0; k < n_; ++k) out[k] = impl_->real[k] * scale;
}

RealFft& fft_for(Eigen::Index n) {
  thread_local std::map<Eigen::Index, std::unique_ptr<RealFft>> cache;
  auto& slot = cache[n];
  if (!slot) slot = std::make_unique<RealFft>(n);
  return *slot;
}

}  // namespace gkdv

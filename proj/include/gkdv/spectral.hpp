#pragma once

#include <complex>
#include <memory>

#include <Eigen/Core>

namespace gkdv {

using ComplexVector = Eigen::VectorXcd;

/// Real-to-complex / complex-to-real FFT pair of a fixed size.
///
/// Plans are built with FFTW_ESTIMATE so the transform is deterministic for a
/// given size. One instance is not safe to use from two threads at once; the
/// planner itself is serialized internally.
class RealFft {
 public:
  explicit RealFft(Eigen::Index n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  Eigen::Index size() const noexcept { return n_; }
  Eigen::Index spectrum_size() const noexcept { return n_ / 2 + 1; }

  /// Unnormalized forward transform, out has n/2+1 entries.
  void forward(const Eigen::Ref<const Eigen::VectorXd>& in, ComplexVector& out);
  /// Inverse transform including the 1/n normalization.
  void inverse(const Eigen::Ref<const ComplexVector>& in, Eigen::VectorXd& out);

 private:
  struct Impl;
  Eigen::Index n_;
  std::unique_ptr<Impl> impl_;
};

/// Thread-local cached transform for size n.
RealFft& fft_for(Eigen::Index n);

}  // namespace gkdv

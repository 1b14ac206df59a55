#include "risloc/fft.hpp"

#include <fftw3.h>

#include <map>
#include <mutex>
#include <tuple>

namespace risloc::fft {
namespace {

struct PlanCache {
  std::mutex mu;
  std::map<std::tuple<int, int, int>, fftw_plan> plans;

  ~PlanCache() {
    for (auto& [key, plan] : plans) fftw_destroy_plan(plan);
  }

  // rows == 0 denotes a 1-D plan of length cols.
  fftw_plan get(int rows, int cols, int sign) {
    std::lock_guard lock(mu);
    auto key = std::make_tuple(rows, cols, sign);
    if (auto it = plans.find(key); it != plans.end()) return it->second;
    const std::size_t total = static_cast<std::size_t>(rows == 0 ? cols : rows * cols);
    auto* buf = static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * total));
    const unsigned flags = FFTW_ESTIMATE | FFTW_UNALIGNED;
    // Column-major rows x cols is row-major cols x rows.
    fftw_plan plan = rows == 0 ? fftw_plan_dft_1d(cols, buf, buf, sign, flags)
                               : fftw_plan_dft_2d(cols, rows, buf, buf, sign, flags);
    fftw_free(buf);
    plans.emplace(key, plan);
    return plan;
  }
};

PlanCache& cache() {
  static PlanCache c;
  return c;
}

void run_1d(std::span<cplx> data, int sign) {
  if (data.empty()) return;
  fftw_plan plan = cache().get(0, static_cast<int>(data.size()), sign);
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan, p, p);
}

CVector fold(const CVector& x, int size) {
  CVector out = CVector::Zero(size);
  for (Eigen::Index i = 0; i < x.size(); ++i) out(i % size) += x(i);
  return out;
}

}  // namespace

void forward(std::span<cplx> data) { run_1d(data, FFTW_FORWARD); }
void backward(std::span<cplx> data) { run_1d(data, FFTW_BACKWARD); }

void backward_2d(std::span<cplx> data, int rows, int cols) {
  if (static_cast<std::size_t>(rows) * cols != data.size()) {
    throw ConfigError("backward_2d: buffer size does not match rows*cols");
  }
  fftw_plan plan = cache().get(rows, cols, FFTW_BACKWARD);
  auto* p = reinterpret_cast<fftw_complex*>(data.data());
  fftw_execute_dft(plan, p, p);
}

CVector padded_forward(const CVector& x, int size) {
  CVector buf = fold(x, size);
  forward({buf.data(), static_cast<std::size_t>(size)});
  return buf;
}

CVector padded_backward(const CVector& x, int size) {
  CVector buf = fold(x, size);
  backward({buf.data(), static_cast<std::size_t>(size)});
  return buf;
}

CMatrix apply_time_diagonal(const CVector& e, const CMatrix& X) {
  const Eigen::Index n = X.rows();
  if (e.size() != n) throw ConfigError("apply_time_diagonal: diagonal length mismatch");
  CMatrix out = X;
  const double scale = 1.0 / static_cast<double>(n);
  for (Eigen::Index col = 0; col < out.cols(); ++col) {
    std::span<cplx> column(out.col(col).data(), static_cast<std::size_t>(n));
    backward(column);
    for (Eigen::Index k = 0; k < n; ++k) column[k] *= e(k) * scale;
    forward(column);
  }
  return out;
}

}  // namespace risloc::fft

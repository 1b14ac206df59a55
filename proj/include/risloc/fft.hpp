#pragma once

#include <span>

#include "risloc/types.hpp"

namespace risloc::fft {

// Thin wrappers over FFTW. Plans are cached per size behind a mutex; execution
// uses the new-array interface and is safe to call from many threads at once.

/// In-place unnormalized forward transform: X[k] = sum_n x[n] exp(-j 2 pi k n / size).
void forward(std::span<cplx> data);
/// In-place unnormalized backward transform: x[n] = sum_k X[k] exp(+j 2 pi k n / size).
void backward(std::span<cplx> data);

/// In-place unnormalized 2-D backward transform of a column-major rows x cols array.
void backward_2d(std::span<cplx> data, int rows, int cols);

/// Zero-pads (or time-aliases, when longer) `x` to length `size` and runs the
/// forward transform. Equivalent to multiplying by the size x len(x) DFT matrix.
CVector padded_forward(const CVector& x, int size);
/// Same as padded_forward with the conjugate kernel (size x len IDFT matrix, unnormalized).
CVector padded_backward(const CVector& x, int size);

/// F * diag(e) * F^H * X for the unitary N-point DFT matrix F, applied per column.
CMatrix apply_time_diagonal(const CVector& e, const CMatrix& X);

}  // namespace risloc::fft

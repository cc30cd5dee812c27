// SPDX-License-Identifier: Apache-2.0
//
// Row-major dense kernels shared by the model forward and backward passes.
// Loop orders are fixed so results are bit-reproducible.
#pragma once

#include <cstddef>

namespace sparseattn::kernels {

// C(rows x cols) += A(rows x inner) * B(inner x cols)
inline void matmul_add(const double* a, const double* b, double* c, std::size_t rows, std::size_t inner,
                       std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    double* ci = c + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a[i * inner + k];
      const double* bk = b + k * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        ci[j] += aik * bk[j];
      }
    }
  }
}

// C(inner x cols) += A(rows x inner)^T * G(rows x cols)
inline void matmul_at_b_add(const double* a, const double* g, double* c, std::size_t rows, std::size_t inner,
                            std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = g + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double aik = a[i * inner + k];
      double* ck = c + k * cols;
      for (std::size_t j = 0; j < cols; ++j) {
        ck[j] += aik * gi[j];
      }
    }
  }
}

// C(rows x inner) += G(rows x cols) * W(inner x cols)^T
inline void matmul_a_bt_add(const double* g, const double* w, double* c, std::size_t rows, std::size_t cols,
                            std::size_t inner) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* gi = g + i * cols;
    for (std::size_t k = 0; k < inner; ++k) {
      const double* wk = w + k * cols;
      double acc = 0.0;
      for (std::size_t j = 0; j < cols; ++j) {
        acc += gi[j] * wk[j];
      }
      c[i * inner + k] += acc;
    }
  }
}

// out(rows x cols) += bias broadcast over rows
inline void add_bias(const double* bias, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      out[i * cols + j] += bias[j];
    }
  }
}

// bias_grad(cols) += column sums of g(rows x cols)
inline void sum_rows_add(const double* g, double* bias_grad, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) {
      bias_grad[j] += g[i * cols + j];
    }
  }
}

}  // namespace sparseattn::kernels

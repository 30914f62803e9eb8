#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "tosopt/kernels.hpp"
#include "tosopt/rng.hpp"

// OpenMP variants. Parallelization is over independent output elements
// (rows, columns, or index ranges) so that every element is accumulated in
// the same order as the serial reference. Scalar reductions use a fixed
// 64-chunk partial-sum layout combined serially, which keeps the result
// independent of the thread count.

namespace tosopt::kernels::omp {

namespace {
constexpr std::size_t kReduceChunks = 64;

template <typename PerChunk>
double chunked_reduce(std::size_t n, PerChunk&& per_chunk) {
  if (n == 0) return 0.0;
  const std::size_t chunks = std::min(kReduceChunks, n);
  const std::size_t step = (n + chunks - 1) / chunks;
  double partial[kReduceChunks] = {0.0};
#pragma omp parallel for schedule(static)
  for (long long c = 0; c < static_cast<long long>(chunks); ++c) {
    const std::size_t begin = static_cast<std::size_t>(c) * step;
    const std::size_t end = std::min(n, begin + step);
    partial[c] = per_chunk(begin, end);
  }
  double total = 0.0;
  for (std::size_t c = 0; c < chunks; ++c) total += partial[c];
  return total;
}
}  // namespace

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(m); ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void add_bias_rows(double* y, const double* bias, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(rows); ++i) {
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += bias[j];
  }
}

void relu_forward(double* x, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    if (x[i] < 0.0) x[i] = 0.0;
  }
}

void relu_backward(const double* activation, double* grad, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    if (activation[i] <= 0.0) grad[i] = 0.0;
  }
}

void sigmoid(const double* logits, double* probs, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    double s = logits[i];
    probs[i] = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                        : std::exp(s) / (1.0 + std::exp(s));
  }
}

double bce_loss_sum(const double* logits, const double* targets, std::size_t n) {
  return chunked_reduce(n, [&](std::size_t begin, std::size_t end) {
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      double s = logits[i];
      acc += std::max(s, 0.0) + std::log1p(std::exp(-std::fabs(s))) - targets[i] * s;
    }
    return acc;
  });
}

void bce_logit_grad(const double* logits, const double* targets, double* dlogits,
                    std::size_t n) {
  sigmoid(logits, dlogits, n);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) dlogits[i] -= targets[i];
}

void col_sums(const double* a, double* out, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
  for (long long j = 0; j < static_cast<long long>(cols); ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += a[i * cols + j];
    out[j] = acc;
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  return chunked_reduce(n, [&](std::size_t begin, std::size_t end) {
    double acc = 0.0;
    for (std::size_t i = begin; i < end; ++i) acc += a[i] * b[i];
    return acc;
  });
}

double squared_norm(const double* a, std::size_t n) { return dot(a, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) y[i] += alpha * x[i];
}

void scale(double alpha, double* x, std::size_t n) {
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) x[i] *= alpha;
}

void dropout_apply(double* a, std::size_t n, double rate, std::uint64_t seed,
                   std::uint64_t salt) {
  if (rate <= 0.0) return;
  const double keep_scale = 1.0 / (1.0 - rate);
  const std::uint64_t stream = mix_seed(seed, salt);
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    double u = static_cast<double>(
                   hash64(stream ^ (static_cast<std::uint64_t>(i) * 0x9e3779b97f4a7c15ULL)) >>
                   11) *
               0x1.0p-53;
    a[i] = u < rate ? 0.0 : a[i] * keep_scale;
  }
}

void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, long long t) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace tosopt::kernels::omp

#include <cmath>

#include "tosopt/kernels.hpp"
#include "tosopt/rng.hpp"

namespace tosopt::kernels::serial {

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

void add_bias_rows(double* y, const double* bias, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) y[i * cols + j] += bias[j];
  }
}

void relu_forward(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] < 0.0) x[i] = 0.0;
  }
}

void relu_backward(const double* activation, double* grad, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (activation[i] <= 0.0) grad[i] = 0.0;
  }
}

void sigmoid(const double* logits, double* probs, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    double s = logits[i];
    probs[i] = s >= 0.0 ? 1.0 / (1.0 + std::exp(-s))
                        : std::exp(s) / (1.0 + std::exp(s));
  }
}

double bce_loss_sum(const double* logits, const double* targets, std::size_t n) {
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double s = logits[i];
    // log(1 + exp(s)) - c*s, rewritten to avoid overflow for |s| large.
    total += std::max(s, 0.0) + std::log1p(std::exp(-std::fabs(s))) - targets[i] * s;
  }
  return total;
}

void bce_logit_grad(const double* logits, const double* targets, double* dlogits,
                    std::size_t n) {
  sigmoid(logits, dlogits, n);
  for (std::size_t i = 0; i < n; ++i) dlogits[i] -= targets[i];
}

void col_sums(const double* a, double* out, std::size_t rows, std::size_t cols) {
  for (std::size_t j = 0; j < cols; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < rows; ++i) acc += a[i * cols + j];
    out[j] = acc;
  }
}

double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

double squared_norm(const double* a, std::size_t n) { return dot(a, a, n); }

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void scale(double alpha, double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= alpha;
}

void dropout_apply(double* a, std::size_t n, double rate, std::uint64_t seed,
                   std::uint64_t salt) {
  if (rate <= 0.0) return;
  const double keep_scale = 1.0 / (1.0 - rate);
  const std::uint64_t stream = mix_seed(seed, salt);
  for (std::size_t i = 0; i < n; ++i) {
    double u = static_cast<double>(hash64(stream ^ (i * 0x9e3779b97f4a7c15ULL)) >> 11) *
               0x1.0p-53;
    a[i] = u < rate ? 0.0 : a[i] * keep_scale;
  }
}

void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, long long t) {
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
    const double m_hat = m[i] / bc1;
    const double v_hat = v[i] / bc2;
    w[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
  }
}

}  // namespace tosopt::kernels::serial

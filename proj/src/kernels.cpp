#include "tosopt/kernels.hpp"

#include <atomic>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace tosopt::kernels {

// Definitions in kernels_omp.cpp.
namespace omp {
void gemm_nn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_nt(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void gemm_tn(const double*, const double*, double*, std::size_t, std::size_t, std::size_t);
void add_bias_rows(double*, const double*, std::size_t, std::size_t);
void relu_forward(double*, std::size_t);
void relu_backward(const double*, double*, std::size_t);
void sigmoid(const double*, double*, std::size_t);
double bce_loss_sum(const double*, const double*, std::size_t);
void bce_logit_grad(const double*, const double*, double*, std::size_t);
void col_sums(const double*, double*, std::size_t, std::size_t);
double dot(const double*, const double*, std::size_t);
double squared_norm(const double*, std::size_t);
void axpy(double, const double*, double*, std::size_t);
void scale(double, double*, std::size_t);
void dropout_apply(double*, std::size_t, double, std::uint64_t, std::uint64_t);
void adam_step(double*, double*, double*, const double*, std::size_t, double, double,
               double, double, long long);
}  // namespace omp

namespace {
std::atomic<Backend> g_backend{openmp_available() ? Backend::OpenMP : Backend::Serial};

bool use_omp() { return g_backend.load() == Backend::OpenMP && openmp_available(); }
}  // namespace

bool openmp_available() {
#ifdef _OPENMP
  return true;
#else
  return false;
#endif
}

Backend active_backend() { return use_omp() ? Backend::OpenMP : Backend::Serial; }

void set_backend(Backend backend) { g_backend.store(backend); }

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

void set_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  use_omp() ? omp::gemm_nn(a, b, c, m, k, n) : serial::gemm_nn(a, b, c, m, k, n);
}

void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  use_omp() ? omp::gemm_nt(a, b, c, m, k, n) : serial::gemm_nt(a, b, c, m, k, n);
}

void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n) {
  use_omp() ? omp::gemm_tn(a, b, c, m, k, n) : serial::gemm_tn(a, b, c, m, k, n);
}

void add_bias_rows(double* y, const double* bias, std::size_t rows, std::size_t cols) {
  use_omp() ? omp::add_bias_rows(y, bias, rows, cols)
            : serial::add_bias_rows(y, bias, rows, cols);
}

void relu_forward(double* x, std::size_t n) {
  use_omp() ? omp::relu_forward(x, n) : serial::relu_forward(x, n);
}

void relu_backward(const double* activation, double* grad, std::size_t n) {
  use_omp() ? omp::relu_backward(activation, grad, n)
            : serial::relu_backward(activation, grad, n);
}

void sigmoid(const double* logits, double* probs, std::size_t n) {
  use_omp() ? omp::sigmoid(logits, probs, n) : serial::sigmoid(logits, probs, n);
}

double bce_loss_sum(const double* logits, const double* targets, std::size_t n) {
  return use_omp() ? omp::bce_loss_sum(logits, targets, n)
                   : serial::bce_loss_sum(logits, targets, n);
}

void bce_logit_grad(const double* logits, const double* targets, double* dlogits,
                    std::size_t n) {
  use_omp() ? omp::bce_logit_grad(logits, targets, dlogits, n)
            : serial::bce_logit_grad(logits, targets, dlogits, n);
}

void col_sums(const double* a, double* out, std::size_t rows, std::size_t cols) {
  use_omp() ? omp::col_sums(a, out, rows, cols) : serial::col_sums(a, out, rows, cols);
}

double dot(const double* a, const double* b, std::size_t n) {
  return use_omp() ? omp::dot(a, b, n) : serial::dot(a, b, n);
}

double squared_norm(const double* a, std::size_t n) {
  return use_omp() ? omp::squared_norm(a, n) : serial::squared_norm(a, n);
}

void axpy(double alpha, const double* x, double* y, std::size_t n) {
  use_omp() ? omp::axpy(alpha, x, y, n) : serial::axpy(alpha, x, y, n);
}

void scale(double alpha, double* x, std::size_t n) {
  use_omp() ? omp::scale(alpha, x, n) : serial::scale(alpha, x, n);
}

void dropout_apply(double* a, std::size_t n, double rate, std::uint64_t seed,
                   std::uint64_t salt) {
  use_omp() ? omp::dropout_apply(a, n, rate, seed, salt)
            : serial::dropout_apply(a, n, rate, seed, salt);
}

void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, long long t) {
  use_omp() ? omp::adam_step(w, m, v, g, n, lr, beta1, beta2, eps, t)
            : serial::adam_step(w, m, v, g, n, lr, beta1, beta2, eps, t);
}

}  // namespace tosopt::kernels

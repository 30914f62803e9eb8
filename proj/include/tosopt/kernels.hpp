#pragma once

#include <cstddef>
#include <cstdint>

namespace tosopt::kernels {

enum class Backend { Serial, OpenMP };

Backend active_backend();
void set_backend(Backend backend);
bool openmp_available();
int max_threads();
void set_threads(int n);

/// Naive reference implementations. Kept as the oracle the parallel kernels
/// are tested and benchmarked against; also the fallback on builds without
/// OpenMP.
namespace serial {

// C(m x n) = A(m x k) * B(k x n), row major.
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
// C(m x n) = A(m x k) * B(n x k)^T.
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
// C(m x n) = A(k x m)^T * B(k x n).
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);

void add_bias_rows(double* y, const double* bias, std::size_t rows, std::size_t cols);
void relu_forward(double* x, std::size_t n);
// grad[i] = 0 where activation[i] <= 0.
void relu_backward(const double* activation, double* grad, std::size_t n);
void sigmoid(const double* logits, double* probs, std::size_t n);

// Sum of elementwise binary cross-entropy between sigmoid(logit) and target,
// computed in the numerically stable softplus form.
double bce_loss_sum(const double* logits, const double* targets, std::size_t n);
// dlogits[i] = sigmoid(logits[i]) - targets[i].
void bce_logit_grad(const double* logits, const double* targets, double* dlogits,
                    std::size_t n);

void col_sums(const double* a, double* out, std::size_t rows, std::size_t cols);
double dot(const double* a, const double* b, std::size_t n);
double squared_norm(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);

// Inverted dropout driven by a counter-based hash of (seed, salt, index);
// identical output for any thread count.
void dropout_apply(double* a, std::size_t n, double rate, std::uint64_t seed,
                   std::uint64_t salt);

void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, long long t);

}  // namespace serial

// Dispatched entry points: run the OpenMP variant when the active backend is
// OpenMP and the build has it, otherwise the serial reference. Elementwise
// ops, the gemms, and col_sums are bitwise identical across backends and
// thread counts; the reductions (dot, squared_norm, bce_loss_sum) use a
// fixed 64-chunk combine order in the parallel variant, so they are
// deterministic for any thread count but may differ from the serial
// left-to-right order in the last bits.
void gemm_nn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_nt(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
void gemm_tn(const double* a, const double* b, double* c,
             std::size_t m, std::size_t k, std::size_t n);
void add_bias_rows(double* y, const double* bias, std::size_t rows, std::size_t cols);
void relu_forward(double* x, std::size_t n);
void relu_backward(const double* activation, double* grad, std::size_t n);
void sigmoid(const double* logits, double* probs, std::size_t n);
double bce_loss_sum(const double* logits, const double* targets, std::size_t n);
void bce_logit_grad(const double* logits, const double* targets, double* dlogits,
                    std::size_t n);
void col_sums(const double* a, double* out, std::size_t rows, std::size_t cols);
double dot(const double* a, const double* b, std::size_t n);
double squared_norm(const double* a, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* x, std::size_t n);
void dropout_apply(double* a, std::size_t n, double rate, std::uint64_t seed,
                   std::uint64_t salt);
void adam_step(double* w, double* m, double* v, const double* g, std::size_t n,
               double lr, double beta1, double beta2, double eps, long long t);

}  // namespace tosopt::kernels

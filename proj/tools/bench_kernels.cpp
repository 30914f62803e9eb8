// Times the serial reference kernels against the OpenMP variants at the
// shapes the proxy trainer actually runs (feature dim ~770, hidden 512).
#include <chrono>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "tosopt/kernels.hpp"
#include "tosopt/rng.hpp"

using namespace tosopt;

namespace {

std::vector<double> random_matrix(std::size_t n, std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<double> m(n);
  for (auto& v : m) v = 2.0 * rng.next_unit() - 1.0;
  return m;
}

double time_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm up
  double best = 1e300;
  for (int r = 0; r < repeats; ++r) {
    auto start = std::chrono::steady_clock::now();
    fn();
    auto end = std::chrono::steady_clock::now();
    best = std::min(best, std::chrono::duration<double, std::milli>(end - start).count());
  }
  return best;
}

void row(const std::string& name, const std::function<void()>& serial_fn,
         const std::function<void()>& omp_fn) {
  double ts = time_ms(serial_fn, 3);
  double tp = time_ms(omp_fn, 3);
  std::printf("%-34s %10.2f %10.2f %9.2fx\n", name.c_str(), ts, tp, ts / tp);
}

}  // namespace

int main() {
  const std::size_t batch = 512;
  const std::size_t features = 770;  // 384 + 384 + 2
  const std::size_t hidden = 512;
  const std::size_t big = 4u << 20;

  std::printf("threads: %d  (openmp %s)\n\n", kernels::max_threads(),
              kernels::openmp_available() ? "on" : "off");
  std::printf("%-34s %10s %10s %10s\n", "kernel", "serial ms", "omp ms", "speedup");

  auto x = random_matrix(batch * features, 11);
  auto w = random_matrix(hidden * features, 12);
  std::vector<double> y(batch * hidden);
  row("gemm_nt 512x770 * (512x770)^T",
      [&] { kernels::serial::gemm_nt(x.data(), w.data(), y.data(), batch, features, hidden); },
      [&] {
        kernels::set_backend(kernels::Backend::OpenMP);
        kernels::gemm_nt(x.data(), w.data(), y.data(), batch, features, hidden);
      });

  auto delta = random_matrix(batch * hidden, 13);
  std::vector<double> dw(hidden * features);
  row("gemm_tn (512x512)^T * 512x770",
      [&] {
        kernels::serial::gemm_tn(delta.data(), x.data(), dw.data(), hidden, batch, features);
      },
      [&] {
        kernels::set_backend(kernels::Backend::OpenMP);
        kernels::gemm_tn(delta.data(), x.data(), dw.data(), hidden, batch, features);
      });

  auto logits = random_matrix(big, 14);
  auto targets = random_matrix(big, 15);
  for (auto& t : targets) t = t > 0.0 ? 1.0 : 0.0;
  volatile double sink = 0.0;
  row("bce_loss_sum 4M",
      [&] { sink = kernels::serial::bce_loss_sum(logits.data(), targets.data(), big); },
      [&] {
        kernels::set_backend(kernels::Backend::OpenMP);
        sink = kernels::bce_loss_sum(logits.data(), targets.data(), big);
      });

  auto act = random_matrix(big, 16);
  row("dropout_apply 4M",
      [&] { kernels::serial::dropout_apply(act.data(), big, 0.3, 1, 2); },
      [&] {
        kernels::set_backend(kernels::Backend::OpenMP);
        kernels::dropout_apply(act.data(), big, 0.3, 1, 2);
      });

  (void)sink;
  return 0;
}

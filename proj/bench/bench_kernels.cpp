// Times the serial reference kernels against the OpenMP ones on network-sized
// inputs and checks that both produce identical results.
#include <omp.h>

#include <chrono>
#include <cstdio>
#include <functional>
#include <tuple>

#include <CLI11.hpp>

#include "ttcloc/kernels.hpp"
#include "ttcloc/random.hpp"

namespace {

using namespace ttcloc;

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.values()) v = rng.normal();
  return m;
}

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count() / reps;
}

void report(const char* name, double serial_ms, double parallel_ms, bool same) {
  std::printf("%-16s serial %9.3f ms   parallel %9.3f ms   speedup %5.2fx   %s\n", name, serial_ms, parallel_ms,
              serial_ms / parallel_ms, same ? "identical" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Serial vs OpenMP kernel benchmark"};
  std::size_t T = 320, D = 1024, H = 2048, C = 20;
  int reps = 3, threads = 0;
  app.add_option("-T", T, "Snippets");
  app.add_option("-D", D, "Feature dimension");
  app.add_option("-H", H, "Hidden units");
  app.add_option("-C", C, "Classes");
  app.add_option("--reps", reps, "Timed repetitions");
  app.add_option("--threads", threads, "OpenMP threads (0 = runtime default)");
  CLI11_PARSE(app, argc, argv);
  if (threads > 0) omp_set_num_threads(threads);

  Rng rng(42);
  const Matrix x = random_matrix(T, D, rng);
  const Matrix w1 = random_matrix(D, H, rng);
  const Matrix h = random_matrix(T, H, rng);
  const Matrix w2 = random_matrix(H, C + 1, rng);
  const Matrix d_out = random_matrix(T, H, rng);
  kernels::ConvKernel conv;
  for (auto& tap : conv) tap = random_matrix(H, H, rng);
  const Vector bias(H, 0.5);

  std::printf("T=%zu D=%zu H=%zu C=%zu threads=%d\n", T, D, H, C, omp_get_max_threads());
  bool all_same = true;
  auto bench = [&](const char* name, auto serial_fn, auto parallel_fn) {
    decltype(serial_fn()) a, b;
    const double s = time_ms([&] { a = serial_fn(); }, reps);
    const double p = time_ms([&] { b = parallel_fn(); }, reps);
    const bool same = a == b;
    all_same = all_same && same;
    report(name, s, p, same);
  };

  bench("affine", [&] { return kernels::serial::affine(x, w1, bias); },
        [&] { return kernels::parallel::affine(x, w1, bias); });
  bench("matmul_tn", [&] { return kernels::serial::matmul_tn(x, h); },
        [&] { return kernels::parallel::matmul_tn(x, h); });
  bench("matmul_nt", [&] { return kernels::serial::matmul_nt(h, w1); },
        [&] { return kernels::parallel::matmul_nt(h, w1); });
  bench("conv3", [&] { return kernels::serial::conv3(h, conv, bias); },
        [&] { return kernels::parallel::conv3(h, conv, bias); });
  bench("conv3_backward",
        [&] {
          auto g = kernels::serial::conv3_backward(h, conv, d_out);
          return std::make_tuple(g.d_input, g.d_kernel, g.d_bias);
        },
        [&] {
          auto g = kernels::parallel::conv3_backward(h, conv, d_out);
          return std::make_tuple(g.d_input, g.d_kernel, g.d_bias);
        });
  return all_same ? 0 : 1;
}

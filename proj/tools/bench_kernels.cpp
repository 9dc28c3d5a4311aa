// Compares the OpenMP kernels against their serial reference variants and
// verifies bitwise agreement at each size.
#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#include "kalm/kernels.hpp"
#include "kalm/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace kalm;
namespace k = kalm::kernels;

namespace {

double now() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

template <typename Fn>
double time_best_of(int reps, const Fn& fn) {
  double best = 1e30;
  for (int r = 0; r < reps; ++r) {
    double t0 = now();
    fn();
    best = std::min(best, now() - t0);
  }
  return best;
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("threads: %d\n", omp_get_max_threads());
#else
  std::printf("threads: 1 (built without OpenMP)\n");
#endif
  std::printf("%-28s %10s %10s %8s %8s\n", "kernel", "serial_ms", "omp_ms", "speedup",
              "bitwise");

  Rng rng(1234);
  const int reps = 20;
  for (auto [m, n] : {std::pair<size_t, size_t>{128, 128},
                      {512, 512},
                      {1150, 400},
                      {4600, 1150},
                      {50000, 400}}) {
    Tensor W = Tensor::zeros(m, n);
    for (size_t i = 0; i < W.size(); ++i) W[i] = rng.uniform(-1.0, 1.0);
    std::vector<double> x(n), gy(m), y1(m), y2(m), gx1(n, 0.0), gx2(n, 0.0);
    for (double& v : x) v = rng.uniform(-1.0, 1.0);
    for (double& v : gy) v = rng.uniform(-1.0, 1.0);

    char label[64];

    std::snprintf(label, sizeof(label), "matvec %zux%zu", m, n);
    double ts = time_best_of(reps, [&] { k::matvec_ref(W, x.data(), y1.data()); });
    double tp = time_best_of(reps, [&] { k::matvec(W, x.data(), y2.data()); });
    bool same = std::memcmp(y1.data(), y2.data(), m * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2f %8s\n", label, ts * 1e3, tp * 1e3, ts / tp,
                same ? "yes" : "NO");

    std::snprintf(label, sizeof(label), "matvec_transpose %zux%zu", m, n);
    ts = time_best_of(reps, [&] { k::matvec_transpose_accum_ref(W, gy.data(), gx1.data()); });
    tp = time_best_of(reps, [&] { k::matvec_transpose_accum(W, gy.data(), gx2.data()); });
    same = std::memcmp(gx1.data(), gx2.data(), n * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2f %8s\n", label, ts * 1e3, tp * 1e3, ts / tp,
                same ? "yes" : "NO");

    Tensor d1 = Tensor::zeros(m, n), d2 = Tensor::zeros(m, n);
    std::snprintf(label, sizeof(label), "outer_accum %zux%zu", m, n);
    ts = time_best_of(reps, [&] { k::outer_accum_ref(d1, gy.data(), x.data()); });
    tp = time_best_of(reps, [&] { k::outer_accum(d2, gy.data(), x.data()); });
    same = std::memcmp(d1.data(), d2.data(), d1.size() * sizeof(double)) == 0;
    std::printf("%-28s %10.3f %10.3f %8.2f %8s\n", label, ts * 1e3, tp * 1e3, ts / tp,
                same ? "yes" : "NO");
  }
  return 0;
}

// Microbenchmarks for the kernels that dominate training time. Shapes mirror
// CIFAR-scale batches; run build/benchmarks/advlab_bench.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "advlab/attack.hpp"
#include "advlab/graph.hpp"
#include "advlab/model.hpp"
#include "advlab/rng.hpp"
#include "advlab/ss_task.hpp"
#include "advlab/tensor.hpp"

namespace {

using advlab::Graph;
using advlab::Tensor;

std::vector<float> pixels(std::size_t n, std::uint32_t seed) {
  std::mt19937 rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = advlab::uniform_unit(rng);
  return v;
}

advlab::TwoHeadModel bench_model(int batch_unused, float width) {
  (void)batch_unused;
  advlab::ArchConfig arch;
  arch.width = width;
  return advlab::build_model(arch, 1);
}

void BM_Conv2dForward(benchmark::State& state) {
  const int n = 32, ci = 3, co = 16, hw = 32;
  Tensor x({n, ci, hw, hw}, pixels(static_cast<std::size_t>(n) * ci * hw * hw, 1));
  Tensor w({co, ci, 3, 3}, pixels(static_cast<std::size_t>(co) * ci * 9, 2));
  for (auto _ : state) {
    Graph g(Graph::Scope::All, false);
    benchmark::DoNotOptimize(g.conv2d(x, w, 1, 1).data());
  }
}
BENCHMARK(BM_Conv2dForward)->Unit(benchmark::kMillisecond);

void BM_Matmul(benchmark::State& state) {
  const int n = 256, k = 512, m = 10;
  Tensor a({n, k}, pixels(static_cast<std::size_t>(n) * k, 3));
  Tensor b({k, m}, pixels(static_cast<std::size_t>(k) * m, 4));
  for (auto _ : state) {
    Graph g(Graph::Scope::All, false);
    benchmark::DoNotOptimize(g.matmul(a, b).data());
  }
}
BENCHMARK(BM_Matmul);

void BM_TinyCnnForward(benchmark::State& state) {
  auto model = bench_model(32, 1.0f);
  model.set_training(false);
  const int n = 32;
  Tensor x({n, 3, 32, 32}, pixels(static_cast<std::size_t>(n) * 3 * 32 * 32, 5));
  for (auto _ : state) {
    Graph g(Graph::Scope::All, false);
    benchmark::DoNotOptimize(model.predict_sup(g, x).data());
  }
}
BENCHMARK(BM_TinyCnnForward)->Unit(benchmark::kMillisecond);

void BM_TinyCnnForwardBackward(benchmark::State& state) {
  auto model = bench_model(32, 1.0f);
  model.set_training(true);
  const int n = 32;
  Tensor x({n, 3, 32, 32}, pixels(static_cast<std::size_t>(n) * 3 * 32 * 32, 6));
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % 10;
  for (auto _ : state) {
    Graph g;
    Tensor loss = g.cross_entropy_mean(model.predict_sup(g, x), y);
    g.backward(loss);
    benchmark::DoNotOptimize(loss.item());
  }
}
BENCHMARK(BM_TinyCnnForwardBackward)->Unit(benchmark::kMillisecond);

void BM_PgdStepLinf(benchmark::State& state) {
  const int n = 128;
  const std::size_t numel = static_cast<std::size_t>(n) * 3 * 32 * 32;
  Tensor x0({n, 3, 32, 32}, pixels(numel, 7));
  Tensor x({n, 3, 32, 32}, pixels(numel, 8));
  std::vector<float> grad = pixels(numel, 9);
  for (auto& gv : grad) gv -= 0.5f;
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        advlab::pgd_step(x, grad, 2.0f / 255.0f, advlab::Norm::Linf, x0, 8.0f / 255.0f).data());
  }
}
BENCHMARK(BM_PgdStepLinf);

void BM_RotateBatch(benchmark::State& state) {
  const int n = 128;
  auto imgs = pixels(static_cast<std::size_t>(n) * 3 * 32 * 32, 10);
  for (auto _ : state) {
    auto rng = advlab::make_rng(1, advlab::RngStream::SsTransform);
    benchmark::DoNotOptimize(advlab::rotate_batch(imgs, n, 3, 32, 32, rng).images.data());
  }
}
BENCHMARK(BM_RotateBatch);

void BM_JigsawBatch(benchmark::State& state) {
  const int n = 128;
  auto imgs = pixels(static_cast<std::size_t>(n) * 3 * 32 * 32, 11);
  const auto task = advlab::make_jigsaw_task(2, 24, 0);
  for (auto _ : state) {
    auto rng = advlab::make_rng(2, advlab::RngStream::SsTransform);
    benchmark::DoNotOptimize(
        advlab::jigsaw_batch(imgs, n, 3, 32, 32, task, rng).images.data());
  }
}
BENCHMARK(BM_JigsawBatch);

void BM_CrossEntropyBackward(benchmark::State& state) {
  const int n = 256, c = 10;
  std::vector<float> lv = pixels(static_cast<std::size_t>(n) * c, 12);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = i % c;
  for (auto _ : state) {
    Graph g;
    Tensor logits({n, c}, lv);
    logits.set_requires_grad();
    Tensor loss = g.cross_entropy_mean(logits, y);
    g.backward(loss);
    benchmark::DoNotOptimize(logits.grad().data());
  }
}
BENCHMARK(BM_CrossEntropyBackward);

}  // namespace

BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include "tacvit/conv.hpp"
#include "tacvit/rng.hpp"
#include "tacvit/simulator.hpp"
#include "tacvit/tensor.hpp"

using namespace tacvit;

static Tensor<float> rand_tensor(Rng& rng, Shape shape) {
  Tensor<float> t = Tensor<float>::zeros(std::move(shape), true);
  for (auto& v : t.mutable_value()) v = float(rng.normal() * 0.1);
  return t;
}

static void BM_matmul(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(1);
  auto a = rand_tensor(rng, {n, n});
  auto b = rand_tensor(rng, {n, n});
  for (auto _ : state) {
    Tape<float> tape;
    auto c = matmul(tape, a, b);
    benchmark::DoNotOptimize(c.value().data());
  }
  state.SetItemsProcessed(state.iterations() * 2 * n * n * n);
}
BENCHMARK(BM_matmul)->Arg(64)->Arg(256)->Arg(512);

static void BM_matmul_backward(benchmark::State& state) {
  const int64_t n = state.range(0);
  Rng rng(2);
  auto a = rand_tensor(rng, {n, n});
  auto b = rand_tensor(rng, {n, n});
  for (auto _ : state) {
    a.clear_grad();
    b.clear_grad();
    Tape<float> tape;
    auto loss = sum_all(tape, matmul(tape, a, b));
    tape.backward(loss);
    benchmark::DoNotOptimize(a.grad().data());
  }
}
BENCHMARK(BM_matmul_backward)->Arg(64)->Arg(256);

static void BM_conv2d(benchmark::State& state) {
  const int64_t hw = state.range(0);
  Rng rng(3);
  auto x = rand_tensor(rng, {8, hw, hw});
  auto k = rand_tensor(rng, {16, 8, 3, 3});
  for (auto _ : state) {
    Tape<float> tape;
    auto y = conv2d(tape, x, k, 1, 1);
    benchmark::DoNotOptimize(y.value().data());
  }
}
BENCHMARK(BM_conv2d)->Arg(32)->Arg(64);

static void BM_render_frame(benchmark::State& state) {
  auto profile = default_profiles()[0];
  ContactLabel c;
  c.x = 0.4;
  c.y = -0.7;
  c.z = 2.1;
  c.rx = 4.0;
  c.ry = -6.0;
  force_model(c, profile);
  for (auto _ : state) {
    auto img = render(c, profile, 64);
    benchmark::DoNotOptimize(img.value().data());
  }
}
BENCHMARK(BM_render_frame);

BENCHMARK_MAIN();

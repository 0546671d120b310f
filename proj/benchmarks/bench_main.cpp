#include <benchmark/benchmark.h>
#include <torch/torch.h>

#include "deffiller/autoencoder.hpp"
#include "deffiller/generator.hpp"
#include "deffiller/metrics.hpp"
#include "deffiller/random.hpp"

using namespace deffiller;

namespace {

metrics::SaliencyEval random_eval(int size, std::uint64_t seed) {
  auto rng = make_generator(seed);
  const auto pred = torch::rand({size * size}, rng, torch::kFloat64);
  const auto gt = (torch::rand({size * size}, rng, torch::kFloat64) < 0.2).to(torch::kUInt8);
  std::vector<double> p(pred.data_ptr<double>(), pred.data_ptr<double>() + pred.numel());
  std::vector<std::uint8_t> g(gt.data_ptr<std::uint8_t>(), gt.data_ptr<std::uint8_t>() + gt.numel());
  g[0] = 1;
  return metrics::SaliencyEval(std::move(p), std::move(g), size, size);
}

void BM_SMeasure(benchmark::State& state) {
  const auto eval = random_eval(static_cast<int>(state.range(0)), 1);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::s_measure(eval));
}
BENCHMARK(BM_SMeasure)->Arg(64)->Arg(256);

void BM_FMeasureMax(benchmark::State& state) {
  const auto eval = random_eval(static_cast<int>(state.range(0)), 2);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::f_measure_max(eval));
}
BENCHMARK(BM_FMeasureMax)->Arg(64)->Arg(256);

void BM_EMeasureMax(benchmark::State& state) {
  const auto eval = random_eval(static_cast<int>(state.range(0)), 3);
  for (auto _ : state) benchmark::DoNotOptimize(metrics::e_measure_max(eval));
}
BENCHMARK(BM_EMeasureMax)->Arg(64)->Arg(256);

void BM_Fid(benchmark::State& state) {
  const auto dim = state.range(0);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Random(512, dim);
  const Eigen::MatrixXd b = Eigen::MatrixXd::Random(512, dim) * 1.5;
  for (auto _ : state) benchmark::DoNotOptimize(metrics::fid({a, "bench"}, {b, "bench"}));
}
BENCHMARK(BM_Fid)->Arg(64)->Arg(256);

void BM_DenoiserForward(benchmark::State& state) {
  torch::NoGradGuard no_grad;
  auto generator = make_generator_state(GeneratorConfig{}, make_autoencoder(AutoencoderConfig{}, 0));
  auto& model = generator.model;
  model->eval();
  const auto n = state.range(0);
  auto rng = make_generator(4);
  const auto masks = (torch::rand({n, 64, 64}, rng) < 0.1).to(torch::kFloat32);
  const auto one_hot = model->condition_map(masks, torch::zeros({n}, torch::kInt64));
  const auto layout = model->mask_encoder->forward(one_hot);
  const auto z_in = model->network_input(one_hot, torch::randn({n, 4, 8, 8}, rng));
  const auto prompts = model->null_prompt_batch(n);
  const auto t = torch::full({n}, 100, torch::kInt64);
  for (auto _ : state) benchmark::DoNotOptimize(model->predict_noise(z_in, prompts, layout, t));
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(8)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();

#include <benchmark/benchmark.h>

#include <random>

#include "clpf/flows/flow.hpp"
#include "clpf/model/latent_sde.hpp"
#include "clpf/model/model.hpp"
#include "clpf/processes/datasets.hpp"

using namespace clpf;
using ad::Tensor;

namespace {

model::ModelConfig bench_config(const std::string& flow) {
  model::ModelConfig c;
  c.variant = model::Variant::kClpf;
  c.data_dim = 1;
  c.latent_dim = 2;
  c.em_step = 0.05;
  c.time_scale = 1.0 / 30.0;
  c.flow.type = flow;
  c.flow.blocks = 3;
  c.flow.zero_init = false;
  return c;
}

TimeSeries gbm_series() {
  DatasetSpec spec;
  spec.process = "gbm";
  spec.n_sequences = 1;
  spec.horizon = 10.0;
  spec.seed = 1;
  return generate_dataset(spec).series.front();
}

void BM_MatMul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 gen(1);
  std::normal_distribution<double> nd;
  Matrix a(n, n), b(n, n);
  for (double& v : a.values()) v = nd(gen);
  for (double& v : b.values()) v = nd(gen);
  const Tensor ta(a), tb(b);
  for (auto _ : state) benchmark::DoNotOptimize(ad::matmul(ta, tb));
}
BENCHMARK(BM_MatMul)->Arg(8)->Arg(32)->Arg(128);

void BM_PriorSolve(benchmark::State& state) {
  const model::ClpfModel m(bench_config("affine"), 2);
  const ad::ParamView p(m.params(), nullptr);
  const model::ModelPass pass(m, p);
  const model::LatentField prior = [&](const Tensor& z, double t) { return pass.prior_drift(z, t); };
  const model::LatentField diff = [&](const Tensor& z, double t) { return pass.diffusion(z, t); };
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        model::solve_prior_interval(prior, diff, pass.z0(rows), 0.0, 1.0, rng, pass.solve_options()));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(rows) * 20);
}
BENCHMARK(BM_PriorSolve)->Arg(1)->Arg(25);

void BM_FlowForward(benchmark::State& state, const std::string& type) {
  flows::FlowConfig c;
  c.type = type;
  c.dim = 1;
  c.context_dim = 2;
  c.blocks = 3;
  c.zero_init = false;
  ad::ParamStore store;
  std::mt19937_64 gen(4);
  const auto flow = flows::make_flow(c, store, "flow", gen);
  const auto bound = flow->bind(ad::ParamView(store, nullptr));
  const Tensor o(Matrix(25, 1, std::vector<double>(25, 0.3)));
  const Tensor z(Matrix(25, 2, std::vector<double>(50, -0.2)));
  for (auto _ : state) benchmark::DoNotOptimize(bound->forward(o, z, Tensor::scalar(1.0)));
}
BENCHMARK_CAPTURE(BM_FlowForward, affine, std::string("affine"));
BENCHMARK_CAPTURE(BM_FlowForward, anode, std::string("anode"));

void BM_IwaeForward(benchmark::State& state) {
  const model::ClpfModel m(bench_config("affine"), 5);
  const TimeSeries s = gbm_series();
  const ad::ParamView p(m.params(), nullptr);
  const model::ModelPass pass(m, p);
  const auto k = static_cast<std::size_t>(state.range(0));
  std::uint64_t seed = 0;
  for (auto _ : state) {
    Rng rng(seed++);
    benchmark::DoNotOptimize(pass.iwae(s, k, rng).total.item());
  }
}
BENCHMARK(BM_IwaeForward)->Arg(3)->Arg(25)->Unit(benchmark::kMillisecond);

void BM_IwaeGradient(benchmark::State& state) {
  const model::ClpfModel m(bench_config("affine"), 6);
  const TimeSeries s = gbm_series();
  std::uint64_t seed = 0;
  for (auto _ : state) {
    ad::Tape tape;
    const ad::ParamView p(m.params(), &tape);
    const model::ModelPass pass(m, p);
    Rng rng(seed++);
    const auto est = pass.iwae(s, 3, rng);
    benchmark::DoNotOptimize(ad::parameter_gradients(m.params(), tape, tape.backward(est.total)));
  }
}
BENCHMARK(BM_IwaeGradient)->Unit(benchmark::kMillisecond);

void BM_SampleDense(benchmark::State& state) {
  const model::ClpfModel m(bench_config("affine"), 7);
  std::vector<double> t(3000);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = 0.01 * static_cast<double>(i + 1);
  const TimeGrid grid(t, 30.0);
  std::uint64_t seed = 0;
  for (auto _ : state) benchmark::DoNotOptimize(model::sample_trajectory(m, grid, seed++));
}
BENCHMARK(BM_SampleDense)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();

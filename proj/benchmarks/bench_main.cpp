#include <benchmark/benchmark.h>

#include <vector>

#include "w2s/drift.hpp"
#include "w2s/fixture.hpp"
#include "w2s/model.hpp"
#include "w2s/rng.hpp"
#include "w2s/train.hpp"

namespace {

w2s::ModelConfig bench_config(std::size_t d, std::size_t layers) {
  w2s::ModelConfig c;
  c.d_model = d;
  c.n_layers = layers;
  c.n_heads = 4;
  c.max_seq_len = 32;
  c.adapter = {true, 16, 16.0};
  return c;
}

std::vector<w2s::Sequence> sequences(std::size_t n, std::size_t len, std::uint64_t seed) {
  w2s::Rng rng(seed);
  std::vector<w2s::Sequence> out(n);
  for (auto& s : out) {
    s.prompt_len = 6;
    for (std::size_t i = 0; i < len; ++i) s.tokens.push_back(static_cast<int>(1 + rng.below(255)));
  }
  return out;
}

Eigen::MatrixXd gaussian(Eigen::Index n, Eigen::Index d, w2s::Rng& rng) {
  Eigen::MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

void BM_Score(benchmark::State& state) {
  w2s::RewardModel m(bench_config(static_cast<std::size_t>(state.range(0)), 4));
  const auto seqs = sequences(32, 22, 1);
  for (auto _ : state) benchmark::DoNotOptimize(m.view(true).rewards(seqs));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(seqs.size()));
}
BENCHMARK(BM_Score)->Arg(32)->Arg(64);

void BM_TrainEpoch(benchmark::State& state) {
  const auto a = sequences(64, 22, 2), b = sequences(64, 22, 3);
  std::vector<w2s::TrainExample> data;
  for (std::size_t i = 0; i < a.size(); ++i) data.push_back({i, a[i], b[i], 0.7});
  w2s::TrainConfig cfg;
  cfg.epochs = 1;
  cfg.method.kind = state.range(0) ? w2s::Method::anchor : w2s::Method::naive;
  for (auto _ : state) {
    state.PauseTiming();
    w2s::RewardModel m(bench_config(64, 4));
    m.set_train_scope(w2s::TrainScope::adapters);
    state.ResumeTiming();
    benchmark::DoNotOptimize(w2s::train_reward_model(m, data, cfg));
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(data.size()));
}
BENCHMARK(BM_TrainEpoch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

void BM_Cka(benchmark::State& state) {
  w2s::Rng rng(4);
  const Eigen::MatrixXd x = gaussian(1000, state.range(0), rng), y = gaussian(1000, state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(w2s::linear_cka_distance(x, y));
}
BENCHMARK(BM_Cka)->Arg(64)->Arg(256);

void BM_Cca(benchmark::State& state) {
  w2s::Rng rng(5);
  const Eigen::MatrixXd x = gaussian(1000, state.range(0), rng), y = gaussian(1000, state.range(0), rng);
  for (auto _ : state) benchmark::DoNotOptimize(w2s::cca_distance(x, y));
}
BENCHMARK(BM_Cca)->Arg(64)->Arg(256);

void BM_VerifyFixture(benchmark::State& state) {
  const w2s::ReferenceFixture f = w2s::reference_fixture();
  for (auto _ : state) benchmark::DoNotOptimize(w2s::verify_fixture(f));
}
BENCHMARK(BM_VerifyFixture);

}  // namespace

BENCHMARK_MAIN();

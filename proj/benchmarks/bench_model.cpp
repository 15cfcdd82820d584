#include <benchmark/benchmark.h>

#include <random>

#include "consense/model.hpp"
#include "consense/ops.hpp"
#include "consense/trainer.hpp"

namespace {

using namespace consense;

void BM_Matmul(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    std::mt19937 rng(7);
    Tensor a = Tensor::uniform({n, n}, -1.0f, 1.0f, rng);
    Tensor b = Tensor::uniform({n, n}, -1.0f, 1.0f, rng);
    for (auto _ : state) {
        Tensor c = matmul(a, b);
        benchmark::DoNotOptimize(c.data().data());
    }
}
BENCHMARK(BM_Matmul)->Arg(18)->Arg(64)->Arg(128);

ModelConfig desk_config(int adapter_tasks) {
    ModelConfig cfg;
    cfg.t_len = 64;
    cfg.channels = 18;
    cfg.heads = 9;
    cfg.gaussians = 10;
    cfg.dropout = 0.0f;
    cfg.seed = 7 + static_cast<unsigned>(adapter_tasks);
    return cfg;
}

ConSenseModel desk_model(int adapter_tasks) {
    ModelConfig cfg = desk_config(adapter_tasks);
    ConSenseModel model(cfg, 8);
    for (int t = 0; t < adapter_tasks; ++t) {
        add_task_adapter(model.prefix_stack(), t + 2, cfg.channels, cfg.rank(), PrefixKind::adapter,
                         cfg.t_len, 100u + static_cast<unsigned>(t));
        freeze_current(model.prefix_stack());
    }
    return model;
}

void BM_PositionalEncoding(benchmark::State& state) {
    ConSenseModel model = desk_model(0);
    std::mt19937 rng(3);
    Tensor x = Tensor::uniform({64, 18}, -1.0f, 1.0f, rng);
    for (auto _ : state) {
        Tensor y = model.encoding().encode(x);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_PositionalEncoding);

// Forward cost as the adapter stack grows across tasks.
void BM_Forward(benchmark::State& state) {
    ConSenseModel model = desk_model(static_cast<int>(state.range(0)));
    std::mt19937 rng(3);
    Tensor x = Tensor::uniform({64, 18}, -1.0f, 1.0f, rng);
    for (auto _ : state) {
        Tensor y = model.forward(x);
        benchmark::DoNotOptimize(y.data().data());
    }
}
BENCHMARK(BM_Forward)->Arg(0)->Arg(2)->Arg(4);

void BM_TrainStep(benchmark::State& state) {
    ConSenseModel model = desk_model(0);
    model.set_training(true);
    std::mt19937 rng(3);
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int i = 0; i < 8; ++i) {
        xs.push_back(Tensor::uniform({64, 18}, -1.0f, 1.0f, rng));
        ys.push_back(i % 8);
    }
    Adam opt{AdamConfig{}};
    for (auto& [name, t] : model.named_parameters()) {
        if (t.trainable()) opt.add_param(t);
    }
    for (auto _ : state) {
        {
            Tape tape;
            Tensor loss = cross_entropy_with_logits(model.forward_batch(xs), ys);
            tape.backward(loss);
        }
        opt.step();
        opt.zero_grad();
    }
}
BENCHMARK(BM_TrainStep);

}  // namespace

BENCHMARK_MAIN();

// Acceptance harness: prints one PASS/FAIL line per criterion and exits
// nonzero if any criterion fails. The behavioral criteria (6-8) run the full
// class-incremental benchmark at desk scale over five seeds per arm.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <consense/experiment.hpp>
#include <consense/metrics.hpp>
#include <consense/verify.hpp>

using namespace consense;

namespace {

int g_failures = 0;

void report(int criterion, bool pass, const std::string& what) {
    std::printf("%s: %d) %s\n", pass ? "PASS" : "FAIL", criterion, what.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

// ---- criteria 1-5: oracles and invariance suites --------------------------

void criterion_metrics_oracle() {
    // Worked five-session example: cumulative accuracies 100, 98.33, 91.67,
    // 88.10 and 80.21 percent must average to 91.66 +/- 0.01.
    MetricsRecord rec;
    rec.add_session({1.0}, 1.0);
    rec.add_session({1.0, 0.9667}, 0.9833);
    rec.add_session({0.95, 0.9, 0.9}, 0.9167);
    rec.add_session({0.9, 0.88, 0.86, 0.88}, 0.8810);
    rec.add_session({0.85, 0.8, 0.78, 0.8, 0.78}, 0.8021);
    const double mean = average_accuracy(rec) * 100.0;
    report(1, std::abs(mean - 91.66) <= 0.01,
           "five-session mean accuracy " + fmt(mean) + " within 0.01 of 91.66");
}

void criterion_suite(int criterion, const std::vector<std::string>& suites, const std::string& label,
                     int min_cases = 0) {
    int cases = 0;
    int failures = 0;
    std::string detail;
    for (const std::string& name : suites) {
        const verify::SuiteResult r = verify::run_suite(name);
        cases += r.cases;
        failures += r.failures;
        detail += (detail.empty() ? "" : ", ") + name + " " + std::to_string(r.cases - r.failures) + "/" +
                  std::to_string(r.cases);
    }
    const bool pass = failures == 0 && cases >= min_cases;
    report(criterion, pass, label + " (" + detail + ")");
}

// Not one of the numbered criteria, but a broken metrics or data pipeline
// would invalidate the benchmark arms, so check it up front.
void supplemental_suites() {
    int failures = 0;
    std::string detail;
    for (const std::string& name : {std::string("metrics"), std::string("data")}) {
        const verify::SuiteResult r = verify::run_suite(name);
        failures += r.failures;
        detail += (detail.empty() ? "" : ", ") + name + " " + std::to_string(r.cases - r.failures) + "/" +
                  std::to_string(r.cases);
    }
    std::printf("  supplemental oracles: %s%s\n", detail.c_str(), failures == 0 ? "" : " — FAILED");
    std::fflush(stdout);
    if (failures > 0) ++g_failures;
}

// ---- criteria 6-8: benchmark arms ------------------------------------------

struct ArmResult {
    std::vector<double> acc;   // per-seed mean accuracy
    std::vector<double> forget;  // per-seed mean forgetting

    double mean_acc() const { return std::accumulate(acc.begin(), acc.end(), 0.0) / acc.size(); }
    double mean_forget() const {
        return std::accumulate(forget.begin(), forget.end(), 0.0) / forget.size();
    }
};

ExperimentConfig benchmark_config(unsigned seed) {
    ExperimentConfig cfg;
    cfg.classes = 16;
    cfg.per_class = 60;
    cfg.t_len = 64;
    cfg.channels = 18;
    cfg.noise_sigma = 0.25f;
    cfg.split = {8, 2, 2, 2, 2};
    cfg.heads = 9;
    cfg.gaussians = 10;
    cfg.adapter_rank = 9;
    cfg.session.epochs = 15;
    cfg.session.initial_epochs = 60;
    cfg.session.lr = 0.001f;
    cfg.session.incremental_lr = 0.002f;
    cfg.session.mlp_lr_scale = 0.05f;
    cfg.session.epsilon = 10.0f;
    cfg.seed = seed;
    cfg.data_seed = seed;
    return cfg;
}

ArmResult run_arm(const std::string& label, const std::vector<unsigned>& seeds,
                  void (*mutate)(ExperimentConfig&), ParamCounts* params_out = nullptr) {
    ArmResult out;
    for (unsigned seed : seeds) {
        ExperimentConfig cfg = benchmark_config(seed);
        if (mutate != nullptr) mutate(cfg);
        const auto start = std::chrono::steady_clock::now();
        const ExperimentResult r = run_experiment(cfg);
        const double secs =
            std::chrono::duration_cast<std::chrono::duration<double>>(std::chrono::steady_clock::now() - start)
                .count();
        out.acc.push_back(r.avg_accuracy);
        out.forget.push_back(r.avg_forgetting);
        if (params_out != nullptr) *params_out = r.params;
        std::printf("  arm %-8s seed %u: accuracy %s forgetting %s (%.0fs)\n", label.c_str(), seed,
                    fmt(r.avg_accuracy).c_str(), fmt(r.avg_forgetting).c_str(), secs);
        std::fflush(stdout);
    }
    return out;
}

// ---- criterion 9: parameter accounting -------------------------------------

void criterion_parameters(const ParamCounts& trained) {
    // Closed-form counts for the benchmark model after all five sessions:
    // d=18, G=10, H1=H2=18, rank 9, 4 frozen task adapters, 16 classes.
    const std::size_t d = 18, g = 10, h1 = 18, h2 = 18, r = 9, adapters = 4, classes = 16;
    const std::size_t posenc = g + g + g * d;
    const std::size_t attention = 4 * d * d;
    const std::size_t adapter_params = adapters * 4 * d * r;
    const std::size_t mlp = h1 * (d + 1) + h2 * (h1 + 1) + d * (h2 + 1);
    const std::size_t classifier = classes * (d + 1);
    const std::size_t total = posenc + attention + adapter_params + mlp + classifier;

    const bool pass = trained.posenc == posenc && trained.attention == attention &&
                      trained.adapters == adapter_params && trained.mlp == mlp &&
                      trained.classifier == classifier && trained.total == total;
    report(9, pass,
           "parameter ledger matches closed form: total " + std::to_string(trained.total) + " vs " +
               std::to_string(total) + " (posenc " + std::to_string(trained.posenc) + ", attention " +
               std::to_string(trained.attention) + ", adapters " + std::to_string(trained.adapters) +
               ", mlp " + std::to_string(trained.mlp) + ", classifier " + std::to_string(trained.classifier) +
               ")");

    // Report-only: the same architecture at published scale (90 channels,
    // 9 heads, 10 ranges, 270 steps, 16 classes, 4 adapters of rank 18)
    // against the 3.35M figure reported for the full-size network.
    const std::size_t D = 90, R = 18;
    const std::size_t big = (g + g + g * D) + 4 * D * D + adapters * 4 * D * R + D * (D + 1) * 2 +
                            D * (D + 1) + classes * (D + 1);
    std::printf("  note: full-scale single-block configuration counts %zu parameters; the published "
                "multi-block network reports ~3.35M\n",
                big);
}

}  // namespace

int main() {
    std::printf("acceptance checks\n");

    criterion_metrics_oracle();
    criterion_suite(2, {"grads"}, "finite-difference gradient oracle over every module", 100);
    criterion_suite(3, {"freeze"}, "frozen parameters stay bit-identical through training");
    criterion_suite(4, {"prefix", "softmax"}, "prefix attention semantics and normalization");
    criterion_suite(5, {"selective"}, "activation-stability retraining invariants");
    supplemental_suites();

    const std::vector<unsigned> seeds{1, 2, 3, 4, 5};
    std::printf("benchmark arms (5 seeds each, 16 classes, 5 sessions)\n");
    std::fflush(stdout);

    const auto bench_start = std::chrono::steady_clock::now();
    ParamCounts trained_params;
    const ArmResult consense = run_arm("both", seeds, nullptr, &trained_params);
    const ArmResult finetune =
        run_arm("finetune", seeds, [](ExperimentConfig& c) { c.method = "finetune"; });
    const double bench_secs = std::chrono::duration_cast<std::chrono::duration<double>>(
                                  std::chrono::steady_clock::now() - bench_start)
                                  .count();
    std::printf("  benchmark pair wall time: %.0fs\n", bench_secs);
    const ArmResult prefixes_only =
        run_arm("prefix", seeds, [](ExperimentConfig& c) { c.disable_selective = true; });
    const ArmResult selective_only =
        run_arm("select", seeds, [](ExperimentConfig& c) { c.disable_prefixes = true; });
    const ArmResult neither = run_arm("none", seeds, [](ExperimentConfig& c) {
        c.disable_prefixes = true;
        c.disable_selective = true;
    });
    const ArmResult zero_init =
        run_arm("zero", seeds, [](ExperimentConfig& c) { c.prefix_init = "zero"; });
    const ArmResult random_init =
        run_arm("random", seeds, [](ExperimentConfig& c) { c.prefix_init = "random"; });

    const double gap = consense.mean_acc() - finetune.mean_acc();
    report(6,
           gap >= 0.15 && consense.mean_forget() < finetune.mean_forget(),
           "incremental accuracy " + fmt(consense.mean_acc()) + " vs naive " + fmt(finetune.mean_acc()) +
               " (gap " + fmt(gap) + " >= 0.15), forgetting " + fmt(consense.mean_forget()) + " < " +
               fmt(finetune.mean_forget()));

    const double both = consense.mean_acc();
    const double pre = prefixes_only.mean_acc();
    const double sel = selective_only.mean_acc();
    const double none = neither.mean_acc();
    report(7,
           pre > none && sel > none && both >= pre && both >= sel && both >= none,
           "ablation means: both " + fmt(both) + ", prefixes-only " + fmt(pre) + ", selective-only " +
               fmt(sel) + ", neither " + fmt(none) +
               " (each mechanism helps alone, together is the maximum)");

    report(8,
           both >= zero_init.mean_acc() && both >= random_init.mean_acc(),
           "bottleneck prefixes " + fmt(both) + " >= zero-init " + fmt(zero_init.mean_acc()) +
               " and >= random-init " + fmt(random_init.mean_acc()));

    criterion_parameters(trained_params);

    if (g_failures > 0) {
        std::printf("%d criterion(s) failed\n", g_failures);
        return 1;
    }
    std::printf("all criteria passed\n");
    return 0;
}

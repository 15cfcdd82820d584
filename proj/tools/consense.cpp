#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "consense/dataio.hpp"
#include "consense/experiment.hpp"
#include "consense/fault.hpp"
#include "consense/verify.hpp"

namespace fs = std::filesystem;

namespace {

std::optional<unsigned> env_seed_override() {
    const char* env = std::getenv("CONSENSE_SEED");
    if (env == nullptr || *env == '\0') return std::nullopt;
    try {
        std::size_t used = 0;
        const unsigned long v = std::stoul(env, &used);
        if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
        return static_cast<unsigned>(v);
    } catch (const std::exception&) {
        throw consense::UsageError(std::string("CONSENSE_SEED must be a non-negative integer, got '") +
                                   env + "'");
    }
}

struct GenArgs {
    int classes = 16;
    int per_class = 20;
    int t_len = 64;
    int channels = 18;
    unsigned seed = 1;
    float noise = 0.25f;
    std::string name = "synthetic";
    std::string out_base;
    std::string csv;
};

int cmd_gen(GenArgs a) {
    if (const auto s = env_seed_override()) a.seed = *s;
    const fs::path base(a.out_base);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());

    const consense::CsiDataset ds = consense::generate_synthetic(
        a.classes, a.per_class, a.t_len, a.channels, a.seed, a.noise, a.name);
    consense::save_dataset(ds, a.out_base);
    std::cout << "wrote " << a.out_base << ".json + " << a.out_base << ".f32 (" << ds.count()
              << " samples, " << ds.class_count << " classes, " << ds.t_len << "x" << ds.channels
              << ")\n";
    if (!a.csv.empty()) {
        const fs::path csv_path(a.csv);
        if (csv_path.has_parent_path()) fs::create_directories(csv_path.parent_path());
        consense::export_csv(ds, a.csv);
        std::cout << "wrote " << a.csv << "\n";
    }
    return 0;
}

int cmd_run(consense::ExperimentConfig cfg) {
    if (const auto s = env_seed_override()) {
        cfg.seed = *s;
        cfg.data_seed = *s;
    }
    cfg.validate();
    if (!cfg.out_dir.empty()) fs::create_directories(cfg.out_dir);

    const consense::ExperimentResult result = consense::run_experiment(cfg);
    std::cout << consense::summary_json(cfg, result).dump(2) << "\n";
    return 0;
}

int cmd_verify(const std::string& suite, unsigned seed, const std::string& fault) {
    if (const auto s = env_seed_override()) seed = *s;
    if (!fault.empty()) consense::debug::set_injected_fault(fault.c_str());

    std::vector<consense::verify::SuiteResult> results;
    try {
        if (suite.empty()) {
            results = consense::verify::run_all(seed);
        } else {
            results.push_back(consense::verify::run_suite(suite, seed));
        }
    } catch (...) {
        consense::debug::set_injected_fault(nullptr);
        throw;
    }
    consense::debug::set_injected_fault(nullptr);

    int failures = 0;
    for (const auto& r : results) {
        std::cout << "suite " << r.name << ": " << (r.cases - r.failures) << "/" << r.cases
                  << " checks passed\n";
        for (const std::string& msg : r.messages) std::cout << "  FAIL: " << msg << "\n";
        failures += r.failures;
    }
    if (failures > 0) {
        std::cout << failures << " check(s) failed\n";
        return 1;
    }
    return 0;
}

consense::ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw consense::UsageError("cannot open config file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw consense::FormatError(std::string("config file is not valid JSON: ") + e.what());
    }
    return consense::experiment_config_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ConSense: class-incremental learning on CSI-like time series"};
    app.require_subcommand(1);

    GenArgs gen_args;
    CLI::App* gen = app.add_subcommand("gen", "Synthesize a labeled dataset to disk");
    gen->add_option("--classes", gen_args.classes, "Number of classes");
    gen->add_option("--per-class", gen_args.per_class, "Samples per class");
    gen->add_option("--t", gen_args.t_len, "Time steps per sample");
    gen->add_option("--c", gen_args.channels, "Channels per time step");
    gen->add_option("--seed", gen_args.seed, "Generator seed");
    gen->add_option("--noise", gen_args.noise, "Gaussian noise sigma");
    gen->add_option("--name", gen_args.name, "Dataset name recorded in the manifest");
    gen->add_option("--out", gen_args.out_base, "Output base path (writes BASE.json + BASE.f32)")
        ->required();
    gen->add_option("--csv", gen_args.csv, "Also export a CSV copy to this path");

    consense::ExperimentConfig flags;  // flag values land here; merged with --config below
    std::string config_path;
    std::string dataset_path;
    CLI::App* run = app.add_subcommand("run", "Execute a class-incremental experiment");
    run->add_option("--config", config_path, "JSON config file; flags override its fields")
        ->check(CLI::ExistingFile);
    run->add_option("--dataset", dataset_path, "Load a saved dataset (manifest base path)");
    run->add_option("--classes", flags.classes, "Synthetic: number of classes");
    run->add_option("--per-class", flags.per_class, "Synthetic: samples per class");
    run->add_option("--t", flags.t_len, "Synthetic: time steps");
    run->add_option("--c", flags.channels, "Synthetic: channels");
    run->add_option("--noise", flags.noise_sigma, "Synthetic: noise sigma");
    run->add_option("--data-seed", flags.data_seed, "Synthetic generation / split seed");
    run->add_option("--split", flags.split, "Classes per task, e.g. 8,2,2,2,2")->delimiter(',');
    run->add_flag("--shuffle-classes", flags.shuffle_classes, "Shuffle class-to-task assignment");
    run->add_option("--method", flags.method, "consense | finetune");
    run->add_flag("--disable-prefixes", flags.disable_prefixes, "Ablation: no task adapters");
    run->add_flag("--disable-selective", flags.disable_selective,
                  "Ablation: retrain the whole MLP every session");
    run->add_option("--prefix-init", flags.prefix_init, "adapter | zero | random");
    run->add_option("--heads", flags.heads, "Attention heads");
    run->add_option("--gaussians", flags.gaussians, "Positional encoding components");
    run->add_option("--sigma-init", flags.sigma_init, "Initial positional sigma");
    run->add_option("--hidden1", flags.mlp_hidden1, "First MLP hidden width (0 = channels)");
    run->add_option("--hidden2", flags.mlp_hidden2, "Second MLP hidden width (0 = channels)");
    run->add_option("--dropout", flags.dropout, "Dropout rate");
    run->add_option("--adapter-rank", flags.adapter_rank, "Adapter bottleneck rank (0 = default)");
    run->add_option("--epochs", flags.session.epochs, "Epochs per session");
    run->add_option("--initial-epochs", flags.session.initial_epochs,
                    "Epochs for the first session (0 = same as --epochs)");
    run->add_option("--lr", flags.session.lr, "Learning rate");
    run->add_option("--incremental-lr", flags.session.incremental_lr,
                    "Learning rate after the first session (0 = same as --lr)");
    run->add_option("--mlp-lr-scale", flags.session.mlp_lr_scale,
                    "Step-size multiplier for the shared MLP in incremental sessions");
    run->add_option("--classifier-decay", flags.session.classifier_decay,
                    "Weight decay on classifier rows added in incremental sessions");
    run->add_option("--batch", flags.session.batch, "Batch size");
    run->add_option("--epsilon", flags.session.epsilon, "Activation stability threshold");
    run->add_option("--seed", flags.seed, "Model/training seed");
    run->add_option("--out", flags.out_dir, "Output directory for checkpoints and reports");

    std::string suite;
    unsigned verify_seed = 1234;
    std::string fault;
    CLI::App* verify = app.add_subcommand("verify", "Run gradient checks and invariance suites");
    verify->add_option("--suite", suite, "Run one suite only")
        ->check(CLI::IsMember(consense::verify::suite_names()));
    verify->add_option("--seed", verify_seed, "Suite seed");
    verify->add_option("--inject-fault", fault,
                       "Diagnostic: corrupt one backward rule (matmul, softmax, tanh, "
                       "cross-entropy, gaussian-logits, adam) to prove the checks catch it")
        ->group("");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return cmd_gen(gen_args);
        if (run->parsed()) {
            consense::ExperimentConfig cfg = flags;
            if (!config_path.empty()) {
                cfg = load_config_file(config_path);
                const auto passed = [&](const std::string& name) {
                    return run->count(name) > 0;
                };
                if (passed("--classes")) cfg.classes = flags.classes;
                if (passed("--per-class")) cfg.per_class = flags.per_class;
                if (passed("--t")) cfg.t_len = flags.t_len;
                if (passed("--c")) cfg.channels = flags.channels;
                if (passed("--noise")) cfg.noise_sigma = flags.noise_sigma;
                if (passed("--data-seed")) cfg.data_seed = flags.data_seed;
                if (passed("--split")) cfg.split = flags.split;
                if (passed("--shuffle-classes")) cfg.shuffle_classes = flags.shuffle_classes;
                if (passed("--method")) cfg.method = flags.method;
                if (passed("--disable-prefixes")) cfg.disable_prefixes = flags.disable_prefixes;
                if (passed("--disable-selective")) cfg.disable_selective = flags.disable_selective;
                if (passed("--prefix-init")) cfg.prefix_init = flags.prefix_init;
                if (passed("--heads")) cfg.heads = flags.heads;
                if (passed("--gaussians")) cfg.gaussians = flags.gaussians;
                if (passed("--sigma-init")) cfg.sigma_init = flags.sigma_init;
                if (passed("--hidden1")) cfg.mlp_hidden1 = flags.mlp_hidden1;
                if (passed("--hidden2")) cfg.mlp_hidden2 = flags.mlp_hidden2;
                if (passed("--dropout")) cfg.dropout = flags.dropout;
                if (passed("--adapter-rank")) cfg.adapter_rank = flags.adapter_rank;
                if (passed("--epochs")) cfg.session.epochs = flags.session.epochs;
                if (passed("--initial-epochs")) cfg.session.initial_epochs = flags.session.initial_epochs;
                if (passed("--lr")) cfg.session.lr = flags.session.lr;
                if (passed("--incremental-lr")) cfg.session.incremental_lr = flags.session.incremental_lr;
                if (passed("--mlp-lr-scale")) cfg.session.mlp_lr_scale = flags.session.mlp_lr_scale;
                if (passed("--classifier-decay")) cfg.session.classifier_decay = flags.session.classifier_decay;
                if (passed("--batch")) cfg.session.batch = flags.session.batch;
                if (passed("--epsilon")) cfg.session.epsilon = flags.session.epsilon;
                if (passed("--seed")) cfg.seed = flags.seed;
                if (passed("--out")) cfg.out_dir = flags.out_dir;
            }
            if (!dataset_path.empty()) {
                cfg.synthetic = false;
                cfg.dataset_path = dataset_path;
            }
            return cmd_run(std::move(cfg));
        }
        if (verify->parsed()) return cmd_verify(suite, verify_seed, fault);
    } catch (const consense::ProtocolError& e) {
        std::cerr << "protocol error: " << e.what() << "\n";
        return 3;
    } catch (const consense::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}

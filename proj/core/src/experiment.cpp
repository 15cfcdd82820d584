#include "consense/experiment.hpp"

#include <filesystem>
#include <fstream>

#include "consense/seeds.hpp"

namespace consense {

namespace fs = std::filesystem;
using nlohmann::json;

void ExperimentConfig::validate() const {
    if (synthetic == !dataset_path.empty()) {
        throw ConfigError("exactly one data source: either synthetic generation or a dataset path");
    }
    if (synthetic) {
        if (classes < 2 || per_class < 2 || t_len < 1 || channels < 1 || noise_sigma < 0.0f) {
            throw ConfigError("invalid synthetic data spec");
        }
    }
    if (split.empty()) throw ConfigError("task split must name at least one task");
    if (method != "consense" && method != "finetune") {
        throw ConfigError("method must be consense or finetune, got '" + method + "'");
    }
    if (method == "finetune" &&
        (disable_prefixes || disable_selective || prefix_init != "adapter")) {
        throw ConfigError("ablation flags apply to method=consense only");
    }
    prefix_kind_from_string(prefix_init);
    session.validate();
}

json experiment_config_to_json(const ExperimentConfig& cfg) {
    return json{{"synthetic", cfg.synthetic},
                {"dataset_path", cfg.dataset_path},
                {"classes", cfg.classes},
                {"per_class", cfg.per_class},
                {"t_len", cfg.t_len},
                {"channels", cfg.channels},
                {"noise_sigma", cfg.noise_sigma},
                {"data_seed", cfg.data_seed},
                {"split", cfg.split},
                {"shuffle_classes", cfg.shuffle_classes},
                {"method", cfg.method},
                {"disable_prefixes", cfg.disable_prefixes},
                {"disable_selective", cfg.disable_selective},
                {"prefix_init", cfg.prefix_init},
                {"heads", cfg.heads},
                {"gaussians", cfg.gaussians},
                {"sigma_init", cfg.sigma_init},
                {"mlp_hidden1", cfg.mlp_hidden1},
                {"mlp_hidden2", cfg.mlp_hidden2},
                {"dropout", cfg.dropout},
                {"adapter_rank", cfg.adapter_rank},
                {"epochs", cfg.session.epochs},
                {"initial_epochs", cfg.session.initial_epochs},
                {"lr", cfg.session.lr},
                {"incremental_lr", cfg.session.incremental_lr},
                {"mlp_lr_scale", cfg.session.mlp_lr_scale},
                {"classifier_decay", cfg.session.classifier_decay},
                {"batch", cfg.session.batch},
                {"epsilon", cfg.session.epsilon},
                {"seed", cfg.seed},
                {"out_dir", cfg.out_dir}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
    ExperimentConfig cfg;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("synthetic", cfg.synthetic);
    get("dataset_path", cfg.dataset_path);
    if (j.contains("dataset_path") && !cfg.dataset_path.empty() && !j.contains("synthetic")) {
        cfg.synthetic = false;
    }
    get("classes", cfg.classes);
    get("per_class", cfg.per_class);
    get("t_len", cfg.t_len);
    get("channels", cfg.channels);
    get("noise_sigma", cfg.noise_sigma);
    get("data_seed", cfg.data_seed);
    get("split", cfg.split);
    get("shuffle_classes", cfg.shuffle_classes);
    get("method", cfg.method);
    get("disable_prefixes", cfg.disable_prefixes);
    get("disable_selective", cfg.disable_selective);
    get("prefix_init", cfg.prefix_init);
    get("heads", cfg.heads);
    get("gaussians", cfg.gaussians);
    get("sigma_init", cfg.sigma_init);
    get("mlp_hidden1", cfg.mlp_hidden1);
    get("mlp_hidden2", cfg.mlp_hidden2);
    get("dropout", cfg.dropout);
    get("adapter_rank", cfg.adapter_rank);
    get("epochs", cfg.session.epochs);
    get("initial_epochs", cfg.session.initial_epochs);
    get("lr", cfg.session.lr);
    get("incremental_lr", cfg.session.incremental_lr);
    get("mlp_lr_scale", cfg.session.mlp_lr_scale);
    get("classifier_decay", cfg.session.classifier_decay);
    get("batch", cfg.session.batch);
    get("epsilon", cfg.session.epsilon);
    get("seed", cfg.seed);
    get("out_dir", cfg.out_dir);
    return cfg;
}

namespace {

json param_counts_json(const ParamCounts& p) {
    return json{{"posenc", p.posenc},   {"attention", p.attention}, {"adapters", p.adapters},
                {"mlp", p.mlp},         {"classifier", p.classifier}, {"total", p.total},
                {"trainable", p.trainable}};
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path.string());
    out << text;
}

}  // namespace

json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result) {
    json alpha = json::array();
    for (const auto& row : result.metrics.alpha) alpha.push_back(row);
    return json{{"method", cfg.method},
                {"cumulative_accuracy", result.metrics.cumulative},
                {"alpha", alpha},
                {"average_accuracy", result.avg_accuracy},
                {"average_forgetting", result.avg_forgetting},
                {"parameters", param_counts_json(result.params)},
                {"incremental_loss",
                 "cross-entropy over all seen classes; consense gradient-masks old classifier "
                 "rows so new-task batches cannot erode them, finetune trains every row"},
                {"config", experiment_config_to_json(cfg)}};
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();

    const CsiDataset dataset =
        cfg.synthetic ? generate_synthetic(cfg.classes, cfg.per_class, cfg.t_len, cfg.channels,
                                           cfg.data_seed, cfg.noise_sigma)
                      : load_dataset(cfg.dataset_path);

    TaskSplitSpec split_spec;
    split_spec.class_counts = cfg.split;
    split_spec.shuffle_classes = cfg.shuffle_classes;
    split_spec.seed = seed32(cfg.data_seed, 0x5B117000u);
    const std::vector<TaskData> tasks = split_tasks(dataset, split_spec);

    ModelConfig mcfg;
    mcfg.t_len = dataset.t_len;
    mcfg.channels = dataset.channels;
    mcfg.heads = cfg.heads;
    mcfg.gaussians = cfg.gaussians;
    mcfg.sigma_init = cfg.sigma_init;
    mcfg.mlp_hidden1 = cfg.mlp_hidden1;
    mcfg.mlp_hidden2 = cfg.mlp_hidden2;
    mcfg.dropout = cfg.dropout;
    mcfg.adapter_rank = cfg.adapter_rank;
    mcfg.prefix_init = cfg.prefix_init;
    mcfg.seed = seed32(cfg.seed, 0x30DE1000u);
    ConSenseModel model(mcfg, static_cast<int>(tasks[0].classes.size()));

    const fs::path out_dir(cfg.out_dir);
    if (!cfg.out_dir.empty()) {
        fs::create_directories(out_dir);
        write_text(out_dir / "config.json", experiment_config_to_json(cfg).dump(2) + "\n");
    }

    ClassMap classes;
    MetricsRecord record;
    ActivationProfile previous;
    std::vector<int> union_test;

    for (std::size_t t = 0; t < tasks.size(); ++t) {
        const TaskData& task = tasks[t];
        SessionConfig scfg = cfg.session;
        scfg.seed = seed32(cfg.seed, 0x5E550000u + static_cast<unsigned>(t + 1));
        if (t == 0 && scfg.initial_epochs > 0) scfg.epochs = scfg.initial_epochs;
        if (t > 0 && scfg.incremental_lr > 0.0f) scfg.lr = scfg.incremental_lr;

        if (cfg.method == "consense") {
            if (t == 0) {
                previous = train_initial(model, dataset, task, scfg, classes);
            } else {
                previous = train_incremental(model, dataset, task, scfg, classes, previous,
                                             !cfg.disable_prefixes, !cfg.disable_selective);
            }
        } else {
            train_finetune_session(model, dataset, task, scfg, classes, t == 0);
        }

        union_test.insert(union_test.end(), task.test.begin(), task.test.end());
        std::vector<double> row;
        row.reserve(t + 1);
        for (std::size_t j = 0; j <= t; ++j) {
            row.push_back(evaluate(model, dataset, tasks[j].test, classes));
        }
        record.add_session(std::move(row), evaluate(model, dataset, union_test, classes));

        if (!cfg.out_dir.empty()) {
            save_checkpoint((out_dir / ("session_" + std::to_string(t + 1) + ".ckpt")).string(), model,
                            static_cast<int>(t + 1));
        }
    }

    ExperimentResult result;
    result.metrics = std::move(record);
    result.avg_accuracy = average_accuracy(result.metrics);
    result.avg_forgetting = tasks.size() >= 2 ? average_forgetting(result.metrics) : 0.0;
    result.params = model.count_parameters();

    if (!cfg.out_dir.empty()) {
        write_text(out_dir / "alpha.csv", alpha_csv(result.metrics));
        write_text(out_dir / "summary.json", summary_json(cfg, result).dump(2) + "\n");
    }
    return result;
}

}  // namespace consense

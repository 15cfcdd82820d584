#include "consense/trainer.hpp"

#include <algorithm>

#include "consense/ops.hpp"
#include "consense/seeds.hpp"

namespace consense {

void SessionConfig::validate() const {
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (initial_epochs < 0) throw ConfigError("initial epochs must be >= 0");
    if (lr <= 0.0f) throw ConfigError("learning rate must be positive");
    if (incremental_lr < 0.0f) throw ConfigError("incremental learning rate must be >= 0");
    if (mlp_lr_scale <= 0.0f) throw ConfigError("mlp lr scale must be positive");
    if (batch < 1) throw ConfigError("batch size must be >= 1");
    if (epsilon < 0.0f) throw ConfigError("stability threshold must be >= 0");
}

void ClassMap::extend(const std::vector<int>& classes) {
    for (int c : classes) {
        if (index_.count(c) != 0) {
            throw ProtocolError("class " + std::to_string(c) + " introduced twice");
        }
        index_.emplace(c, static_cast<int>(order_.size()));
        order_.push_back(c);
    }
}

int ClassMap::logit_of(int class_id) const {
    auto it = index_.find(class_id);
    if (it == index_.end()) throw DataError("class " + std::to_string(class_id) + " was never trained");
    return it->second;
}

namespace {

void validate_task_labels(const CsiDataset& dataset, const TaskData& task) {
    auto in_task = [&task](int label) {
        return std::find(task.classes.begin(), task.classes.end(), label) != task.classes.end();
    };
    for (int idx : task.train) {
        if (!in_task(dataset.label(idx))) {
            throw DataError("train sample " + std::to_string(idx) + " has label " +
                            std::to_string(dataset.label(idx)) + " outside task " +
                            std::to_string(task.task_id));
        }
    }
    for (int idx : task.test) {
        if (!in_task(dataset.label(idx))) {
            throw DataError("test sample " + std::to_string(idx) + " has label " +
                            std::to_string(dataset.label(idx)) + " outside task " +
                            std::to_string(task.task_id));
        }
    }
}

// L2 penalty restricted to the classifier rows a session introduced.
struct RowDecay {
    Tensor weight;
    Tensor bias;
    std::vector<int> rows;
    float lambda = 0.0f;
};

void run_epochs(ConSenseModel& model, Adam& opt, const CsiDataset& dataset,
                const std::vector<int>& train_idx, const SessionConfig& cfg, const ClassMap& classes,
                const FreezeMaskSet* masks, int session, const RowDecay* decay = nullptr) {
    if (train_idx.empty()) throw DataError("session " + std::to_string(session) + " has no training data");
    model.set_training(true);
    std::mt19937 shuffle_rng(seed32(cfg.seed, 0xE70C0000u + static_cast<unsigned>(session)));
    std::vector<int> order = train_idx;
    std::vector<Tensor> xs;
    std::vector<int> ys;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
            xs.clear();
            ys.clear();
            for (std::size_t i = start; i < end; ++i) {
                xs.push_back(dataset.sample(order[i]));
                ys.push_back(classes.logit_of(dataset.label(order[i])));
            }
            {
                Tape tape;
                Tensor logits = model.forward_batch(xs);
                Tensor loss = cross_entropy_with_logits(logits, ys);
                tape.backward(loss);
            }
            if (masks != nullptr) {
                for (int l = 0; l < 3; ++l) {
                    Tensor w = model.mlp().weight(l);
                    Tensor b = model.mlp().bias(l);
                    apply_mask_to_grad(w, masks->weight[static_cast<std::size_t>(l)]);
                    apply_mask_to_grad(b, masks->bias[static_cast<std::size_t>(l)]);
                }
            }
            opt.step();
            if (decay != nullptr && decay->lambda > 0.0f) {
                // Decoupled (applied to the values, not the gradients): an L2
                // term folded into the gradient would be swallowed by the
                // optimizer's per-coordinate normalization.
                const float shrink = 1.0f - cfg.lr * decay->lambda;
                Tensor w = decay->weight;
                Tensor b = decay->bias;
                const int cols = w.extent(1);
                auto wv = w.mutable_data();
                auto bv = b.mutable_data();
                for (int row : decay->rows) {
                    for (int j = 0; j < cols; ++j) {
                        wv[static_cast<std::size_t>(row) * cols + j] *= shrink;
                    }
                    bv[static_cast<std::size_t>(row)] *= shrink;
                }
            }
            opt.zero_grad();
        }
    }
    model.set_training(false);
}

Adam make_optimizer(const std::vector<Tensor>& params, const SessionConfig& cfg,
                    const FreezeMaskSet* masks, const Mlp& mlp) {
    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(acfg);
    for (const Tensor& p : params) {
        std::optional<GradMask> mask;
        if (masks != nullptr) {
            for (int l = 0; l < 3; ++l) {
                if (p.same_storage(mlp.weight(l))) mask = masks->weight[static_cast<std::size_t>(l)];
                if (p.same_storage(mlp.bias(l))) mask = masks->bias[static_cast<std::size_t>(l)];
            }
        }
        opt.add_param(p, std::move(mask));
    }
    return opt;
}

std::vector<Tensor> trainable_parameters(const ConSenseModel& model) {
    std::vector<Tensor> params;
    for (auto& [name, t] : model.named_parameters()) {
        if (t.trainable()) params.push_back(t);
    }
    return params;
}

}  // namespace

double evaluate(ConSenseModel& model, const CsiDataset& dataset, const std::vector<int>& indices,
                const ClassMap& classes) {
    if (indices.empty()) throw DataError("evaluation over an empty index set");
    model.set_training(false);
    int correct = 0;
    for (int idx : indices) {
        Tensor logits = model.forward(dataset.sample(idx));
        const auto row = logits.data();
        int best = 0;
        for (std::size_t c = 1; c < row.size(); ++c) {
            if (row[c] > row[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
        }
        if (best == classes.logit_of(dataset.label(idx))) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(indices.size());
}

ActivationProfile profile_pass(ConSenseModel& model, const CsiDataset& dataset,
                               const std::vector<int>& indices, int session) {
    if (indices.empty()) throw DataError("activation profile over an empty dataset");
    model.set_training(false);
    const std::array<int, 3> widths = model.mlp().layer_widths();
    std::array<std::vector<float>, 3> sums;
    for (int l = 0; l < 3; ++l) {
        sums[static_cast<std::size_t>(l)].assign(
            static_cast<std::size_t>(widths[static_cast<std::size_t>(l)]), 0.0f);
    }
    for (int idx : indices) {
        MlpActivations acts;
        model.forward(dataset.sample(idx), &acts);
        const Tensor* layers[3] = {&acts.l1, &acts.l2, &acts.l3};
        for (int l = 0; l < 3; ++l) {
            const Tensor& a = *layers[l];
            const int n = a.extent(0), w = a.extent(1);
            const float inv_n = 1.0f / static_cast<float>(n);
            const float* av = a.data().data();
            float* acc = sums[static_cast<std::size_t>(l)].data();
            for (int r = 0; r < n; ++r) {
                for (int c = 0; c < w; ++c) acc[c] += av[static_cast<std::size_t>(r) * w + c] * inv_n;
            }
        }
    }
    return average_activations(session, sums, indices.size(), widths);
}

ActivationProfile train_initial(ConSenseModel& model, const CsiDataset& dataset, const TaskData& task,
                                const SessionConfig& cfg, ClassMap& classes) {
    cfg.validate();
    if (model.attention().frozen || model.prefix_stack().adapter_count() != 0) {
        throw ProtocolError("initial training requires a freshly initialized model");
    }
    validate_task_labels(dataset, task);
    classes.extend(task.classes);
    if (classes.seen() != model.seen_classes()) {
        throw ProtocolError("model has " + std::to_string(model.seen_classes()) +
                            " classifier rows for " + std::to_string(classes.seen()) + " seen classes");
    }

    Adam opt = make_optimizer(trainable_parameters(model), cfg, nullptr, model.mlp());
    run_epochs(model, opt, dataset, task.train, cfg, classes, nullptr, 1);

    freeze_base(model.attention());
    // Later sessions train only adapters, unmasked MLP entries and the
    // classifier, so the positional encoding freezes with the base.
    for (auto& [name, t] : model.encoding().named_parameters()) t.set_trainable(false);
    return profile_pass(model, dataset, task.train, 1);
}

ActivationProfile train_incremental(ConSenseModel& model, const CsiDataset& dataset, const TaskData& task,
                                    const SessionConfig& cfg, ClassMap& classes,
                                    const ActivationProfile& previous, bool use_prefixes,
                                    bool use_selective, FreezeMaskSet* masks_out) {
    cfg.validate();
    if (previous.empty()) {
        throw ProtocolError("incremental session " + std::to_string(task.task_id) +
                            " has no previous activation profile");
    }
    if (!model.attention().frozen) {
        throw ProtocolError("incremental training requires a frozen attention base");
    }
    validate_task_labels(dataset, task);
    const int session = previous.session + 1;
    classes.extend(task.classes);
    model.expand_classifier(static_cast<int>(task.classes.size()));
    if (classes.seen() != model.seen_classes()) {
        throw ProtocolError("model has " + std::to_string(model.seen_classes()) +
                            " classifier rows for " + std::to_string(classes.seen()) + " seen classes");
    }

    if (use_prefixes) {
        const ModelConfig& mc = model.config();
        add_task_adapter(model.prefix_stack(), session, mc.channels, mc.rank(),
                         prefix_kind_from_string(mc.prefix_init), mc.t_len,
                         seed32(cfg.seed, 0xADA00000u + static_cast<unsigned>(session)));
    }

    FreezeMaskSet masks;
    const FreezeMaskSet* masks_ptr = nullptr;
    if (use_selective) {
        const ActivationProfile before = profile_pass(model, dataset, task.train, session);
        masks = build_masks(stable_set(before, previous, cfg.epsilon), model.mlp());
        masks_ptr = &masks;
        if (masks_out != nullptr) *masks_out = masks;
    }

    AdamConfig acfg;
    acfg.lr = cfg.lr;
    Adam opt(acfg);
    if (model.prefix_stack().current) {
        for (Tensor t : model.prefix_stack().current->parameters()) opt.add_param(t);
    }
    for (int l = 0; l < 3; ++l) {
        std::optional<GradMask> wm, bm;
        if (masks_ptr != nullptr) {
            wm = masks_ptr->weight[static_cast<std::size_t>(l)];
            bm = masks_ptr->bias[static_cast<std::size_t>(l)];
        }
        opt.add_param(model.mlp().weight(l), std::move(wm), cfg.mlp_lr_scale);
        opt.add_param(model.mlp().bias(l), std::move(bm), cfg.mlp_lr_scale);
    }
    // Old-class logits stay in the softmax so the new classes are calibrated
    // against them, but their classifier rows are gradient-masked: batches of
    // new-task samples must not erode what the old rows learned.
    GradMask cls_w_mask = GradMask::zeros(model.classifier_weight().shape());
    GradMask cls_b_mask = GradMask::zeros(model.classifier_bias().shape());
    const int feat = model.classifier_weight().extent(1);
    RowDecay decay{model.classifier_weight(), model.classifier_bias(), {}, cfg.classifier_decay};
    for (int c : task.classes) {
        const int row = classes.logit_of(c);
        for (int j = 0; j < feat; ++j) {
            cls_w_mask.mutable_bits()[static_cast<std::size_t>(row) * feat + j] = 1;
        }
        cls_b_mask.mutable_bits()[static_cast<std::size_t>(row)] = 1;
        decay.rows.push_back(row);
    }
    opt.add_param(model.classifier_weight(), std::move(cls_w_mask));
    opt.add_param(model.classifier_bias(), std::move(cls_b_mask));

    run_epochs(model, opt, dataset, task.train, cfg, classes, masks_ptr, session, &decay);

    if (use_prefixes) freeze_current(model.prefix_stack());
    return profile_pass(model, dataset, task.train, session);
}

void train_finetune_session(ConSenseModel& model, const CsiDataset& dataset, const TaskData& task,
                            const SessionConfig& cfg, ClassMap& classes, bool first_session) {
    cfg.validate();
    validate_task_labels(dataset, task);
    classes.extend(task.classes);
    if (!first_session) model.expand_classifier(static_cast<int>(task.classes.size()));
    if (classes.seen() != model.seen_classes()) {
        throw ProtocolError("model has " + std::to_string(model.seen_classes()) +
                            " classifier rows for " + std::to_string(classes.seen()) + " seen classes");
    }
    Adam opt = make_optimizer(trainable_parameters(model), cfg, nullptr, model.mlp());
    run_epochs(model, opt, dataset, task.train, cfg, classes, nullptr, task.task_id);
}

}  // namespace consense

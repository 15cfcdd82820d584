#pragma once

#include <unordered_map>

#include "consense/adam.hpp"
#include "consense/dataio.hpp"
#include "consense/model.hpp"

namespace consense {

struct SessionConfig {
    int epochs = 50;
    /// Epoch count for the first session only; 0 means use `epochs`. The
    /// first session trains the shared backbone, so it usually needs a
    /// longer budget than the adapter-and-classifier sessions that follow.
    int initial_epochs = 0;
    float lr = 0.001f;
    /// Learning rate for sessions after the first; 0 means use `lr`.
    float incremental_lr = 0.0f;
    /// Step-size multiplier for the shared MLP during incremental sessions.
    /// The MLP serves every task, so it moves more conservatively than the
    /// per-task adapter and classifier rows. 1 = same rate.
    float mlp_lr_scale = 1.0f;
    int batch = 16;
    float epsilon = 0.05f;
    /// Decoupled weight decay on the classifier rows introduced in an
    /// incremental session (per step the new rows shrink by lr * this).
    /// Fresh rows must out-score confident old logits on their own classes;
    /// a norm penalty keeps them from inflating until they dominate old
    /// samples too. 0 disables.
    float classifier_decay = 0.0f;
    unsigned seed = 0;

    void validate() const;
};

/// Maps class ids to classifier logit indices in the order classes were
/// introduced, so shuffled class-to-task assignments stay consistent.
class ClassMap {
  public:
    void extend(const std::vector<int>& classes);
    int logit_of(int class_id) const;  // unseen class -> data error
    int seen() const { return static_cast<int>(order_.size()); }
    const std::vector<int>& order() const { return order_; }

  private:
    std::vector<int> order_;
    std::unordered_map<int, int> index_;
};

/// Fraction of the indexed samples whose argmax logit names their label.
double evaluate(ConSenseModel& model, const CsiDataset& dataset, const std::vector<int>& indices,
                const ClassMap& classes);

/// Mean per-neuron activations over the indexed samples (eval mode; token
/// means per sample, then batch mean).
ActivationProfile profile_pass(ConSenseModel& model, const CsiDataset& dataset,
                               const std::vector<int>& indices, int session);

/// Session 1: trains every parameter, then freezes the attention base and
/// returns the post-training activation profile.
ActivationProfile train_initial(ConSenseModel& model, const CsiDataset& dataset, const TaskData& task,
                                const SessionConfig& cfg, ClassMap& classes);

/// Session t >= 2: expands the classifier, optionally adds a trainable
/// prefix adapter, freezes stable MLP neurons against the previous profile,
/// trains adapter + unmasked MLP entries + classifier, freezes the adapter,
/// and returns the post-training profile. use_prefixes=false skips adapter
/// growth; use_selective=false retrains the whole MLP unmasked.
ActivationProfile train_incremental(ConSenseModel& model, const CsiDataset& dataset, const TaskData& task,
                                    const SessionConfig& cfg, ClassMap& classes,
                                    const ActivationProfile& previous, bool use_prefixes,
                                    bool use_selective, FreezeMaskSet* masks_out = nullptr);

/// Naive baseline session: every trainable parameter updates, nothing is
/// frozen or masked; the classifier still grows on incremental sessions.
void train_finetune_session(ConSenseModel& model, const CsiDataset& dataset, const TaskData& task,
                            const SessionConfig& cfg, ClassMap& classes, bool first_session);

}  // namespace consense

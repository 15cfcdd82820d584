#pragma once

#include <string>
#include <vector>

#include "consense/tensor.hpp"

namespace consense {

/// Labeled time-series samples, each t_len x channels, stored sample-major.
struct CsiDataset {
    std::string name;
    int t_len = 0;
    int channels = 0;
    int class_count = 0;
    std::vector<float> data;
    std::vector<int> labels;

    int count() const { return static_cast<int>(labels.size()); }
    std::size_t sample_floats() const {
        return static_cast<std::size_t>(t_len) * static_cast<std::size_t>(channels);
    }
    /// Copies sample i into a fresh t_len x channels tensor.
    Tensor sample(int i) const;
    int label(int i) const;
};

/// Per-class multi-sinusoid templates (distinct base frequency per class,
/// random phases and channel phase gradients) plus iid Gaussian noise.
/// Deterministic in seed; noise_sigma = 0 repeats the template exactly.
CsiDataset generate_synthetic(int classes, int per_class, int t_len, int channels, unsigned seed,
                              float noise_sigma, std::string name = "synthetic");

struct TaskSplitSpec {
    std::vector<int> class_counts;  // classes per task, in task order
    bool shuffle_classes = false;   // default: ascending contiguous assignment
    unsigned seed = 0;              // drives class shuffling and train/test splits
};

/// One task's class ids and its train/test sample indices into the dataset.
struct TaskData {
    int task_id = 0;  // 1-based
    std::vector<int> classes;
    std::vector<int> train;
    std::vector<int> test;
};

/// Partitions classes over tasks per the spec counts (disjoint, covering)
/// and splits each class's samples 4:1 train:test, seeded.
std::vector<TaskData> split_tasks(const CsiDataset& dataset, const TaskSplitSpec& spec);

/// Writes <base_path>.json (manifest) and <base_path>.f32 (raw little-endian
/// float32 blob). Parent directories are created as needed.
void save_dataset(const CsiDataset& dataset, const std::string& base_path);

/// Loads a dataset saved by save_dataset; malformed manifests or truncated
/// blobs raise a format error naming the byte offset.
CsiDataset load_dataset(const std::string& base_path);

/// One CSV row per sample: label, then the t_len * channels values.
void export_csv(const CsiDataset& dataset, const std::string& path);

}  // namespace consense

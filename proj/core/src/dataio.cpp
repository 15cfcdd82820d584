#include "consense/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "consense/seeds.hpp"

namespace consense {

namespace fs = std::filesystem;
using nlohmann::json;

Tensor CsiDataset::sample(int i) const {
    if (i < 0 || i >= count()) {
        throw UsageError("sample index " + std::to_string(i) + " out of range for " +
                         std::to_string(count()) + " samples");
    }
    const std::size_t n = sample_floats();
    std::vector<float> values(data.begin() + static_cast<std::ptrdiff_t>(n * static_cast<std::size_t>(i)),
                              data.begin() + static_cast<std::ptrdiff_t>(n * (static_cast<std::size_t>(i) + 1)));
    return Tensor::from_data({t_len, channels}, std::move(values));
}

int CsiDataset::label(int i) const {
    if (i < 0 || i >= count()) {
        throw UsageError("label index " + std::to_string(i) + " out of range for " +
                         std::to_string(count()) + " samples");
    }
    return labels[static_cast<std::size_t>(i)];
}

CsiDataset generate_synthetic(int classes, int per_class, int t_len, int channels, unsigned seed,
                              float noise_sigma, std::string name) {
    if (classes < 2) throw UsageError("synthetic generation needs >= 2 classes");
    if (per_class < 2) throw UsageError("synthetic generation needs >= 2 samples per class");
    if (t_len < 1 || channels < 1) throw UsageError("synthetic extents must be positive");
    if (noise_sigma < 0.0f) throw UsageError("noise sigma must be >= 0");

    constexpr int kComponents = 3;
    struct Component {
        float freq, amp, phase, channel_slope;
    };
    // Time-constant sinusoid across the channel axis; keeps class identity
    // visible after temporal averaging, which the sinusoids (integer cycle
    // counts, near-zero temporal mean) cannot do on their own. There are only
    // channels/2 distinct fingerprints (think: environment modes); once the
    // class count exceeds that, classes share a fingerprint and can only be
    // told apart by their temporal dynamics.
    struct ChannelProfile {
        float freq, phase;
    };
    constexpr float kProfileAmp = 1.2f;

    std::mt19937 rng(seed);
    std::uniform_real_distribution<float> phase_dist(0.0f, 2.0f * std::numbers::pi_v<float>);
    std::uniform_real_distribution<float> slope_dist(0.0f, 0.4f);
    const int base_freq_cycle = std::max(2, t_len / 4);
    const int profile_freq_cycle = std::max(2, channels / 2);
    std::uniform_int_distribution<int> extra_freq(1, std::max(2, t_len / 6));
    const float amps[kComponents] = {1.0f, 0.6f, 0.4f};

    std::vector<ChannelProfile> modes(static_cast<std::size_t>(profile_freq_cycle));
    for (int m = 0; m < profile_freq_cycle; ++m) {
        modes[static_cast<std::size_t>(m)] = {static_cast<float>(1 + m), phase_dist(rng)};
    }

    std::vector<std::array<Component, kComponents>> templates(static_cast<std::size_t>(classes));
    std::vector<ChannelProfile> profiles(static_cast<std::size_t>(classes));
    for (int c = 0; c < classes; ++c) {
        auto& comps = templates[static_cast<std::size_t>(c)];
        for (int k = 0; k < kComponents; ++k) {
            Component comp;
            comp.freq = k == 0 ? static_cast<float>(1 + c % base_freq_cycle)
                               : static_cast<float>(extra_freq(rng));
            comp.amp = amps[k];
            comp.phase = phase_dist(rng);
            comp.channel_slope = slope_dist(rng);
            comps[static_cast<std::size_t>(k)] = comp;
        }
        profiles[static_cast<std::size_t>(c)] = modes[static_cast<std::size_t>(c % profile_freq_cycle)];
    }

    CsiDataset ds;
    ds.name = std::move(name);
    ds.t_len = t_len;
    ds.channels = channels;
    ds.class_count = classes;
    const std::size_t sample_n = static_cast<std::size_t>(t_len) * static_cast<std::size_t>(channels);
    ds.data.resize(sample_n * static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class));
    ds.labels.resize(static_cast<std::size_t>(classes) * static_cast<std::size_t>(per_class));

    std::normal_distribution<float> noise(0.0f, noise_sigma > 0.0f ? noise_sigma : 1.0f);
    std::size_t pos = 0;
    for (int c = 0; c < classes; ++c) {
        const auto& comps = templates[static_cast<std::size_t>(c)];
        const ChannelProfile& prof = profiles[static_cast<std::size_t>(c)];
        for (int s = 0; s < per_class; ++s) {
            ds.labels[static_cast<std::size_t>(c) * per_class + s] = c;
            for (int p = 0; p < t_len; ++p) {
                for (int ch = 0; ch < channels; ++ch) {
                    float v = kProfileAmp *
                              std::sin(2.0f * std::numbers::pi_v<float> * prof.freq *
                                           static_cast<float>(ch) / static_cast<float>(channels) +
                                       prof.phase);
                    for (const Component& comp : comps) {
                        v += comp.amp * std::sin(2.0f * std::numbers::pi_v<float> * comp.freq *
                                                     static_cast<float>(p) / static_cast<float>(t_len) +
                                                 comp.phase + comp.channel_slope * static_cast<float>(ch));
                    }
                    if (noise_sigma > 0.0f) v += noise(rng);
                    ds.data[pos++] = v;
                }
            }
        }
    }
    return ds;
}

std::vector<TaskData> split_tasks(const CsiDataset& dataset, const TaskSplitSpec& spec) {
    const int total = std::accumulate(spec.class_counts.begin(), spec.class_counts.end(), 0);
    if (spec.class_counts.empty() || total != dataset.class_count) {
        throw UsageError("task class counts sum to " + std::to_string(total) + ", dataset has " +
                         std::to_string(dataset.class_count) + " classes");
    }
    for (int c : spec.class_counts) {
        if (c < 1) throw UsageError("each task needs at least one class");
    }

    std::vector<std::vector<int>> per_class(static_cast<std::size_t>(dataset.class_count));
    for (int i = 0; i < dataset.count(); ++i) {
        const int label = dataset.labels[static_cast<std::size_t>(i)];
        if (label < 0 || label >= dataset.class_count) {
            throw DataError("label " + std::to_string(label) + " outside [0, " +
                            std::to_string(dataset.class_count) + ")");
        }
        per_class[static_cast<std::size_t>(label)].push_back(i);
    }
    for (int c = 0; c < dataset.class_count; ++c) {
        if (per_class[static_cast<std::size_t>(c)].size() < 2) {
            throw DataError("class " + std::to_string(c) +
                            " needs at least 2 samples to split into train and test");
        }
    }

    std::vector<int> class_order(static_cast<std::size_t>(dataset.class_count));
    std::iota(class_order.begin(), class_order.end(), 0);
    if (spec.shuffle_classes) {
        std::mt19937 rng(seed32(spec.seed, 0x5EEDu));
        std::shuffle(class_order.begin(), class_order.end(), rng);
    }

    std::vector<TaskData> tasks;
    tasks.reserve(spec.class_counts.size());
    std::size_t next_class = 0;
    for (std::size_t t = 0; t < spec.class_counts.size(); ++t) {
        TaskData task;
        task.task_id = static_cast<int>(t) + 1;
        for (int k = 0; k < spec.class_counts[t]; ++k) {
            task.classes.push_back(class_order[next_class++]);
        }
        for (int c : task.classes) {
            std::vector<int> idx = per_class[static_cast<std::size_t>(c)];
            std::mt19937 rng(seed32(spec.seed, 0x5917u + static_cast<unsigned>(c)));
            std::shuffle(idx.begin(), idx.end(), rng);
            const int n = static_cast<int>(idx.size());
            int n_train = static_cast<int>(std::lround(0.8 * n));
            n_train = std::clamp(n_train, 1, n - 1);
            std::vector<int> train(idx.begin(), idx.begin() + n_train);
            std::vector<int> test(idx.begin() + n_train, idx.end());
            std::sort(train.begin(), train.end());
            std::sort(test.begin(), test.end());
            task.train.insert(task.train.end(), train.begin(), train.end());
            task.test.insert(task.test.end(), test.begin(), test.end());
        }
        tasks.push_back(std::move(task));
    }
    return tasks;
}

namespace {

void validate_dataset_fields(const CsiDataset& ds, const std::string& origin) {
    if (ds.t_len < 1 || ds.channels < 1 || ds.class_count < 1) {
        throw FormatError(origin + ": non-positive extents in manifest");
    }
    if (ds.data.size() != ds.sample_floats() * static_cast<std::size_t>(ds.count())) {
        throw FormatError(origin + ": blob holds " + std::to_string(ds.data.size()) +
                          " floats, manifest implies " +
                          std::to_string(ds.sample_floats() * static_cast<std::size_t>(ds.count())));
    }
    for (std::size_t i = 0; i < ds.labels.size(); ++i) {
        if (ds.labels[i] < 0 || ds.labels[i] >= ds.class_count) {
            throw FormatError(origin + ": label " + std::to_string(ds.labels[i]) + " at sample " +
                              std::to_string(i) + " outside [0, " + std::to_string(ds.class_count) + ")");
        }
    }
}

}  // namespace

void save_dataset(const CsiDataset& dataset, const std::string& base_path) {
    validate_dataset_fields(dataset, base_path);
    const fs::path base(base_path);
    if (base.has_parent_path()) fs::create_directories(base.parent_path());

    json manifest;
    manifest["name"] = dataset.name;
    manifest["count"] = dataset.count();
    manifest["t"] = dataset.t_len;
    manifest["c"] = dataset.channels;
    manifest["class_count"] = dataset.class_count;
    manifest["labels"] = dataset.labels;
    manifest["dtype"] = "f32le";
    manifest["blob"] = base.filename().string() + ".f32";

    std::ofstream mf(base_path + ".json", std::ios::trunc);
    if (!mf) throw FormatError("cannot write " + base_path + ".json");
    mf << manifest.dump(2) << "\n";

    std::ofstream bf(base_path + ".f32", std::ios::binary | std::ios::trunc);
    if (!bf) throw FormatError("cannot write " + base_path + ".f32");
    bf.write(reinterpret_cast<const char*>(dataset.data.data()),
             static_cast<std::streamsize>(dataset.data.size() * sizeof(float)));
    if (!bf) throw FormatError("short write to " + base_path + ".f32");
}

CsiDataset load_dataset(const std::string& base_path) {
    const std::string manifest_path = base_path + ".json";
    std::ifstream mf(manifest_path);
    if (!mf) throw FormatError("cannot open " + manifest_path);

    json manifest;
    try {
        manifest = json::parse(mf);
    } catch (const json::parse_error& e) {
        throw FormatError(manifest_path + ": parse error at byte " + std::to_string(e.byte) + ": " +
                          e.what());
    }

    CsiDataset ds;
    try {
        ds.name = manifest.at("name").get<std::string>();
        ds.t_len = manifest.at("t").get<int>();
        ds.channels = manifest.at("c").get<int>();
        ds.class_count = manifest.at("class_count").get<int>();
        ds.labels = manifest.at("labels").get<std::vector<int>>();
        if (manifest.at("dtype").get<std::string>() != "f32le") {
            throw FormatError(manifest_path + ": unsupported dtype '" +
                              manifest.at("dtype").get<std::string>() + "'");
        }
        const int count = manifest.at("count").get<int>();
        if (count != ds.count()) {
            throw FormatError(manifest_path + ": count " + std::to_string(count) + " does not match " +
                              std::to_string(ds.count()) + " labels");
        }
    } catch (const json::exception& e) {
        throw FormatError(manifest_path + ": bad manifest: " + e.what());
    }

    const std::string blob_path = base_path + ".f32";
    std::error_code ec;
    const auto blob_size = fs::file_size(blob_path, ec);
    if (ec) throw FormatError("cannot stat " + blob_path + ": " + ec.message());
    const std::size_t expected =
        ds.sample_floats() * static_cast<std::size_t>(ds.count()) * sizeof(float);
    if (blob_size != expected) {
        throw FormatError(blob_path + ": expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(blob_size) + " (differs at byte " +
                          std::to_string(std::min<std::uintmax_t>(blob_size, expected)) + ")");
    }
    std::ifstream bf(blob_path, std::ios::binary);
    if (!bf) throw FormatError("cannot open " + blob_path);
    ds.data.resize(expected / sizeof(float));
    bf.read(reinterpret_cast<char*>(ds.data.data()), static_cast<std::streamsize>(expected));
    if (bf.gcount() != static_cast<std::streamsize>(expected)) {
        throw FormatError(blob_path + ": truncated read at byte " + std::to_string(bf.gcount()));
    }
    validate_dataset_fields(ds, base_path);
    return ds;
}

void export_csv(const CsiDataset& dataset, const std::string& path) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.precision(std::numeric_limits<float>::max_digits10);
    const std::size_t n = dataset.sample_floats();
    for (int i = 0; i < dataset.count(); ++i) {
        out << dataset.labels[static_cast<std::size_t>(i)];
        const float* row = dataset.data.data() + n * static_cast<std::size_t>(i);
        for (std::size_t j = 0; j < n; ++j) out << "," << row[j];
        out << "\n";
    }
}

}  // namespace consense

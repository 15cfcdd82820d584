#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <consense/dataio.hpp>

#include "helpers.hpp"

using namespace consense;
using namespace testutil;

namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    std::ostringstream out;
    out << f.rdbuf();
    return out.str();
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) : path(fs::temp_directory_path() / ("consense_data_" + tag)) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("generation is deterministic in the seed") {
    CsiDataset a = generate_synthetic(4, 5, 16, 6, 99, 0.3f);
    CsiDataset b = generate_synthetic(4, 5, 16, 6, 99, 0.3f);
    CsiDataset c = generate_synthetic(4, 5, 16, 6, 100, 0.3f);
    CHECK(a.labels == b.labels);
    CHECK(bits_equal(std::span<const float>(a.data), std::span<const float>(b.data)));
    CHECK_FALSE(bits_equal(std::span<const float>(a.data), std::span<const float>(c.data)));
    CHECK(a.count() == 20);
    CHECK(a.sample_floats() == 96);
    CHECK(a.class_count == 4);
}

TEST_CASE("zero noise repeats each class template exactly") {
    CsiDataset ds = generate_synthetic(3, 4, 12, 6, 7, 0.0f);
    for (int c = 0; c < 3; ++c) {
        Tensor first = ds.sample(c * 4);
        for (int s = 1; s < 4; ++s) {
            CHECK(bits_equal(first, ds.sample(c * 4 + s)));
        }
    }
    // Different classes still differ.
    CHECK(max_abs_diff(ds.sample(0).data(), ds.sample(4).data()) > 1e-3);
}

TEST_CASE("labels are sample-major by class") {
    CsiDataset ds = generate_synthetic(3, 2, 8, 4, 1, 0.1f);
    CHECK(ds.labels == std::vector<int>{0, 0, 1, 1, 2, 2});
    CHECK(ds.label(3) == 1);
    CHECK_THROWS_AS(ds.sample(6), UsageError);
    CHECK_THROWS_AS(ds.label(-1), UsageError);
}

TEST_CASE("noisy samples stay nearest their own class template") {
    // At sigma 0.1 the class structure dominates the noise: every noisy
    // sample is closest to its own class's clean template.
    CsiDataset clean = generate_synthetic(16, 2, 64, 16, 31, 0.0f);
    CsiDataset noisy = generate_synthetic(16, 6, 64, 16, 31, 0.1f);
    int correct = 0;
    for (int i = 0; i < noisy.count(); ++i) {
        const Tensor x = noisy.sample(i);
        double best = 1e300;
        int best_class = -1;
        for (int c = 0; c < 16; ++c) {
            const Tensor t = clean.sample(c * 2);
            double dist = 0.0;
            for (std::size_t k = 0; k < x.size(); ++k) {
                const double d = x.data()[k] - t.data()[k];
                dist += d * d;
            }
            if (dist < best) {
                best = dist;
                best_class = c;
            }
        }
        correct += best_class == noisy.label(i) ? 1 : 0;
    }
    CHECK(correct == noisy.count());
}

TEST_CASE("generation validates its arguments") {
    CHECK_THROWS_AS(generate_synthetic(1, 4, 8, 4, 1, 0.1f), UsageError);
    CHECK_THROWS_AS(generate_synthetic(4, 1, 8, 4, 1, 0.1f), UsageError);
    CHECK_THROWS_AS(generate_synthetic(4, 4, 0, 4, 1, 0.1f), UsageError);
    CHECK_THROWS_AS(generate_synthetic(4, 4, 8, 4, 1, -0.5f), UsageError);
}

TEST_CASE("task splits partition classes in order and samples four to one") {
    CsiDataset ds = generate_synthetic(16, 10, 8, 4, 3, 0.2f);
    TaskSplitSpec spec;
    spec.class_counts = {8, 2, 2, 2, 2};
    spec.seed = 5;
    std::vector<TaskData> tasks = split_tasks(ds, spec);
    REQUIRE(tasks.size() == 5);
    CHECK(tasks[0].classes == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(tasks[1].classes == std::vector<int>{8, 9});
    CHECK(tasks[4].classes == std::vector<int>{14, 15});
    for (std::size_t t = 0; t < tasks.size(); ++t) {
        CHECK(tasks[t].task_id == static_cast<int>(t) + 1);
        const int classes = static_cast<int>(tasks[t].classes.size());
        CHECK(static_cast<int>(tasks[t].train.size()) == classes * 8);
        CHECK(static_cast<int>(tasks[t].test.size()) == classes * 2);
    }

    // Train/test never overlap and together cover exactly the dataset.
    std::set<int> seen;
    for (const TaskData& t : tasks) {
        for (int i : t.train) CHECK(seen.insert(i).second);
        for (int i : t.test) CHECK(seen.insert(i).second);
    }
    CHECK(static_cast<int>(seen.size()) == ds.count());
}

TEST_CASE("alternative task layouts split cleanly") {
    CsiDataset m = generate_synthetic(27, 5, 8, 4, 9, 0.2f);
    std::vector<TaskData> mmfi = split_tasks(m, {{9, 9, 9}, false, 1});
    REQUIRE(mmfi.size() == 3);
    for (const TaskData& t : mmfi) CHECK(t.classes.size() == 9);

    CsiDataset x = generate_synthetic(48, 5, 8, 4, 9, 0.2f);
    std::vector<TaskData> xrf = split_tasks(x, {{24, 6, 6, 6, 6}, false, 1});
    REQUIRE(xrf.size() == 5);
    CHECK(xrf[0].classes.size() == 24);
    CHECK(xrf[4].classes.front() == 42);
}

TEST_CASE("shuffled class assignment is a seeded permutation") {
    CsiDataset ds = generate_synthetic(16, 5, 8, 4, 13, 0.2f);
    TaskSplitSpec spec{{8, 8}, true, 21};
    std::vector<TaskData> a = split_tasks(ds, spec);
    std::vector<TaskData> b = split_tasks(ds, spec);
    CHECK(a[0].classes == b[0].classes);
    CHECK(a[1].classes == b[1].classes);

    std::vector<int> all = a[0].classes;
    all.insert(all.end(), a[1].classes.begin(), a[1].classes.end());
    std::sort(all.begin(), all.end());
    std::vector<int> want(16);
    for (int i = 0; i < 16; ++i) want[static_cast<std::size_t>(i)] = i;
    CHECK(all == want);

    std::vector<TaskData> plain = split_tasks(ds, {{8, 8}, false, 21});
    CHECK(a[0].classes != plain[0].classes);
}

TEST_CASE("split totals must match the class count") {
    CsiDataset ds = generate_synthetic(6, 4, 8, 4, 1, 0.2f);
    CHECK_THROWS_AS(split_tasks(ds, {{4, 4}, false, 1}), UsageError);
    CHECK_THROWS_AS(split_tasks(ds, {{6, 0}, false, 1}), UsageError);
}

TEST_CASE("datasets round-trip through disk byte-exact") {
    TempDir dir("roundtrip");
    CsiDataset ds = generate_synthetic(4, 6, 10, 5, 77, 0.2f, "roundtrip");
    const std::string base1 = (dir.path / "a" / "ds").string();
    const std::string base2 = (dir.path / "b" / "ds").string();
    save_dataset(ds, base1);  // nested directories are created on demand

    CsiDataset loaded = load_dataset(base1);
    CHECK(loaded.name == ds.name);
    CHECK(loaded.t_len == ds.t_len);
    CHECK(loaded.channels == ds.channels);
    CHECK(loaded.class_count == ds.class_count);
    CHECK(loaded.labels == ds.labels);
    CHECK(bits_equal(std::span<const float>(loaded.data), std::span<const float>(ds.data)));

    save_dataset(loaded, base2);
    CHECK(read_file(base1 + ".json") == read_file(base2 + ".json"));
    CHECK(read_file(base1 + ".f32") == read_file(base2 + ".f32"));
}

TEST_CASE("malformed on-disk datasets raise format errors") {
    TempDir dir("malformed");
    CsiDataset ds = generate_synthetic(3, 4, 6, 4, 5, 0.1f);
    const std::string base = (dir.path / "ds").string();
    save_dataset(ds, base);

    SUBCASE("truncated blob") {
        fs::resize_file(base + ".f32", fs::file_size(base + ".f32") - 10);
        CHECK_THROWS_AS(load_dataset(base), FormatError);
    }
    SUBCASE("unparseable manifest") {
        std::ofstream(base + ".json") << "{ not json";
        CHECK_THROWS_AS(load_dataset(base), FormatError);
    }
    SUBCASE("manifest and labels disagree") {
        std::string manifest = read_file(base + ".json");
        const auto pos = manifest.find("\"class_count\": 3");
        REQUIRE(pos != std::string::npos);
        manifest.replace(pos, 16, "\"class_count\": 2");
        std::ofstream(base + ".json") << manifest;
        CHECK_THROWS_AS(load_dataset(base), FormatError);
    }
    SUBCASE("missing files") {
        CHECK_THROWS_AS(load_dataset(base + "nope"), FormatError);
    }
}

TEST_CASE("csv export writes one labeled row per sample") {
    TempDir dir("csv");
    CsiDataset ds = generate_synthetic(2, 3, 4, 3, 15, 0.1f);
    const fs::path path = dir.path / "ds.csv";
    export_csv(ds, path.string());

    std::ifstream f(path);
    std::string line;
    int rows = 0;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        const auto commas = std::count(line.begin(), line.end(), ',');
        CHECK(commas == 12);  // label + t_len * channels values
        CHECK(line.substr(0, line.find(',')) == std::to_string(ds.label(rows)));
        ++rows;
    }
    CHECK(rows == ds.count());
}

#include "consense/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include <json.hpp>

namespace consense {

namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'C', 'S', 'N', 'S', 'C', 'K', 'P', 'T'};

json config_to_json(const ModelConfig& cfg) {
    return json{{"t_len", cfg.t_len},
                {"channels", cfg.channels},
                {"heads", cfg.heads},
                {"gaussians", cfg.gaussians},
                {"sigma_init", cfg.sigma_init},
                {"mlp_hidden1", cfg.mlp_hidden1},
                {"mlp_hidden2", cfg.mlp_hidden2},
                {"dropout", cfg.dropout},
                {"adapter_rank", cfg.adapter_rank},
                {"prefix_init", cfg.prefix_init},
                {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig cfg;
    cfg.t_len = j.at("t_len").get<int>();
    cfg.channels = j.at("channels").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.gaussians = j.at("gaussians").get<int>();
    cfg.sigma_init = j.at("sigma_init").get<float>();
    cfg.mlp_hidden1 = j.at("mlp_hidden1").get<int>();
    cfg.mlp_hidden2 = j.at("mlp_hidden2").get<int>();
    cfg.dropout = j.at("dropout").get<float>();
    cfg.adapter_rank = j.at("adapter_rank").get<int>();
    cfg.prefix_init = j.at("prefix_init").get<std::string>();
    cfg.seed = j.at("seed").get<unsigned>();
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const ConSenseModel& model, int session) {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());

    json manifest;
    manifest["version"] = 1;
    manifest["session"] = session;
    manifest["class_count"] = model.seen_classes();
    manifest["config"] = config_to_json(model.config());
    manifest["base_frozen"] = model.attention().frozen;

    json adapters = json::array();
    const PrefixStack& stack = model.prefix_stack();
    auto describe = [](const PrefixAdapter& a) {
        return json{{"task_id", a.task_id},
                    {"kind", to_string(a.kind)},
                    {"rank", a.rank},
                    {"frozen", a.frozen}};
    };
    if (stack.current) adapters.push_back(describe(*stack.current));
    for (const PrefixAdapter& a : stack.frozen) adapters.push_back(describe(a));
    manifest["adapters"] = adapters;

    const auto params = model.named_parameters();
    json tensors = json::array();
    std::size_t offset = 0;
    for (const auto& [name, t] : params) {
        tensors.push_back(json{
            {"name", name}, {"shape", t.shape()}, {"offset", offset}, {"trainable", t.trainable()}});
        offset += t.size() * sizeof(float);
    }
    manifest["tensors"] = tensors;

    const std::string manifest_str = manifest.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot write " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t len = static_cast<std::uint32_t>(manifest_str.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
    for (const auto& [name, t] : params) {
        out.write(reinterpret_cast<const char*>(t.data().data()),
                  static_cast<std::streamsize>(t.size() * sizeof(float)));
    }
    if (!out) throw FormatError("short write to " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (bytes.size() < sizeof(kMagic) + sizeof(std::uint32_t)) {
        throw FormatError(path + ": truncated header, only " + std::to_string(bytes.size()) + " bytes");
    }
    if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
        throw FormatError(path + ": bad magic at byte 0");
    }
    std::uint32_t len = 0;
    std::memcpy(&len, bytes.data() + sizeof(kMagic), sizeof(len));
    const std::size_t manifest_start = sizeof(kMagic) + sizeof(std::uint32_t);
    if (bytes.size() < manifest_start + len) {
        throw FormatError(path + ": manifest truncated at byte " + std::to_string(bytes.size()) +
                          ", expected " + std::to_string(manifest_start + len));
    }

    json manifest;
    try {
        manifest = json::parse(bytes.begin() + static_cast<std::ptrdiff_t>(manifest_start),
                               bytes.begin() + static_cast<std::ptrdiff_t>(manifest_start + len));
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": manifest parse error at byte " +
                          std::to_string(manifest_start + e.byte) + ": " + e.what());
    }

    const std::size_t blob_start = manifest_start + len;
    try {
        const ModelConfig cfg = config_from_json(manifest.at("config"));
        const int class_count = manifest.at("class_count").get<int>();
        const int session = manifest.at("session").get<int>();

        ConSenseModel model(cfg, class_count);
        PrefixStack& stack = model.prefix_stack();
        for (const json& ad : manifest.at("adapters")) {
            PrefixAdapter a = make_prefix_adapter(ad.at("task_id").get<int>(), cfg.channels,
                                                  ad.at("rank").get<int>(),
                                                  prefix_kind_from_string(ad.at("kind").get<std::string>()),
                                                  cfg.t_len, 0);
            if (ad.at("frozen").get<bool>()) {
                a.frozen = true;
                for (Tensor t : a.parameters()) t.set_trainable(false);
                stack.frozen.push_back(std::move(a));
            } else {
                if (stack.current) throw FormatError(path + ": multiple trainable adapters in manifest");
                stack.current = std::move(a);
            }
        }
        if (manifest.at("base_frozen").get<bool>()) freeze_base(model.attention());

        std::unordered_map<std::string, Tensor> by_name;
        for (auto& [name, t] : model.named_parameters()) by_name.emplace(name, t);

        std::size_t filled = 0;
        for (const json& te : manifest.at("tensors")) {
            const std::string name = te.at("name").get<std::string>();
            auto it = by_name.find(name);
            if (it == by_name.end()) throw FormatError(path + ": unknown tensor '" + name + "'");
            Tensor t = it->second;
            const Shape shape = te.at("shape").get<Shape>();
            if (shape != t.shape()) {
                throw FormatError(path + ": tensor '" + name + "' has shape " + shape_to_string(shape) +
                                  ", model expects " + shape_to_string(t.shape()));
            }
            const std::size_t offset = te.at("offset").get<std::size_t>();
            const std::size_t nbytes = t.size() * sizeof(float);
            if (blob_start + offset + nbytes > bytes.size()) {
                throw FormatError(path + ": blob truncated at byte " + std::to_string(bytes.size()) +
                                  ", tensor '" + name + "' ends at " +
                                  std::to_string(blob_start + offset + nbytes));
            }
            std::memcpy(t.mutable_data().data(), bytes.data() + blob_start + offset, nbytes);
            t.set_trainable(te.at("trainable").get<bool>());
            ++filled;
        }
        if (filled != by_name.size()) {
            throw FormatError(path + ": manifest lists " + std::to_string(filled) + " tensors, model has " +
                              std::to_string(by_name.size()));
        }
        return Checkpoint{std::move(model), session};
    } catch (const json::exception& e) {
        throw FormatError(path + ": bad manifest: " + e.what());
    }
}

}  // namespace consense

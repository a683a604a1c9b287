#include "reid/checkpoint.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "reid/errors.hpp"

namespace reid {

namespace {

constexpr char kMagic[8] = {'R', 'E', 'I', 'D', 'C', 'K', 'P', 'T'};

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
    nlohmann::ordered_json j;
    j["backbone"] = cfg.backbone;
    j["input"] = {cfg.input.h, cfg.input.w, cfg.input.c};
    j["feature_dim"] = cfg.feature_dim;
    j["conv_channels"] = cfg.conv_channels;
    j["verif_hidden"] = cfg.verif_hidden;
    j["num_classes"] = cfg.num_classes;
    j["dropout_keep"] = cfg.dropout_keep;
    j["verification_weight"] = cfg.loss.verification_weight;
    j["classification_weight"] = cfg.loss.classification_weight;
    j["num_aux_heads"] = cfg.loss.num_aux_heads;
    j["init_seed"] = cfg.init_seed;
    return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    try {
        cfg.backbone = j.at("backbone").get<std::string>();
        const auto& in = j.at("input");
        cfg.input = ImageShape{in.at(0).get<int>(), in.at(1).get<int>(), in.at(2).get<int>()};
        cfg.feature_dim = j.at("feature_dim").get<int>();
        cfg.conv_channels = j.at("conv_channels").get<int>();
        cfg.verif_hidden = j.at("verif_hidden").get<int>();
        cfg.num_classes = j.at("num_classes").get<int>();
        cfg.dropout_keep = j.at("dropout_keep").get<double>();
        cfg.loss.verification_weight = j.at("verification_weight").get<double>();
        cfg.loss.classification_weight = j.at("classification_weight").get<double>();
        cfg.loss.num_aux_heads = j.at("num_aux_heads").get<int>();
        cfg.init_seed = j.at("init_seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }
    return cfg;
}

}  // namespace

void save_checkpoint(SiameseModel& model, long iteration, const std::filesystem::path& path) {
    nlohmann::ordered_json header;
    header["model"] = config_to_json(model.config());
    header["iteration"] = iteration;
    nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
    for (auto& g : model.param_groups())
        for (auto& t : g.tensors) tensors.push_back({{"name", t.name}, {"size", t.size}});
    header["tensors"] = tensors;
    const std::string header_str = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const std::uint64_t len = header_str.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_str.data(), static_cast<std::streamsize>(header_str.size()));
    for (auto& g : model.param_groups())
        for (auto& t : g.tensors)
            out.write(reinterpret_cast<const char*>(t.value), static_cast<std::streamsize>(t.size * sizeof(double)));
    if (!out) throw IoError("failed writing checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());

    char magic[8] = {};
    in.read(magic, sizeof(magic));
    if (!in || std::string(magic, 8) != std::string(kMagic, 8))
        throw CheckpointError("file " + path.string() + " is not a checkpoint (bad magic)");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (!in || version != kCheckpointVersion)
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version) + " (want " +
                              std::to_string(kCheckpointVersion) + ")");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header_str(len, '\0');
    in.read(header_str.data(), static_cast<std::streamsize>(len));
    if (!in) throw CheckpointError("truncated checkpoint header in " + path.string());

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("checkpoint header is not valid JSON: ") + e.what());
    }
    const ModelConfig cfg = config_from_json(header.at("model"));

    LoadedCheckpoint loaded{SiameseModel(cfg), header.value("iteration", 0L)};

    auto groups = loaded.model.param_groups();
    std::vector<TensorRef*> refs;
    for (auto& g : groups)
        for (auto& t : g.tensors) refs.push_back(&t);

    const auto& tensors = header.at("tensors");
    if (tensors.size() != refs.size())
        throw CheckpointError("checkpoint lists " + std::to_string(tensors.size()) + " tensors, model has " +
                              std::to_string(refs.size()));
    for (std::size_t i = 0; i < refs.size(); ++i) {
        const std::string name = tensors.at(i).at("name").get<std::string>();
        const Eigen::Index size = tensors.at(i).at("size").get<Eigen::Index>();
        if (name != refs[i]->name)
            throw CheckpointError("checkpoint tensor '" + name + "' does not match model tensor '" +
                                  refs[i]->name + "'");
        if (size != refs[i]->size)
            throw CheckpointError("checkpoint tensor '" + name + "' has size " + std::to_string(size) +
                                  ", model expects " + std::to_string(refs[i]->size));
        in.read(reinterpret_cast<char*>(refs[i]->value), static_cast<std::streamsize>(size * sizeof(double)));
        if (!in) throw CheckpointError("truncated tensor data in " + path.string());
    }
    return loaded;
}

}  // namespace reid

#include "reid/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "reid/errors.hpp"

namespace reid {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r\n");
    if (begin == std::string::npos) return "";
    const auto end = s.find_last_not_of(" \t\r\n");
    return s.substr(begin, end - begin + 1);
}

}  // namespace

std::string ConfigMap::get_string(const std::string& key, const std::string& fallback) const {
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
}

long ConfigMap::get_int(const std::string& key, long fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const long v = std::stol(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects an integer, got '" + it->second + "'");
    }
}

std::uint64_t ConfigMap::get_seed(const std::string& key, std::uint64_t fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        return std::stoull(it->second);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a non-negative integer, got '" + it->second + "'");
    }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
        std::size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument(it->second);
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' expects a number, got '" + it->second + "'");
    }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "yes") return true;
    if (it->second == "false" || it->second == "0" || it->second == "no") return false;
    throw ConfigError("config key '" + key + "' expects true/false, got '" + it->second + "'");
}

std::vector<double> ConfigMap::get_double_list(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : get_string_list(key)) {
        try {
            out.push_back(std::stod(tok));
        } catch (const std::exception&) {
            throw ConfigError("config key '" + key + "' expects numbers, got '" + tok + "'");
        }
    }
    return out;
}

std::vector<std::string> ConfigMap::get_string_list(const std::string& key) const {
    std::vector<std::string> out;
    auto it = values_.find(key);
    if (it == values_.end()) return out;
    std::stringstream ss(it->second);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (!tok.empty()) out.push_back(tok);
    }
    return out;
}

const std::vector<ConfigKey>& config_registry() {
    static const std::vector<ConfigKey> keys = {
        {"seed", "global seed; module seeds default to seed + fixed offset"},
        {"out.dir", "output directory for command artifacts"},

        {"data.manifest", "manifest CSV of the dataset to evaluate/adapt on"},
        {"data.stages", "training stages: manifests split by ';', merged within a stage by '+'"},

        {"synth.num_identities", "synthetic: identity count"},
        {"synth.images_per_identity_per_camera", "synthetic: images per identity per camera"},
        {"synth.num_cameras", "synthetic: camera count"},
        {"synth.height", "synthetic: image height"},
        {"synth.width", "synthetic: image width"},
        {"synth.channels", "synthetic: channels (1 or 3)"},
        {"synth.cross_view_noise", "synthetic: additive pixel noise magnitude"},
        {"synth.seed", "synthetic: generator seed"},

        {"batch.k", "identities per minibatch"},
        {"batch.m", "images per identity per minibatch"},
        {"batch.seed", "sampler seed"},

        {"model.backbone", "backbone identifier (toy_conv)"},
        {"model.feature_dim", "feature dimension D"},
        {"model.conv_channels", "toy backbone conv width"},
        {"model.verif_hidden", "verification subnet FC width"},
        {"model.dropout_keep", "dropout keep probability p"},
        {"model.aux_heads", "auxiliary attachment points (0 or 2)"},
        {"model.verification_weight", "verification loss weight"},
        {"model.classification_weight", "classification loss weight"},
        {"model.seed", "parameter initialisation seed"},

        {"train.initial_lr", "initial learning rate"},
        {"train.lr_decay_factor", "learning rate multiplier per decay interval"},
        {"train.lr_decay_interval", "iterations between learning rate decays"},
        {"train.step1_iters", "fine-tuning step 1 (head only) iterations"},
        {"train.step2_iters", "fine-tuning step 2 (all layers) iterations"},
        {"train.momentum", "SGD momentum"},
        {"train.weight_decay", "L2 weight decay"},
        {"train.head_init_scale", "weight scale for freshly initialised heads"},
        {"train.seed", "training loop seed"},
        {"train.val_use", "validation split purpose: hyperparam (default) or early_stop"},

        {"augment.count", "augmented copies per training image"},
        {"augment.bounds.translate_frac", "max translation as a fraction of the side"},
        {"augment.bounds.scale_min", "min scale factor"},
        {"augment.bounds.scale_max", "max scale factor"},
        {"augment.bounds.rotate_deg", "max rotation in degrees"},

        {"eval.protocol", "single_shot, SQ or MQ"},
        {"eval.plot", "also write cmc.svg (true/false)"},
        {"eval.split_seed", "protocol probe/gallery assignment seed"},

        {"adapt.rounds", "co-training rounds"},
        {"adapt.lambda", "graph regularisation weight"},
        {"adapt.lambda_candidates", "comma list; when set, lambda is cross-validated"},
        {"adapt.k_atoms", "dictionary atoms (0 = auto)"},
        {"adapt.knn_k", "cross-view nearest neighbours per node"},
        {"adapt.anchor_camera", "anchor view camera id (-1 = smallest)"},
        {"adapt.solver_iters", "dictionary solver iteration cap"},
        {"adapt.seed", "adaptation seed"},

        {"io.checkpoint", "input checkpoint path"},
        {"io.resume", "resume training from io.checkpoint (true/false)"},

        {"dump.layer", "backbone layer whose responses to dump"},
        {"dump.images", "comma list of image_ids (empty = all)"},

        {"bench.feature_dim", "benchmark feature dimension"},
        {"bench.verif_hidden", "benchmark verification FC width"},
        {"bench.gallery_size", "benchmark gallery size"},
        {"bench.queries", "benchmark query count"},
        {"bench.seed", "benchmark seed"},
    };
    return keys;
}

void ConfigMap::validate_keys() const {
    for (const auto& [key, value] : values_) {
        const bool known = std::any_of(config_registry().begin(), config_registry().end(),
                                       [&](const ConfigKey& k) { return key == k.name; });
        if (!known) throw ConfigError("unknown config key '" + key + "'");
    }
}

ConfigMap load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path.string());
    ConfigMap cfg;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + " is not 'key = value': '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
        cfg.set(key, value);
    }
    return cfg;
}

void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& key_value_pairs) {
    for (const auto& kv : key_value_pairs) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("override '" + kv + "' is not of the form key=value");
        cfg.set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
}

// ---------------------------------------------------------------------------

std::uint64_t ExperimentConfig::global_seed() const { return raw.get_seed("seed", 12345); }

std::filesystem::path ExperimentConfig::out_dir() const { return raw.get_string("out.dir", "out"); }

SyntheticSpec ExperimentConfig::synth_spec() const {
    SyntheticSpec spec;
    spec.num_identities = static_cast<int>(raw.get_int("synth.num_identities", 10));
    spec.images_per_identity_per_camera =
        static_cast<int>(raw.get_int("synth.images_per_identity_per_camera", 2));
    spec.num_cameras = static_cast<int>(raw.get_int("synth.num_cameras", 2));
    spec.height = static_cast<int>(raw.get_int("synth.height", 16));
    spec.width = static_cast<int>(raw.get_int("synth.width", 16));
    spec.channels = static_cast<int>(raw.get_int("synth.channels", 3));
    spec.cross_view_noise = raw.get_double("synth.cross_view_noise", 0.0);
    spec.seed = raw.get_seed("synth.seed", global_seed() + seed_offset::synth);
    return spec;
}

ModelConfig ExperimentConfig::model_config() const {
    ModelConfig cfg;
    cfg.backbone = raw.get_string("model.backbone", "toy_conv");
    cfg.input.h = static_cast<int>(raw.get_int("synth.height", 16));
    cfg.input.w = static_cast<int>(raw.get_int("synth.width", 16));
    cfg.input.c = static_cast<int>(raw.get_int("synth.channels", 3));
    cfg.feature_dim = static_cast<int>(raw.get_int("model.feature_dim", 32));
    cfg.conv_channels = static_cast<int>(raw.get_int("model.conv_channels", 8));
    cfg.verif_hidden = static_cast<int>(raw.get_int("model.verif_hidden", 32));
    cfg.dropout_keep = raw.get_double("model.dropout_keep", 0.5);
    cfg.loss.num_aux_heads = static_cast<int>(raw.get_int("model.aux_heads", 0));
    cfg.loss.verification_weight = raw.get_double("model.verification_weight", 3.0);
    cfg.loss.classification_weight = raw.get_double("model.classification_weight", 1.0);
    cfg.init_seed = raw.get_seed("model.seed", global_seed() + seed_offset::model_init);
    return cfg;
}

TrainConfig ExperimentConfig::train_config() const {
    TrainConfig cfg;
    cfg.initial_lr = raw.get_double("train.initial_lr", 0.01);
    cfg.lr_decay_factor = raw.get_double("train.lr_decay_factor", 0.1);
    cfg.lr_decay_interval = raw.get_int("train.lr_decay_interval", 40000);
    cfg.step1_iters = raw.get_int("train.step1_iters", 200);
    cfg.step2_iters = raw.get_int("train.step2_iters", 2000);
    cfg.augmentations_per_image = static_cast<int>(raw.get_int("augment.count", 0));
    cfg.seed = raw.get_seed("train.seed", global_seed() + seed_offset::train);
    cfg.batch_k = static_cast<int>(raw.get_int("batch.k", 4));
    cfg.batch_m = static_cast<int>(raw.get_int("batch.m", 2));
    cfg.momentum = raw.get_double("train.momentum", 0.9);
    cfg.weight_decay = raw.get_double("train.weight_decay", 0.0);
    cfg.head_init_scale = raw.get_double("train.head_init_scale", 0.01);
    cfg.augment_bounds.translate_frac = raw.get_double("augment.bounds.translate_frac", 0.05);
    cfg.augment_bounds.scale_min = raw.get_double("augment.bounds.scale_min", 0.95);
    cfg.augment_bounds.scale_max = raw.get_double("augment.bounds.scale_max", 1.05);
    cfg.augment_bounds.rotate_deg = raw.get_double("augment.bounds.rotate_deg", 5.0);
    const std::string val_use = raw.get_string("train.val_use", "hyperparam");
    if (val_use == "hyperparam") cfg.val_use = ValUse::hyperparam;
    else if (val_use == "early_stop") cfg.val_use = ValUse::early_stop;
    else throw ConfigError("config key 'train.val_use' expects hyperparam or early_stop, got '" + val_use + "'");
    return cfg;
}

AdaptConfig ExperimentConfig::adapt_config() const {
    AdaptConfig cfg;
    cfg.rounds = static_cast<int>(raw.get_int("adapt.rounds", 3));
    cfg.lambda = raw.get_double("adapt.lambda", 0.1);
    cfg.k_atoms = static_cast<int>(raw.get_int("adapt.k_atoms", 0));
    cfg.knn_k = static_cast<int>(raw.get_int("adapt.knn_k", 3));
    cfg.anchor_camera = static_cast<int>(raw.get_int("adapt.anchor_camera", -1));
    cfg.solver_iters = static_cast<int>(raw.get_int("adapt.solver_iters", 50));
    cfg.seed = raw.get_seed("adapt.seed", global_seed() + seed_offset::adapt);
    cfg.train = train_config();
    return cfg;
}

EvalProtocol ExperimentConfig::eval_protocol() const {
    return protocol_from_string(raw.get_string("eval.protocol", "single_shot"));
}

std::vector<std::vector<std::string>> ExperimentConfig::stage_manifests() const {
    const std::string spec = raw.get_string("data.stages", "");
    std::vector<std::vector<std::string>> stages;
    std::stringstream ss(spec);
    std::string stage;
    while (std::getline(ss, stage, ';')) {
        stage = trim(stage);
        if (stage.empty()) continue;
        std::vector<std::string> manifests;
        std::stringstream inner(stage);
        std::string one;
        while (std::getline(inner, one, '+')) {
            one = trim(one);
            if (!one.empty()) manifests.push_back(one);
        }
        if (!manifests.empty()) stages.push_back(std::move(manifests));
    }
    return stages;
}

ExperimentConfig make_experiment_config(const ConfigMap& map) {
    map.validate_keys();
    ExperimentConfig cfg;
    cfg.raw = map;
    return cfg;
}

}  // namespace reid

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "reid/adapt.hpp"
#include "reid/dataset.hpp"
#include "reid/model.hpp"
#include "reid/train.hpp"

namespace reid {

// Flat dotted-key configuration: `key = value` lines, '#' comments.
// Command-line overrides replace file values. Unknown keys are rejected with
// the offending key named.
class ConfigMap {
public:
    void set(const std::string& key, const std::string& value) { values_[key] = value; }
    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    std::uint64_t get_seed(const std::string& key, std::uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key) const;
    std::vector<std::string> get_string_list(const std::string& key) const;

    const std::map<std::string, std::string>& values() const { return values_; }

    // Throws ConfigError naming the first key absent from the registry.
    void validate_keys() const;

private:
    std::map<std::string, std::string> values_;
};

ConfigMap load_config_file(const std::filesystem::path& path);
void apply_overrides(ConfigMap& cfg, const std::vector<std::string>& key_value_pairs);

// All recognised keys with one-line help (the CLI prints this table).
struct ConfigKey {
    const char* name;
    const char* help;
};
const std::vector<ConfigKey>& config_registry();

// Typed views over the flat map. Module seeds default to the global seed
// plus the module's fixed offset (see rng.hpp).
struct ExperimentConfig {
    ConfigMap raw;

    std::uint64_t global_seed() const;
    std::filesystem::path out_dir() const;

    SyntheticSpec synth_spec() const;
    ModelConfig model_config() const;
    TrainConfig train_config() const;
    AdaptConfig adapt_config() const;
    EvalProtocol eval_protocol() const;

    // Stage manifests for training: stages separated by ';', datasets merged
    // within a stage separated by '+'.
    std::vector<std::vector<std::string>> stage_manifests() const;
};

ExperimentConfig make_experiment_config(const ConfigMap& map);

}  // namespace reid

#pragma once

// A checkpoint is a directory holding `weights.index` / `weights.bin` (tensor
// archive of every model parameter under its checkpoint name) and
// `checkpoint.json` (config text, config hash, epoch, validation metrics).

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <json.hpp>

#include "svdamage/backbones/archive.hpp"
#include "svdamage/evaluation/metrics.hpp"
#include "svdamage/training/config.hpp"

namespace svdamage {

inline constexpr const char* kArtifactVersion = "0.1.0";

struct CheckpointRecord {
    std::string config_hash;
    std::string config_text;
    std::size_t epoch = 0;
    MetricsReport metrics;
};

inline void save_checkpoint(const std::filesystem::path& dir, DamageModel<float>& model, const ExperimentConfig& cfg,
                            std::size_t epoch, const MetricsReport& metrics) {
    std::filesystem::create_directories(dir);
    TensorArchive tensors;
    for (auto& [name, p] : model.named_parameters()) tensors.emplace(name, p->value);
    save_archive(dir / "weights.index", tensors);
    nlohmann::json j{{"format", "svdamage-checkpoint"},
                     {"artifact_version", kArtifactVersion},
                     {"config_hash", config_hash(cfg)},
                     {"config", cfg.to_text()},
                     {"epoch", epoch},
                     {"metrics", to_json(metrics)}};
    std::ofstream out(dir / "checkpoint.json");
    if (!out) throw RuntimeFailure("cannot write checkpoint in " + dir.string());
    out << j.dump(2) << '\n';
}

struct LoadedCheckpoint {
    CheckpointRecord record;
    ExperimentConfig config;
    std::unique_ptr<DamageModel<float>> model;
};

inline LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "checkpoint.json");
    if (!in) throw ValidationError("no checkpoint.json in " + dir.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("corrupt checkpoint.json in " + dir.string() + ": " + e.what());
    }
    LoadedCheckpoint lc;
    lc.record.config_hash = j.at("config_hash").get<std::string>();
    lc.record.config_text = j.at("config").get<std::string>();
    lc.record.epoch = j.at("epoch").get<std::size_t>();
    lc.record.metrics = report_from_json(j.at("metrics"));
    lc.config = parse_config_text(lc.record.config_text, (dir / "checkpoint.json").string());
    if (config_hash(lc.config) != lc.record.config_hash)
        throw ValidationError("checkpoint config hash mismatch in " + dir.string());
    lc.model = std::make_unique<DamageModel<float>>(lc.config.model_spec());
    const auto tensors = read_archive(dir / "weights.index");
    for (auto& [name, p] : lc.model->named_parameters()) {
        auto it = tensors.find(name);
        if (it == tensors.end()) throw ValidationError("checkpoint lacks parameter " + name);
        if (it->second.shape() != p->value.shape())
            throw ValidationError("checkpoint shape mismatch at " + name + ": " + shape_str(it->second.shape()) +
                                  " vs " + shape_str(p->value.shape()));
        p->value = it->second;
    }
    if (lc.config.freeze_backbone) lc.model->freeze_backbone();
    return lc;
}

} // namespace svdamage

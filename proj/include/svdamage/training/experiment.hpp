#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "svdamage/training/checkpoint.hpp"
#include "svdamage/training/trainer.hpp"

namespace svdamage {

inline std::unique_ptr<DamageModel<float>> build_model(const ExperimentConfig& cfg) {
    auto model = std::make_unique<DamageModel<float>>(cfg.model_spec());
    model->init(derive_seed(cfg.seed, 1));
    if (!cfg.pretrained.empty()) apply_pretrained(*model, cfg.pretrained);
    return model;
}

struct ExperimentResult {
    TrainResult training;
    MetricsReport report;
    std::filesystem::path checkpoint_dir, log_path, report_path;
    std::size_t train_samples = 0, val_samples = 0;
};

// Trains on the config's data, keeps the best-validation parameters, writes
// <out>/train_log.jsonl, <out>/checkpoint/ and <out>/report.jsonl.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       const SplitData& data, Trainer::EpochCallback on_epoch = {}) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);
    ExperimentResult res;
    res.log_path = out_dir / "train_log.jsonl";
    res.checkpoint_dir = out_dir / "checkpoint";
    res.report_path = out_dir / "report.jsonl";
    res.train_samples = data.train.size();
    res.val_samples = data.val.size();
    auto model = build_model(cfg);
    std::ofstream log(res.log_path);
    if (!log) throw RuntimeFailure("cannot write " + res.log_path.string());
    Trainer trainer(cfg, *model, &log);
    if (on_epoch) trainer.on_epoch(std::move(on_epoch));
    res.training = trainer.fit(data);
    res.report = res.training.best;
    save_checkpoint(res.checkpoint_dir, *model, cfg, res.training.best_epoch, res.report);
    std::ofstream rep(res.report_path);
    rep << to_json(res.report).dump() << '\n';
    return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& out_dir,
                                       Trainer::EpochCallback on_epoch = {}) {
    return run_experiment(cfg, out_dir, load_dataset(cfg), std::move(on_epoch));
}

// Re-evaluates a checkpoint on one part of its own dataset.
inline MetricsReport evaluate_checkpoint(LoadedCheckpoint& ckpt, const std::string& part) {
    if (part != "val" && part != "train") throw ValidationError("split must be val or train, got '" + part + "'");
    auto data = load_dataset(ckpt.config);
    Trainer t(ckpt.config, *ckpt.model);
    return t.evaluate(part == "val" ? data.val : data.train);
}

} // namespace svdamage

#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "svdamage/catalog/pairing.hpp"
#include "svdamage/catalog/split.hpp"
#include "svdamage/data/image_io.hpp"
#include "svdamage/data/synthetic.hpp"
#include "svdamage/training/config.hpp"

namespace svdamage {

// A labeled pre/post pair held in memory.
struct PairRecord {
    std::string pair_id;
    PixelImage pre, post;
    int label = 0;
};

// Unit of training. Single-image experiments leave `pre` empty; `image` is the
// post image, or the pre image for exp2's no_damage samples.
struct Sample {
    std::string id;
    PixelImage pre;
    PixelImage image;
    int label = 0;
};

struct SplitData {
    std::vector<Sample> train, val;
    DatasetSplit split;
    std::vector<std::string> warnings;
};

inline std::vector<PairRecord> synthetic_pairs(const ExperimentConfig& c) {
    std::vector<PairRecord> out;
    out.reserve(c.synthetic_count);
    for (std::size_t i = 0; i < c.synthetic_count; ++i) {
        auto s = generate_benchmark_pair(c.scene, derive_seed(c.synthetic_seed, i));
        out.push_back({"pair-" + synthetic_id(i) + "-post", std::move(s.pre), std::move(s.post),
                       static_cast<int>(s.label)});
    }
    return out;
}

// Reads manifest + pair list + labels; image URIs resolve against the
// manifest's directory. Pairs without a label are skipped.
inline std::vector<PairRecord> file_pairs(const ExperimentConfig& c, std::vector<std::string>* warnings = nullptr) {
    auto loaded = load_catalog(std::filesystem::path(c.manifest));
    if (warnings)
        for (auto& d : loaded.diagnostics) warnings->push_back(d);
    const auto base = std::filesystem::path(c.manifest).parent_path();
    std::map<std::string, int> labels;
    for (const auto& l : read_labels_csv(c.labels)) labels[l.pair_id] = l.label;
    std::vector<PairRecord> out;
    for (const auto& p : read_pairs_jsonl(c.pairs)) {
        auto it = labels.find(p.pair_id);
        if (it == labels.end()) {
            if (warnings) warnings->push_back("pair " + p.pair_id + " has no label; skipped");
            continue;
        }
        auto load = [&](const std::string& id) {
            std::filesystem::path uri = loaded.catalog.at(id).uri;
            return read_image(uri.is_relative() ? base / uri : uri);
        };
        out.push_back({p.pair_id, load(p.pre_id), load(p.post_id), it->second});
    }
    if (out.empty()) throw ValidationError("no labeled pairs found in " + c.pairs);
    return out;
}

// Splits pairs (stratified), then expands them into the experiment's samples.
// Both images of a pair always land in the same part.
inline SplitData build_dataset(const ExperimentConfig& c, std::vector<PairRecord> pairs) {
    std::vector<LabeledPair> labeled;
    for (const auto& p : pairs) labeled.push_back({p.pair_id, p.label});
    SplitData d;
    d.split = split_dataset(labeled, c.split_ratio, c.seed);
    d.warnings = d.split.warnings;
    std::map<std::string, bool> in_train;
    for (const auto& id : d.split.train_ids) in_train[id] = true;
    for (auto& p : pairs) {
        auto& part = in_train.count(p.pair_id) ? d.train : d.val;
        switch (c.experiment) {
        case ExperimentKind::exp1_post_only: part.push_back({p.pair_id, {}, std::move(p.post), p.label}); break;
        case ExperimentKind::exp2_four_class:
            part.push_back({p.pair_id, {}, std::move(p.post), p.label});
            part.push_back({p.pair_id + "#pre", {}, std::move(p.pre), static_cast<int>(DamageLabel::no_damage)});
            break;
        case ExperimentKind::exp3_dual_channel:
            part.push_back({p.pair_id, std::move(p.pre), std::move(p.post), p.label});
            break;
        }
    }
    std::vector<int> seen(c.num_classes(), 0);
    for (const auto& s : d.train) ++seen[static_cast<std::size_t>(s.label)];
    for (std::size_t k = 0; k < seen.size(); ++k)
        if (seen[k] == 0) d.warnings.push_back("class " + std::to_string(k) + " is empty in the training split");
    if (d.train.empty() || d.val.empty()) throw ValidationError("training and validation splits must be non-empty");
    return d;
}

struct PairLookup {
    PairRecord record;
    std::vector<unsigned char> damage_mask; // synthetic data only
};

// One pair of the config's dataset by id, without loading the rest of a
// synthetic corpus.
inline PairLookup find_pair(const ExperimentConfig& c, const std::string& pair_id) {
    if (c.data == "synthetic") {
        unsigned long idx = 0;
        char tail[8] = {0};
        if (std::sscanf(pair_id.c_str(), "pair-syn-%6lu-%4s", &idx, tail) != 2 || std::string(tail) != "post" ||
            pair_id != "pair-" + synthetic_id(idx) + "-post" || idx >= c.synthetic_count)
            throw NotFound("pair '" + pair_id + "' is not part of this synthetic dataset");
        auto s = generate_benchmark_pair(c.scene, derive_seed(c.synthetic_seed, idx));
        return {{pair_id, std::move(s.pre), std::move(s.post), static_cast<int>(s.label)}, std::move(s.mask)};
    }
    for (auto& p : file_pairs(c))
        if (p.pair_id == pair_id) return {std::move(p), {}};
    throw NotFound("pair '" + pair_id + "' not found in " + c.pairs);
}

inline SplitData load_dataset(const ExperimentConfig& c) {
    std::vector<std::string> warnings;
    auto pairs = c.data == "synthetic" ? synthetic_pairs(c) : file_pairs(c, &warnings);
    auto d = build_dataset(c, std::move(pairs));
    d.warnings.insert(d.warnings.begin(), warnings.begin(), warnings.end());
    return d;
}

} // namespace svdamage

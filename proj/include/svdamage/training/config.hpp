#pragma once

// Experiment configuration: a flat `key = value` file, `#` starts a comment.
// Every key is optional except `experiment`; unknown keys are rejected.
//
//   experiment      exp1_post_only | exp2_four_class | exp3_dual_channel
//   model           row name for reports (defaults per experiment/strategy)
//   backbone        convnext | swin
//   variant         tiny | small | base | mini
//   strategy        exp3 only: s1_concat, s2_xattn_convnext, ... (see roster)
//   shared_encoder  one encoder for both phases (S2/S3/S5)
//   pretrained      tensor archive with backbone weights
//   data            synthetic | files
//   manifest, pairs, labels      file inputs when data = files
//   synthetic.*     scene parameters and sample count when data = synthetic
//   transform.*     resize, normalization and augmentation
//   split_ratio, seed, epochs, batch_size, lr_max, lr_min, weight_decay,
//   freeze_backbone, class_weights (none | balanced), strict_determinism,
//   output_dir

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "svdamage/backbones/config.hpp"
#include "svdamage/catalog/split.hpp"
#include "svdamage/data/synthetic.hpp"
#include "svdamage/data/transforms.hpp"
#include "svdamage/fusion/model.hpp"

namespace svdamage {

enum class ExperimentKind { exp1_post_only, exp2_four_class, exp3_dual_channel };

inline std::string to_string(ExperimentKind e) {
    switch (e) {
    case ExperimentKind::exp1_post_only: return "exp1_post_only";
    case ExperimentKind::exp2_four_class: return "exp2_four_class";
    case ExperimentKind::exp3_dual_channel: return "exp3_dual_channel";
    }
    return "?";
}

inline ExperimentKind parse_experiment(const std::string& s) {
    if (s == "exp1_post_only" || s == "exp1") return ExperimentKind::exp1_post_only;
    if (s == "exp2_four_class" || s == "exp2") return ExperimentKind::exp2_four_class;
    if (s == "exp3_dual_channel" || s == "exp3") return ExperimentKind::exp3_dual_channel;
    throw ValidationError("unknown experiment '" + s + "'");
}

struct ExperimentConfig {
    ExperimentKind experiment = ExperimentKind::exp1_post_only;
    std::string model;
    BackboneFamily family = BackboneFamily::convnext;
    BackboneVariant variant = BackboneVariant::mini;
    std::string strategy; // roster name, exp3 only
    bool shared_encoder = false;
    std::string pretrained;

    std::string data = "synthetic";
    std::string manifest, pairs, labels;
    std::size_t synthetic_count = 2000;
    std::uint64_t synthetic_seed = 1234;
    SyntheticSceneSpec scene;

    TransformConfig transform = TransformConfig::no_augmentation(64);

    SplitRatio split_ratio{8, 2};
    std::uint64_t seed = 42;
    std::size_t epochs = 30;
    std::size_t batch_size = 16;
    double lr_max = 1e-4;
    double lr_min = 1e-6;
    double weight_decay = 0.05;
    bool freeze_backbone = false;
    std::string class_weights = "none";
    bool strict_determinism = true;
    std::string output_dir;

    std::size_t num_classes() const { return experiment == ExperimentKind::exp2_four_class ? 4 : 3; }
    bool dual() const { return experiment == ExperimentKind::exp3_dual_channel; }

    ModelSpec model_spec() const {
        ModelSpec s;
        s.num_classes = num_classes();
        if (dual()) {
            const auto kind = parse_model_kind(strategy);
            s.strategy = kind.strategy;
            s.backbone = BackboneConfig::make(kind.family, variant,
                                              kind.strategy == FusionStrategy::s1_channel_concat ? 6 : 3);
        } else {
            s.backbone = BackboneConfig::make(family, variant, 3);
        }
        s.shared_encoder = shared_encoder || s.strategy == FusionStrategy::s4_siamese_diff;
        return s;
    }

    std::string model_name() const {
        if (!model.empty()) return model;
        if (dual()) return display_name(strategy);
        const std::string fam = family == BackboneFamily::convnext ? "ConvNext" : "Swin Transformer";
        return fam + (experiment == ExperimentKind::exp2_four_class ? " (4-class)" : " (post-only)");
    }

    void validate() const {
        if (dual()) {
            if (strategy.empty()) throw ValidationError("exp3_dual_channel needs a strategy");
            parse_model_kind(strategy);
            if (!freeze_backbone) throw ValidationError("exp3_dual_channel requires freeze_backbone = true");
            model_spec().validate();
        } else if (!strategy.empty()) {
            throw ValidationError("strategy is only valid for exp3_dual_channel (got '" + strategy + "' for " +
                                  to_string(experiment) + ")");
        }
        if (data != "synthetic" && data != "files") throw ValidationError("data must be synthetic or files");
        if (data == "files" && (manifest.empty() || pairs.empty() || labels.empty()))
            throw ValidationError("data = files needs manifest, pairs and labels");
        if (data == "synthetic") {
            scene.validate();
            if (synthetic_count < 2) throw ValidationError("synthetic.count must be >= 2");
        }
        transform.validate();
        if (split_ratio.train <= 0 || split_ratio.val <= 0) throw ValidationError("split_ratio must be positive");
        if (epochs == 0 || batch_size == 0) throw ValidationError("epochs and batch_size must be positive");
        if (!(lr_max > 0) || !(lr_min > 0) || lr_min > lr_max)
            throw ValidationError("need 0 < lr_min <= lr_max");
        if (weight_decay < 0) throw ValidationError("weight_decay must be >= 0");
        if (class_weights != "none" && class_weights != "balanced")
            throw ValidationError("class_weights must be none or balanced");
    }

    // Canonical key/value listing of every field; the hash is taken over it.
    std::map<std::string, std::string> entries() const {
        auto num = [](double v) {
            std::ostringstream os;
            os.precision(17);
            os << v;
            return os.str();
        };
        auto b = [](bool v) { return std::string(v ? "true" : "false"); };
        std::map<std::string, std::string> e;
        e["experiment"] = to_string(experiment);
        e["model"] = model_name();
        e["backbone"] = to_string(family);
        e["variant"] = to_string(variant);
        e["strategy"] = strategy;
        e["shared_encoder"] = b(shared_encoder);
        e["pretrained"] = pretrained;
        e["data"] = data;
        e["manifest"] = manifest;
        e["pairs"] = pairs;
        e["labels"] = labels;
        e["synthetic.count"] = std::to_string(synthetic_count);
        e["synthetic.seed"] = std::to_string(synthetic_seed);
        e["synthetic.height"] = std::to_string(scene.height);
        e["synthetic.width"] = std::to_string(scene.width);
        e["synthetic.building_count"] = std::to_string(scene.building_count);
        e["synthetic.debris_density"] = num(scene.debris_density);
        e["synthetic.flood_fraction"] = num(scene.flood_fraction);
        e["synthetic.felled_tree_count"] = std::to_string(scene.felled_tree_count);
        e["synthetic.noise_amplitude"] = num(scene.noise_amplitude);
        e["synthetic.clutter"] = num(scene.clutter);
        e["synthetic.t_mild"] = num(scene.t_mild);
        e["synthetic.t_severe"] = num(scene.t_severe);
        e["transform.target_size"] = std::to_string(transform.target_size);
        for (int c = 0; c < 3; ++c) {
            e["transform.mean" + std::to_string(c)] = num(transform.mean[c]);
            e["transform.std" + std::to_string(c)] = num(transform.std[c]);
        }
        e["transform.crop_scale_min"] = num(transform.crop_scale_min);
        e["transform.crop_scale_max"] = num(transform.crop_scale_max);
        e["transform.flip_probability"] = num(transform.flip_probability);
        e["transform.brightness"] = num(transform.brightness);
        e["transform.contrast"] = num(transform.contrast);
        e["transform.saturation"] = num(transform.saturation);
        e["transform.interpolation"] = transform.interpolation;
        e["split_ratio"] = split_ratio.str();
        e["seed"] = std::to_string(seed);
        e["epochs"] = std::to_string(epochs);
        e["batch_size"] = std::to_string(batch_size);
        e["lr_max"] = num(lr_max);
        e["lr_min"] = num(lr_min);
        e["weight_decay"] = num(weight_decay);
        e["freeze_backbone"] = b(freeze_backbone);
        e["class_weights"] = class_weights;
        e["strict_determinism"] = b(strict_determinism);
        return e;
    }

    // Canonical text form; parse_config(to_text()) reproduces the config.
    std::string to_text() const {
        std::string out;
        for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
        if (!output_dir.empty()) out += "output_dir = " + output_dir + "\n";
        return out;
    }
};

// 64-bit FNV-1a, hex-encoded.
inline std::string fnv1a_hex(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// Hash over the canonical field listing, so comments, key order and
// output_dir do not change it.
inline std::string config_hash(const ExperimentConfig& c) {
    std::string canon;
    for (const auto& [k, v] : c.entries()) canon += k + "=" + v + "\n";
    return fnv1a_hex(canon);
}

namespace detail {

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

inline bool parse_bool(const std::string& k, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ValidationError("config key " + k + ": expected a boolean, got '" + v + "'");
}

inline double parse_real(const std::string& k, const std::string& v) {
    double d = 0;
    if (!parse_double(v, d)) throw ValidationError("config key " + k + ": expected a number, got '" + v + "'");
    return d;
}

inline std::uint64_t parse_uint(const std::string& k, const std::string& v) {
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos)
        throw ValidationError("config key " + k + ": expected a non-negative integer, got '" + v + "'");
    try {
        return std::stoull(v);
    } catch (const std::exception&) {
        throw ValidationError("config key " + k + ": integer out of range '" + v + "'");
    }
}

} // namespace detail

inline ExperimentConfig parse_config(std::istream& in, const std::string& name = "config") {
    ExperimentConfig c;
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ValidationError(name + ":" + std::to_string(n) + ": expected key = value");
        const auto key = detail::trim(line.substr(0, eq));
        if (!kv.emplace(key, detail::trim(line.substr(eq + 1))).second)
            throw ValidationError(name + ":" + std::to_string(n) + ": duplicate key " + key);
    }
    if (!kv.count("experiment")) throw ValidationError(name + ": missing required key 'experiment'");
    c.experiment = parse_experiment(kv["experiment"]);
    // Per-experiment defaults; explicit keys below override them.
    if (c.dual()) {
        c.freeze_backbone = true;
        c.lr_max = 1e-3;
    }
    for (const auto& [k, v] : kv) {
        using namespace detail;
        if (k == "experiment") continue;
        else if (k == "model") c.model = v;
        else if (k == "backbone") c.family = parse_family(v);
        else if (k == "variant") c.variant = parse_variant(v);
        else if (k == "strategy") c.strategy = v;
        else if (k == "shared_encoder") c.shared_encoder = parse_bool(k, v);
        else if (k == "pretrained") c.pretrained = v;
        else if (k == "data") c.data = v;
        else if (k == "manifest") c.manifest = v;
        else if (k == "pairs") c.pairs = v;
        else if (k == "labels") c.labels = v;
        else if (k == "synthetic.count") c.synthetic_count = parse_uint(k, v);
        else if (k == "synthetic.seed") c.synthetic_seed = parse_uint(k, v);
        else if (k == "synthetic.height") c.scene.height = parse_uint(k, v);
        else if (k == "synthetic.width") c.scene.width = parse_uint(k, v);
        else if (k == "synthetic.building_count") c.scene.building_count = static_cast<int>(parse_uint(k, v));
        else if (k == "synthetic.debris_density") c.scene.debris_density = parse_real(k, v);
        else if (k == "synthetic.flood_fraction") c.scene.flood_fraction = parse_real(k, v);
        else if (k == "synthetic.felled_tree_count") c.scene.felled_tree_count = static_cast<int>(parse_uint(k, v));
        else if (k == "synthetic.noise_amplitude") c.scene.noise_amplitude = parse_real(k, v);
        else if (k == "synthetic.clutter") c.scene.clutter = parse_real(k, v);
        else if (k == "synthetic.t_mild") c.scene.t_mild = parse_real(k, v);
        else if (k == "synthetic.t_severe") c.scene.t_severe = parse_real(k, v);
        else if (k == "transform.target_size") c.transform.target_size = parse_uint(k, v);
        else if (k.rfind("transform.mean", 0) == 0 && k.size() == 15 && k[14] >= '0' && k[14] <= '2')
            c.transform.mean[k[14] - '0'] = parse_real(k, v);
        else if (k.rfind("transform.std", 0) == 0 && k.size() == 14 && k[13] >= '0' && k[13] <= '2')
            c.transform.std[k[13] - '0'] = parse_real(k, v);
        else if (k == "transform.crop_scale_min") c.transform.crop_scale_min = parse_real(k, v);
        else if (k == "transform.crop_scale_max") c.transform.crop_scale_max = parse_real(k, v);
        else if (k == "transform.flip_probability") c.transform.flip_probability = parse_real(k, v);
        else if (k == "transform.brightness") c.transform.brightness = parse_real(k, v);
        else if (k == "transform.contrast") c.transform.contrast = parse_real(k, v);
        else if (k == "transform.saturation") c.transform.saturation = parse_real(k, v);
        else if (k == "transform.interpolation") c.transform.interpolation = v;
        else if (k == "split_ratio") c.split_ratio = parse_ratio(v);
        else if (k == "seed") c.seed = parse_uint(k, v);
        else if (k == "epochs") c.epochs = parse_uint(k, v);
        else if (k == "batch_size") c.batch_size = parse_uint(k, v);
        else if (k == "lr_max") c.lr_max = parse_real(k, v);
        else if (k == "lr_min") c.lr_min = parse_real(k, v);
        else if (k == "weight_decay") c.weight_decay = parse_real(k, v);
        else if (k == "freeze_backbone") c.freeze_backbone = parse_bool(k, v);
        else if (k == "class_weights") c.class_weights = v;
        else if (k == "strict_determinism") c.strict_determinism = parse_bool(k, v);
        else if (k == "output_dir") c.output_dir = v;
        else throw ValidationError(name + ": unknown key '" + k + "'");
    }
    c.validate();
    return c;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& name = "config") {
    std::istringstream in(text);
    return parse_config(in, name);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config " + path.string());
    auto c = parse_config(in, path.string());
    // Relative data paths resolve against the config file's directory.
    auto resolve = [&](std::string& p) {
        if (!p.empty() && std::filesystem::path(p).is_relative()) p = (path.parent_path() / p).lexically_normal().string();
    };
    resolve(c.manifest);
    resolve(c.pairs);
    resolve(c.labels);
    resolve(c.pretrained);
    return c;
}

} // namespace svdamage

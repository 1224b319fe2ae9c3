// Acceptance run: one PASS/FAIL line per criterion.
//
//   acceptance            all criteria
//   acceptance 6 8        a subset

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "svdamage/svdamage.hpp"

namespace fs = std::filesystem;
using namespace svdamage;

#ifndef SVDAMAGE_CONFIG_DIR
#define SVDAMAGE_CONFIG_DIR "configs"
#endif

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
    std::vector<std::string> failures;

    void expect(bool ok, const std::string& what) {
        if (ok) return;
        pass = false;
        if (failures.size() < 5) failures.push_back(what);
    }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

fs::path scratch() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / ("svdamage-acceptance-" + std::to_string(::getpid()));
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

// ---- 1: metrics vs per-sample brute force ---------------------------------

Outcome metrics_oracle() {
    Outcome o;
    std::mt19937_64 rng(2024);
    double worst = 0;
    for (int t = 0; t < 1000; ++t) {
        const int C = t % 2 ? 4 : 3;
        std::uniform_int_distribution<int> lab(0, C - 1), len(1, 80);
        const int n = len(rng);
        std::vector<int> pred(n), truth(n);
        for (int i = 0; i < n; ++i) pred[i] = lab(rng), truth[i] = lab(rng);
        // Both conventions on 4-class draws: all four classes, and damage classes only.
        for (int evaluated : C == 4 ? std::vector<int>{4, 3} : std::vector<int>{3}) {
            const auto m = confusion(pred, truth, C);
            const auto r = evaluated == C ? weighted_metrics(m) : experiment2_metrics(m);
            long correct = 0;
            for (int i = 0; i < n; ++i) correct += pred[i] == truth[i];
            double P = 0, R = 0, F = 0;
            long total_support = 0;
            std::vector<double> rk(evaluated);
            std::vector<long> sup(evaluated);
            std::vector<double> pk(evaluated), fk(evaluated);
            for (int k = 0; k < evaluated; ++k) {
                long tp = 0, fp = 0, fn = 0;
                for (int i = 0; i < n; ++i) {
                    tp += pred[i] == k && truth[i] == k;
                    fp += pred[i] == k && truth[i] != k;
                    fn += pred[i] != k && truth[i] == k;
                }
                pk[k] = tp + fp ? double(tp) / double(tp + fp) : 0.0;
                rk[k] = tp + fn ? double(tp) / double(tp + fn) : 0.0;
                fk[k] = pk[k] + rk[k] > 0 ? 2 * pk[k] * rk[k] / (pk[k] + rk[k]) : 0.0;
                sup[k] = tp + fn;
                total_support += sup[k];
            }
            for (int k = 0; k < evaluated && total_support; ++k) {
                const double w = double(sup[k]) / double(total_support);
                P += w * pk[k];
                R += w * rk[k];
                F += w * fk[k];
            }
            const double acc = double(correct) / n;
            double err = std::max({std::abs(r.accuracy - acc), std::abs(r.precision - P), std::abs(r.recall - R),
                                   std::abs(r.f1 - F)});
            for (int k = 0; k < evaluated; ++k) err = std::max(err, std::abs(r.class_recall[k] - rk[k]));
            worst = std::max(worst, err);
            o.expect(err <= 1e-9, "draw " + std::to_string(t) + " off by " + fmt("%.3g", err));
        }
    }
    o.detail = "1000 matrices, max |diff| " + fmt("%.2g", worst);
    return o;
}

// ---- 2: fusion/head gradients ---------------------------------------------

ModelSpec mini_spec(FusionStrategy s, BackboneFamily f) {
    ModelSpec spec;
    spec.strategy = s;
    spec.backbone = BackboneConfig::make(f, BackboneVariant::mini, s == FusionStrategy::s1_channel_concat ? 6 : 3);
    spec.num_classes = 3;
    spec.shared_encoder = s == FusionStrategy::s4_siamese_diff;
    return spec;
}

Tensor<double> noise(Shape s, std::mt19937_64& rng, double scale = 1.0) {
    Tensor<double> t(std::move(s));
    std::normal_distribution<double> n(0, scale);
    for (auto& v : t.values()) v = n(rng);
    return t;
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
    double s = 0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double rel_err(double a, double n) { return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}); }

Outcome fusion_gradients() {
    Outcome o;
    const std::vector<std::pair<std::string, ModelSpec>> cases = {
        {"S1", mini_spec(FusionStrategy::s1_channel_concat, BackboneFamily::convnext)},
        {"S2", mini_spec(FusionStrategy::s2_cross_attention, BackboneFamily::convnext)},
        {"S3", mini_spec(FusionStrategy::s3_feature_fusion, BackboneFamily::convnext)},
        {"S4", mini_spec(FusionStrategy::s4_siamese_diff, BackboneFamily::convnext)},
        {"S5", mini_spec(FusionStrategy::s5_dual_swin, BackboneFamily::swin)},
    };
    double worst = 0, worst_coord = 0;
    std::size_t checked = 0, tensors = 0;
    for (const auto& [name, spec] : cases) {
        for (std::uint64_t draw = 0; draw < 5; ++draw) {
            DamageModel<double> m(spec);
            m.init(100 + draw);
            m.freeze_backbone();
            std::mt19937_64 rng(200 + draw);
            // Move every trainable parameter off its initial value.
            for (auto* p : m.fusion_and_head_parameters())
                for (auto& v : p->value.values()) v += 0.2 * std::normal_distribution<double>(0, 1)(rng);
            auto pre = noise({2, 64, 64, 3}, rng), post = noise({2, 64, 64, 3}, rng);
            auto [fp, fq] = m.encode(&pre, post);
            const bool joint = fp.values.empty();
            auto run = [&] { return joint ? m.forward_from_features(fq) : m.forward_from_features(fp, fq); };
            auto w = noise({2, 3}, rng);
            auto loss = [&] { return dot(run(), w); };
            run();
            for (auto* p : m.parameters()) p->zero_grad();
            m.backward(w, false);
            auto numeric = [&](double& x) {
                const double keep = x;
                x = keep + 1e-5;
                const double up = loss();
                x = keep - 1e-5;
                const double down = loss();
                x = keep;
                return (up - down) / 2e-5;
            };
            // Relative error of a whole gradient tensor: |a - n| / max(|a|, |n|) in the 2-norm.
            auto compare = [&](const std::vector<double>& a, const std::vector<double>& n, const std::string& what) {
                double diff = 0, na = 0, nn = 0;
                for (std::size_t i = 0; i < a.size(); ++i) {
                    diff += (a[i] - n[i]) * (a[i] - n[i]);
                    na += a[i] * a[i];
                    nn += n[i] * n[i];
                    worst_coord = std::max(worst_coord, rel_err(a[i], n[i]));
                }
                const double e = std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300});
                worst = std::max(worst, e);
                checked += a.size();
                ++tensors;
                o.expect(e < 1e-4, name + " " + what + fmt(": relative error %.3g", e));
            };
            for (auto* p : m.fusion_and_head_parameters()) {
                std::vector<double> a(p->grad.values().begin(), p->grad.values().end()), n;
                for (std::size_t i = 0; i < p->value.size(); ++i) n.push_back(numeric(p->value[i]));
                compare(a, n, p->path);
            }
            // Gradient into the fusion inputs (what the encoders would receive).
            std::uniform_int_distribution<std::size_t> pick(0, fq.values.size() - 1);
            for (auto* f : {&fq, &fp}) {
                if (f->values.empty()) continue;
                const auto& g = m.gradients(f == &fq ? CamBranch::post : CamBranch::pre);
                std::vector<double> a, n;
                for (int t = 0; t < 16; ++t) {
                    const auto i = pick(rng);
                    a.push_back(g[i]);
                    n.push_back(numeric(f->values[i]));
                }
                compare(a, n, f == &fq ? "post features" : "pre features");
            }
        }
    }
    o.detail = std::to_string(checked) + " coordinates in " + std::to_string(tensors) +
               " gradient tensors over 5 draws x 5 strategies; max relative error " + fmt("%.2g", worst) +
               " (worst single coordinate " + fmt("%.2g", worst_coord) + ")";
    return o;
}

// ---- 3: attention rows, probabilities, logit shift ------------------------

Outcome attention_invariants() {
    Outcome o;
    std::mt19937_64 rng(33);
    double worst = 0;
    for (int t = 0; t < 100; ++t) {
        // Cross-attention between token sets of different sizes.
        const std::size_t D = 8, heads = 1 + t % 2, N = 1 + rng() % 9, M = 1 + rng() % 9;
        CrossAttention<double> xa(D, heads, t % 3 == 0);
        xa.init(rng);
        xa.forward(noise({2, N, D}, rng, 3.0), noise({2, M, D}, rng, 3.0));
        const auto& P = xa.attention();
        for (std::size_t r = 0; r < P.size() / M; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < M; ++j) {
                s += P[r * M + j];
                o.expect(P[r * M + j] >= 0, "negative attention weight");
            }
            worst = std::max(worst, std::abs(s - 1));
        }
        // Masked window attention (shifted windows with padding).
        const std::size_t H = 3 + rng() % 10, W = 3 + rng() % 10, win = 2 + rng() % 3;
        auto plan = WindowPlan::make(H, W, win, win / 2);
        auto mask = plan.mask<double>(nn::ScaledDotAttention<double>::masked_value());
        const std::size_t G = plan.num_windows(), T = plan.tokens_per_window();
        nn::ScaledDotAttention<double> sa;
        sa.forward(noise({G, T, 4}, rng, 3.0), noise({G, T, 4}, rng, 3.0), noise({G, T, 4}, rng), 0.5, &mask);
        const auto& Q = sa.probabilities();
        for (std::size_t r = 0; r < G * T; ++r) {
            double s = 0;
            for (std::size_t j = 0; j < T; ++j) s += Q[r * T + j];
            worst = std::max(worst, std::abs(s - 1));
        }
    }
    o.expect(worst <= 1e-6, "attention row sum off by " + fmt("%.3g", worst));

    double worst_p = 0;
    int argmax_changes = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t K = 3 + t % 2;
        auto logits = noise({4, K}, rng, 1.0 + t % 20);
        auto p = logits_to_prediction(logits);
        for (std::size_t b = 0; b < 4; ++b) {
            double s = 0;
            for (std::size_t k = 0; k < K; ++k) s += p.probabilities.at(b, k);
            worst_p = std::max(worst_p, std::abs(s - 1));
        }
        auto shifted = logits;
        for (std::size_t b = 0; b < 4; ++b) {
            const double c = std::uniform_real_distribution<double>(-50, 50)(rng);
            for (std::size_t k = 0; k < K; ++k) shifted.at(b, k) += c;
        }
        if (logits_to_prediction(shifted).labels != p.labels) ++argmax_changes;
    }
    o.expect(worst_p <= 1e-6, "probability sum off by " + fmt("%.3g", worst_p));
    o.expect(argmax_changes == 0, std::to_string(argmax_changes) + " argmax changes under logit shift");
    o.detail = "max row-sum error " + fmt("%.2g", worst) + ", probability error " + fmt("%.2g", worst_p) +
               ", argmax changes " + std::to_string(argmax_changes);
    return o;
}

// ---- 4: fusion algebra ------------------------------------------------------

Outcome fusion_algebra() {
    Outcome o;
    std::mt19937_64 rng(44);
    for (int t = 0; t < 100; ++t) {
        auto a = noise({2, 2, 2, 8}, rng), b = noise({2, 2, 2, 8}, rng);
        AlphaFusion<double> af;
        af.theta().value[0] = 800;
        o.expect(af.forward(a, b).storage() == a.storage(), "alpha -> 1 must return pre features exactly");
        af.theta().value[0] = -800;
        o.expect(af.forward(a, b).storage() == b.storage(), "alpha -> 0 must return post features exactly");
        af.theta().value[0] = std::normal_distribution<double>(0, 2)(rng);
        auto f = af.forward(a, b);
        for (std::size_t i = 0; i < f.size(); ++i)
            o.expect(f[i] <= std::max(a[i], b[i]) + 1e-12 && f[i] >= std::min(a[i], b[i]) - 1e-12,
                     "fusion leaves the convex hull");
        auto d = siamese_diff(a, b);
        o.expect(d.storage() == siamese_diff(b, a).storage(), "siamese difference not symmetric");
        for (double v : d.values()) o.expect(v >= 0, "siamese difference negative");
        for (double v : siamese_diff(a, a).values()) o.expect(v == 0, "siamese self-difference nonzero");
    }
    // Six-channel stem built from a three-channel checkpoint, both phases equal.
    double worst = 0;
    for (auto fam : {BackboneFamily::convnext, BackboneFamily::swin}) {
        auto c3 = BackboneConfig::make(fam, BackboneVariant::mini, 3), c6 = BackboneConfig::make(fam, BackboneVariant::mini, 6);
        auto n3 = make_backbone<double>(c3);
        n3->init(rng);
        TensorArchive arch;
        for (auto* p : n3->parameters()) arch.emplace(p->path, p->value.cast<float>());
        auto n6 = make_backbone<double>(c6);
        apply_weights(*n6, load_weights(arch, c6));
        apply_weights(*n3, load_weights(arch, c3));
        auto x = noise({2, 64, 64, 3}, rng);
        auto x6 = fuse_channel_concat(x, x);
        auto y3 = n3->forward(x).values, y6 = n6->forward(x6).values;
        for (std::size_t i = 0; i < y3.size(); ++i) worst = std::max(worst, std::abs(y3[i] - y6[i]));
    }
    o.expect(worst <= 1e-5, "stem duplication identity off by " + fmt("%.3g", worst));
    o.detail = "100 draws; stem identity max |diff| " + fmt("%.2g", worst);
    return o;
}

// ---- 5: pairing and haversine ------------------------------------------------

Outcome pairing_oracle() {
    Outcome o;
    const double equator = haversine_distance({0, 0}, {0, 1});
    const double antipodal = haversine_distance({0, 0}, {0, 180});
    o.expect(haversine_distance({27.9, -82.6}, {27.9, -82.6}) == 0, "identity distance nonzero");
    o.expect(std::abs(equator - 111195) / 111195 < 1e-3, "equatorial degree " + fmt("%.1f", equator));
    o.expect(std::abs(antipodal - 20015087) / 20015087 < 1e-3, "antipodal " + fmt("%.1f", antipodal));

    std::mt19937_64 rng(55);
    std::size_t pairs = 0, discards = 0;
    for (int trial = 0; trial < 50; ++trial) {
        ImageCatalog c;
        const int n = 2 + static_cast<int>(rng() % 499);
        const double lat0 = std::uniform_real_distribution<double>(-70, 70)(rng);
        const double lon0 = std::uniform_real_distribution<double>(-170, 170)(rng);
        std::uniform_real_distribution<double> jitter(-0.0004, 0.0004);
        for (int i = 0; i < n; ++i) {
            const Phase ph = i == 0 ? Phase::pre : i == 1 ? Phase::post : (rng() % 2 ? Phase::pre : Phase::post);
            double la = lat0 + jitter(rng), lo = lon0 + jitter(rng);
            if (i > 2 && rng() % 13 == 0) la = c.images().back().latitude, lo = c.images().back().longitude;
            c.add({(ph == Phase::pre ? "pre" : "post") + std::to_string(rng() % 1000) + "-" + std::to_string(i), ph, la,
                   lo, "2024-10-17T00:00:00Z", "x.png"});
        }
        const double max_d = trial % 4 == 0 ? 1e9 : 5.0 + trial;
        const auto r = pair_images(c, max_d);
        // Exhaustive search.
        std::vector<ImagePair> want;
        std::size_t want_discards = 0;
        for (const auto& post : c.images()) {
            if (post.phase != Phase::post) continue;
            const StreetViewImage* best = nullptr;
            double bd = 0;
            for (const auto& pre : c.images()) {
                if (pre.phase != Phase::pre) continue;
                const double d = haversine_distance(post.location(), pre.location());
                if (!best || d < bd || (d == bd && pre.image_id < best->image_id)) best = &pre, bd = d;
            }
            if (bd <= max_d) want.push_back({pair_id_for(post.image_id), best->image_id, post.image_id, bd});
            else ++want_discards;
        }
        std::sort(want.begin(), want.end(), [](auto& x, auto& y) { return x.pair_id < y.pair_id; });
        o.expect(r.pairs == want, "catalog " + std::to_string(trial) + " differs from exhaustive search");
        o.expect(r.discarded.size() == want_discards, "catalog " + std::to_string(trial) + " discard count");
        for (const auto& d : r.discarded) o.expect(d.distance > max_d, "discard within threshold");
        pairs += r.pairs.size();
        discards += r.discarded.size();
    }
    o.detail = "50 catalogs, " + std::to_string(pairs) + " pairs, " + std::to_string(discards) +
               " discards; 1 deg " + fmt("%.1f m, antipodal %.1f m", equator, antipodal);
    return o;
}

// ---- 6 / 8: trained models ---------------------------------------------------

ExperimentConfig repo_config(const std::string& name) {
    return load_config(fs::path(SVDAMAGE_CONFIG_DIR) / (name + ".cfg"));
}

struct Trained {
    fs::path checkpoint;
    double val_accuracy = 0;
    ExperimentConfig config;
};

const Trained& post_only_model() {
    static const Trained t = [] {
        auto cfg = repo_config("exp1_convnext");
        auto res = run_experiment(cfg, scratch() / "exp1");
        return Trained{res.checkpoint_dir, res.report.accuracy, cfg};
    }();
    return t;
}

Outcome dual_channel_benefit() {
    Outcome o;
    auto dual_cfg = repo_config("exp3_s3_fusion_convnext");
    const auto& post = post_only_model();
    o.expect(post.config.epochs == dual_cfg.epochs && post.config.batch_size == dual_cfg.batch_size,
             "arms use different budgets");
    o.expect(post.config.synthetic_count == 2000 && dual_cfg.synthetic_count == 2000 &&
                 post.config.synthetic_seed == dual_cfg.synthetic_seed && post.config.scene.clutter == dual_cfg.scene.clutter,
             "arms do not share the 2000-pair benchmark");
    auto dual = run_experiment(dual_cfg, scratch() / "exp3");
    const double gap = dual.report.accuracy - post.val_accuracy;
    o.expect(gap >= 0.10, "gain below 10 points");
    o.expect(post.val_accuracy < 0.90, "post-only reaches 90%");
    o.detail = "post-only " + format_percent(post.val_accuracy) + ", dual S3 " + format_percent(dual.report.accuracy) +
               fmt(", gain %.2f points (%g epochs, batch %g)", 100 * gap, double(dual_cfg.epochs),
                   double(dual_cfg.batch_size));
    return o;
}

Outcome gradcam_localization() {
    Outcome o;
    auto ck = load_checkpoint(post_only_model().checkpoint);
    HeatmapConfig hc;
    hc.target_class = static_cast<int>(DamageLabel::severe);
    int inside = 0;
    for (std::size_t i = 0; i < 100; ++i) {
        auto spec = ck.config.scene;
        Rng rng(derive_seed(777, i));
        spec.damage_budget = uniform(rng, 0.6, 1.0);
        auto p = generate_synthetic_pair(spec, derive_seed(99991, i));
        o.expect(p.label == DamageLabel::severe, "sample " + std::to_string(i) + " not severe");
        auto m = grad_cam(*ck.model, static_cast<const PixelImage*>(nullptr), p.post, ck.config.transform, hc);
        float mx = 0;
        for (float v : m.values) {
            o.expect(std::isfinite(v) && v >= 0 && v <= 1, "heatmap value out of [0, 1]");
            mx = std::max(mx, v);
        }
        o.expect(mx == 0 || mx == 1, "heatmap not normalized to max 1");
        const auto up = upsample(m, p.post.height, p.post.width);
        double in = 0, out = 0;
        std::size_t n_in = 0, n_out = 0;
        for (std::size_t k = 0; k < up.size(); ++k) {
            if (p.mask[k]) in += up[k], ++n_in;
            else out += up[k], ++n_out;
        }
        if (n_in && n_out && in / double(n_in) > out / double(n_out)) ++inside;
    }
    o.expect(inside >= 70, "localized on fewer than 70 samples");
    o.detail = std::to_string(inside) + "/100 severe samples with more heat inside the damage mask";
    return o;
}

// ---- 7: determinism -----------------------------------------------------------

Outcome determinism() {
    Outcome o;
    std::string detail;
    for (const char* name : {"exp1_convnext", "exp3_s2_xattn_swin"}) {
        auto cfg = repo_config(name);
        cfg.synthetic_count = 240;
        cfg.epochs = 3;
        cfg.strict_determinism = true;
        const std::string tag = name;
        auto a = run_experiment(cfg, scratch() / ("det-a-" + tag));
        auto b = run_experiment(cfg, scratch() / ("det-b-" + tag));
        o.expect(a.training.steps.size() == b.training.steps.size(), tag + ": step counts differ");
        double worst = 0;
        for (std::size_t i = 0; i < std::min(a.training.steps.size(), b.training.steps.size()); ++i)
            worst = std::max(worst, std::abs(a.training.steps[i].loss - b.training.steps[i].loss));
        const double acc_diff = std::abs(a.report.accuracy - b.report.accuracy);
        o.expect(worst <= 1e-6, tag + ": loss histories differ by " + fmt("%.3g", worst));
        o.expect(acc_diff <= 1e-6, tag + ": validation accuracy differs");
        auto ck = load_checkpoint(a.checkpoint_dir);
        auto again = evaluate_checkpoint(ck, "val");
        const double rt = std::max({std::abs(again.accuracy - a.report.accuracy), std::abs(again.f1 - a.report.f1),
                                    std::abs(again.precision - a.report.precision)});
        o.expect(rt <= 1e-6, tag + ": checkpoint round-trip changes metrics by " + fmt("%.3g", rt));
        o.expect(ck.record.config_hash == config_hash(cfg), tag + ": checkpoint hash mismatch");
        detail += (detail.empty() ? "" : "; ") + tag + fmt(": loss diff %.2g, acc diff %.2g, reload diff %.2g", worst, acc_diff, rt);
    }
    o.detail = detail;
    return o;
}

// ---- 9: loss fixtures -----------------------------------------------------------

Outcome loss_fixtures() {
    Outcome o;
    std::vector<double> z{0.7, 0.7, 0.7};
    const double ce = cross_entropy<double>(z, 2);
    o.expect(std::abs(ce - std::log(3.0)) <= 1e-6, "uniform cross-entropy " + fmt("%.12g", ce));
    o.expect(cosine_lr(0, 1000, 1e-3, 1e-6) == 1e-3, "cosine start");
    o.expect(cosine_lr(1000, 1000, 1e-3, 1e-6) == 1e-6, "cosine end");
    o.expect(cosine_lr(500, 1000, 1e-3, 1e-6) == 1e-6 + 0.5 * (1e-3 - 1e-6), "cosine midpoint");
    // First AdamW step: bias-corrected update is lr * g / (|g| + eps); decay is lr * wd * w.
    for (double g : {-2.0, 0.0, 0.25, 9.0}) {
        nn::Parameter<double> p("w", {1}, 1.5);
        p.grad[0] = g;
        AdamW<double> opt({&p}, AdamWConfig{0.9, 0.999, 1e-8, 0.05});
        opt.step(0.01);
        double w = 1.5;
        w -= 0.01 * 0.05 * w;
        const double m = 0.1 * g, v = 0.001 * g * g;
        w -= 0.01 * (m / (1 - 0.9)) / (std::sqrt(v / (1 - 0.999)) + 1e-8);
        o.expect(p.value[0] == w, fmt("AdamW first step with g=%g: %.17g vs %.17g", g, p.value[0], w));
    }
    o.detail = "CE(uniform) - ln 3 = " + fmt("%.2g", ce - std::log(3.0)) + "; cosine and AdamW exact";
    return o;
}

// ---- 10: consensus and append-only log ------------------------------------------

Outcome consensus_oracle() {
    Outcome o;
    std::mt19937_64 rng(1010);
    const std::size_t draws = 10000;
    std::vector<PairInfo> pairs;
    for (std::size_t i = 0; i < draws; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "pair-%05zu", i);
        pairs.push_back({id, std::string(id) + "-pre", std::string(id) + "-post", "", "", 0});
    }
    const auto log = scratch() / "consensus.jsonl";
    fs::remove(log);
    const std::vector<std::string> annot{"a1", "a2", "a3", "a4"};
    AnnotationStore store(pairs, annot, {"adj"}, log, [] { return std::string("2024-10-17T00:00:00Z"); });
    std::size_t conflicts = 0, mismatches = 0;
    for (std::size_t i = 0; i < draws; ++i) {
        const std::size_t nv = 4;
        int count[3] = {0, 0, 0};
        for (std::size_t v = 0; v < nv; ++v) {
            const int l = static_cast<int>(rng() % 3);
            ++count[l];
            store.submit({pairs[i].pair_id, annot[v], static_cast<DamageLabel>(l), ""});
        }
        // Brute force: a label wins only with strictly more votes than every other.
        std::optional<int> want;
        for (int k = 0; k < 3; ++k) {
            bool strict = true;
            for (int j = 0; j < 3; ++j)
                if (j != k && count[j] >= count[k]) strict = false;
            if (strict) want = k;
        }
        const auto got = store.consensus(pairs[i].pair_id);
        const std::optional<int> got_label =
            got.label ? std::optional<int>(static_cast<int>(*got.label)) : std::nullopt;
        if (got_label != want) ++mismatches;
        if (!want) ++conflicts;
    }
    o.expect(mismatches == 0, std::to_string(mismatches) + " consensus mismatches");

    // Concurrent submissions while a reader checks that every snapshot extends the last.
    const auto clog = scratch() / "concurrent.jsonl";
    fs::remove(clog);
    std::vector<std::string> many;
    for (int t = 0; t < 8; ++t) many.push_back("c" + std::to_string(t));
    std::vector<PairInfo> few(pairs.begin(), pairs.begin() + 80);
    std::size_t lines = 0, violations = 0, snapshots = 0;
    {
        AnnotationStore s(few, many, {}, clog);
        std::atomic<bool> done{false};
        std::thread watcher([&] {
            std::string prev;
            while (!done.load()) {
                std::ifstream f(clog);
                std::string cur((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
                if (cur.compare(0, prev.size(), prev) != 0) ++violations;
                prev = std::move(cur);
                ++snapshots;
            }
        });
        std::vector<std::thread> workers;
        std::atomic<int> accepted{0};
        for (std::size_t t = 0; t < many.size(); ++t)
            workers.emplace_back([&, t] {
                for (std::size_t i = 0; i < few.size(); ++i)
                    for (int k = 0; k < 2; ++k)
                        accepted += s.submit({few[(i * 7 + t) % few.size()].pair_id, many[t],
                                              static_cast<DamageLabel>((i + t) % 3), ""})
                                        .accepted;
            });
        for (auto& w : workers) w.join();
        done = true;
        watcher.join();
        o.expect(accepted.load() == static_cast<int>(few.size() * many.size()), "duplicate submissions accepted");
    }
    std::ifstream f(clog);
    std::string line;
    std::set<std::pair<std::string, std::string>> seen;
    while (std::getline(f, line)) {
        ++lines;
        try {
            auto j = nlohmann::json::parse(line);
            seen.emplace(j.at("pair_id").get<std::string>(), j.at("annotator_id").get<std::string>());
        } catch (const std::exception&) {
            o.expect(false, "torn log line");
        }
    }
    o.expect(violations == 0, std::to_string(violations) + " non-append log changes");
    o.expect(lines == few.size() * many.size() && seen.size() == lines, "log record count");
    AnnotationStore replay(few, many, {}, clog);
    o.expect(replay.records().size() == lines, "replay lost records");
    o.detail = std::to_string(draws) + " draws (" + std::to_string(conflicts) + " conflicts), " +
               std::to_string(mismatches) + " mismatches; " + std::to_string(lines) + " concurrent records, " +
               std::to_string(snapshots) + " snapshots, " + std::to_string(violations) + " violations";
    return o;
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"metric oracle equivalence", metrics_oracle},
        {"fusion gradient checks", fusion_gradients},
        {"attention and softmax invariants", attention_invariants},
        {"fusion algebra", fusion_algebra},
        {"pairing oracle", pairing_oracle},
        {"directional dual-channel benefit", dual_channel_benefit},
        {"determinism", determinism},
        {"Grad-CAM localization", gradcam_localization},
        {"training-loss fixtures", loss_fixtures},
        {"consensus oracle", consensus_oracle},
    };
    std::set<int> only;
    for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && !only.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.failures.push_back(std::string("exception: ") + e.what());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("%s %2d %s: %s [%.1fs]\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(),
                    o.detail.c_str(), secs);
        for (const auto& f : o.failures) std::printf("     - %s\n", f.c_str());
        std::fflush(stdout);
        failed += !o.pass;
    }
    std::error_code ec;
    fs::remove_all(scratch(), ec);
    return failed ? 1 : 0;
}

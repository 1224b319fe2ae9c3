#pragma once

// Procedural street scenes for desk-scale runs. A pre scene holds sky, a grass
// verge, a road, a row of building slots and trees, plus a random amount of
// damage-like clutter that predates the event (litter, puddles, fallen logs,
// vacant rubble lots). The post scene adds budget-scaled damage of the same
// kinds, so severity is only readable from the pre/post difference.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <vector>

#include "svdamage/catalog/catalog.hpp"
#include "svdamage/catalog/split.hpp"
#include "svdamage/core/random.hpp"
#include "svdamage/data/image.hpp"
#include "svdamage/data/image_io.hpp"

namespace svdamage {

struct SyntheticSceneSpec {
    std::size_t height = 64;
    std::size_t width = 64;
    int building_count = 4;      // building slots along the street
    double damage_budget = 0.0;  // in [0, 1]
    double debris_density = 0.12; // speckle probability per ground pixel at budget 1
    double flood_fraction = 0.5;  // share of the ground band flooded at budget 1
    int felled_tree_count = 3;    // trees down at budget 1
    double noise_amplitude = 0.02;
    double clutter = 0.8;         // upper bound on pre-existing clutter, in budget units
    double t_mild = 0.2;
    double t_severe = 0.6;

    void validate() const {
        if (height < 16 || width < 16) throw ValidationError("synthetic scenes need at least 16x16 pixels");
        if (building_count < 1) throw ValidationError("building_count must be >= 1");
        if (damage_budget < 0 || damage_budget > 1) throw ValidationError("damage_budget must be in [0,1]");
        if (debris_density < 0 || debris_density > 1) throw ValidationError("debris_density must be in [0,1]");
        if (flood_fraction < 0 || flood_fraction > 1) throw ValidationError("flood_fraction must be in [0,1]");
        if (felled_tree_count < 0) throw ValidationError("felled_tree_count must be >= 0");
        if (noise_amplitude < 0) throw ValidationError("noise_amplitude must be >= 0");
        if (clutter < 0 || clutter > 1) throw ValidationError("clutter must be in [0,1]");
        if (!(0 < t_mild && t_mild < t_severe && t_severe < 1))
            throw ValidationError("thresholds must satisfy 0 < t_mild < t_severe < 1");
    }
};

inline DamageLabel label_for_budget(double budget, double t_mild, double t_severe) {
    if (budget < t_mild) return DamageLabel::mild;
    if (budget >= t_severe) return DamageLabel::severe;
    return DamageLabel::moderate;
}

struct SyntheticPair {
    PixelImage pre, post;
    DamageLabel label = DamageLabel::mild;
    std::vector<unsigned char> mask; // H*W, 1 where damage was drawn
    double budget = 0;
    double clutter_level = 0;
};

namespace detail {

struct Rgb {
    float r, g, b;
};

struct SceneLayout {
    std::size_t H, W, horizon, verge_base, road_top;
    std::vector<std::size_t> slot_left, slot_width, bld_height;
    std::vector<Rgb> bld_color;
    std::vector<std::array<double, 3>> trees; // (cy, cx, r)
};

class Canvas {
public:
    Canvas(PixelImage& img, std::vector<unsigned char>* mask) : img_(img), mask_(mask) {}

    void put(long y, long x, Rgb c, float alpha = 1.0f) {
        if (y < 0 || x < 0 || y >= static_cast<long>(img_.height) || x >= static_cast<long>(img_.width)) return;
        const auto yy = static_cast<std::size_t>(y), xx = static_cast<std::size_t>(x);
        float* px[3] = {&img_.at(0, yy, xx), &img_.at(1, yy, xx), &img_.at(2, yy, xx)};
        const float col[3] = {c.r, c.g, c.b};
        for (int k = 0; k < 3; ++k) *px[k] = (1 - alpha) * *px[k] + alpha * col[k];
        if (mask_) (*mask_)[yy * img_.width + xx] = 1;
    }

    void rect(long y0, long x0, long y1, long x1, Rgb c, float alpha = 1.0f) {
        for (long y = y0; y < y1; ++y)
            for (long x = x0; x < x1; ++x) put(y, x, c, alpha);
    }

    void disc(double cy, double cx, double r, Rgb c) {
        for (long y = static_cast<long>(cy - r) - 1; y <= static_cast<long>(cy + r) + 1; ++y)
            for (long x = static_cast<long>(cx - r) - 1; x <= static_cast<long>(cx + r) + 1; ++x)
                if ((y - cy) * (y - cy) + (x - cx) * (x - cx) <= r * r) put(y, x, c);
    }

private:
    PixelImage& img_;
    std::vector<unsigned char>* mask_;
};

inline Rgb sky_at(const SceneLayout& L, std::size_t y) {
    const float t = static_cast<float>(y) / static_cast<float>(std::max<std::size_t>(1, L.horizon));
    return {0.52f + 0.28f * t, 0.68f + 0.18f * t, 0.93f + 0.04f * t};
}

inline Rgb verge_color() { return {0.50f, 0.60f, 0.38f}; }

// Background behind the building row (used when a slot is vacant).
inline Rgb background_at(const SceneLayout& L, std::size_t y) {
    return y < L.horizon ? sky_at(L, y) : verge_color();
}

inline SceneLayout make_layout(const SyntheticSceneSpec& s, Rng& rng) {
    SceneLayout L;
    L.H = s.height;
    L.W = s.width;
    L.horizon = static_cast<std::size_t>(std::lround(0.42 * L.H));
    L.verge_base = static_cast<std::size_t>(std::lround(0.62 * L.H));
    L.road_top = static_cast<std::size_t>(std::lround(0.72 * L.H));
    const double slot = static_cast<double>(L.W) / s.building_count;
    static const Rgb palette[] = {{0.85f, 0.78f, 0.62f}, {0.70f, 0.36f, 0.30f}, {0.78f, 0.78f, 0.80f},
                                  {0.62f, 0.72f, 0.85f}, {0.90f, 0.86f, 0.74f}, {0.55f, 0.50f, 0.60f}};
    for (int i = 0; i < s.building_count; ++i) {
        const double w = slot * uniform(rng, 0.6, 0.9);
        const double left = slot * i + uniform(rng, 0.0, slot - w);
        L.slot_left.push_back(static_cast<std::size_t>(std::lround(left)));
        L.slot_width.push_back(std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(w))));
        L.bld_height.push_back(static_cast<std::size_t>(std::lround(uniform(rng, 0.22, 0.42) * L.H)));
        L.bld_color.push_back(palette[rng() % 6]);
    }
    const long trees = uniform_int(rng, 1, 3);
    for (long t = 0; t < trees; ++t)
        L.trees.push_back({uniform(rng, 0.30, 0.45) * L.H, uniform(rng, 0.05, 0.95) * L.W,
                           std::max(2.0, 0.07 * L.H)});
    return L;
}

inline void draw_base(PixelImage& img, const SceneLayout& L) {
    Canvas c(img, nullptr);
    for (std::size_t y = 0; y < L.H; ++y) {
        Rgb col = y < L.horizon ? sky_at(L, y) : y < L.road_top ? verge_color() : Rgb{0.34f, 0.34f, 0.37f};
        c.rect(static_cast<long>(y), 0, static_cast<long>(y) + 1, static_cast<long>(L.W), col);
    }
    const long lane = static_cast<long>(std::lround(0.86 * L.H));
    for (long x = 0; x < static_cast<long>(L.W); x += 8) c.rect(lane, x, lane + 1, x + 4, {0.92f, 0.92f, 0.85f});
}

inline void draw_building(PixelImage& img, const SceneLayout& L, std::size_t i) {
    Canvas c(img, nullptr);
    const long x0 = static_cast<long>(L.slot_left[i]), x1 = x0 + static_cast<long>(L.slot_width[i]);
    const long y1 = static_cast<long>(L.verge_base), y0 = y1 - static_cast<long>(L.bld_height[i]);
    c.rect(y0, x0, y1, x1, L.bld_color[i]);
    for (long y = y0 + 2; y + 2 < y1; y += 4)
        for (long x = x0 + 2; x + 2 < x1; x += 4) c.rect(y, x, y + 2, x + 2, {0.20f, 0.24f, 0.32f});
}

inline void draw_tree(PixelImage& img, double cy, double cx, double r) {
    Canvas c(img, nullptr);
    c.rect(static_cast<long>(cy), static_cast<long>(cx) - 1, static_cast<long>(cy + 2.2 * r), static_cast<long>(cx) + 1,
           {0.36f, 0.25f, 0.14f});
    c.disc(cy, cx, r, {0.16f, 0.45f, 0.18f});
}

// Vacant slot with a rubble mound. Clears whatever stood there.
inline void draw_rubble_lot(Canvas& c, const SceneLayout& L, std::size_t i, Rng& rng) {
    const long x0 = static_cast<long>(L.slot_left[i]), x1 = x0 + static_cast<long>(L.slot_width[i]);
    const long y1 = static_cast<long>(L.verge_base), y0 = y1 - static_cast<long>(L.bld_height[i]);
    for (long y = y0; y < y1; ++y) c.rect(y, x0, y + 1, x1, background_at(L, static_cast<std::size_t>(y)));
    const double mound = 0.10 * static_cast<double>(L.H);
    const double mid = 0.5 * static_cast<double>(x0 + x1), half = 0.5 * static_cast<double>(x1 - x0);
    static const Rgb rubble[] = {{0.48f, 0.44f, 0.40f}, {0.30f, 0.28f, 0.26f}, {0.62f, 0.50f, 0.38f}};
    for (long x = x0; x < x1; ++x) {
        const double h = mound * (1.0 - std::abs(static_cast<double>(x) + 0.5 - mid) / half);
        for (long y = y1 - static_cast<long>(std::lround(h)); y < y1; ++y) c.put(y, x, rubble[rng() % 3]);
    }
}

inline void draw_speckle(Canvas& c, const SceneLayout& L, double density, Rng& rng) {
    static const Rgb chips[] = {{0.42f, 0.30f, 0.18f}, {0.24f, 0.23f, 0.21f}, {0.66f, 0.54f, 0.36f}};
    if (density <= 0) return;
    for (std::size_t y = L.verge_base; y < L.H; ++y)
        for (std::size_t x = 0; x < L.W; ++x)
            if (uniform(rng) < density) {
                const Rgb col = chips[rng() % 3];
                c.put(static_cast<long>(y), static_cast<long>(x), col);
                if (uniform(rng) < 0.5) c.put(static_cast<long>(y), static_cast<long>(x) + 1, col);
            }
}

// Opaque muddy water rising from the bottom edge.
inline void draw_water(Canvas& c, const SceneLayout& L, std::size_t rows) {
    rows = std::min(rows, L.H - L.horizon);
    for (std::size_t r = 0; r < rows; ++r) {
        const long y = static_cast<long>(L.H - 1 - r);
        const float ripple = (r % 3 == 0) ? 0.05f : 0.0f;
        c.rect(y, 0, y + 1, static_cast<long>(L.W), {0.38f + ripple, 0.40f + ripple, 0.32f + ripple});
    }
}

inline void draw_log(Canvas& c, const SceneLayout& L, Rng& rng) {
    const double len = uniform(rng, 0.18, 0.28) * static_cast<double>(L.W);
    const long y = static_cast<long>(uniform_int(rng, static_cast<long>(L.verge_base),
                                                 static_cast<long>(L.H) - 3));
    const long x0 = static_cast<long>(uniform(rng, 0, static_cast<double>(L.W) - len));
    const long x1 = x0 + static_cast<long>(len);
    c.rect(y, x0, y + 2, x1, {0.36f, 0.24f, 0.12f});
    const double r = std::max(1.5, 0.045 * static_cast<double>(L.H));
    c.disc(static_cast<double>(y), uniform(rng) < 0.5 ? static_cast<double>(x0) : static_cast<double>(x1), r,
           {0.20f, 0.42f, 0.16f});
}

struct DamageAmounts {
    double speckle = 0;
    std::size_t water_rows = 0;
    long logs = 0;
    std::vector<std::size_t> lots; // slots turned into rubble lots
};

// Scene with clutter `a` and, optionally, event damage `b`, painted layer by
// layer (lots, speckle, logs, water) so that clutter and damage of the same
// kind are indistinguishable in the result.
inline PixelImage render_scene(const SceneLayout& L, const DamageAmounts& a, const DamageAmounts* b,
                               std::uint64_t seed) {
    PixelImage img(L.H, L.W, 3);
    draw_base(img, L);
    for (std::size_t i = 0; i < L.slot_left.size(); ++i) draw_building(img, L, i);
    for (const auto& t : L.trees) draw_tree(img, t[0], t[1], t[2]);
    Canvas c(img, nullptr);
    Rng a_lots(derive_seed(seed, 31)), a_speck(derive_seed(seed, 32)), a_logs(derive_seed(seed, 33));
    Rng b_lots(derive_seed(seed, 41)), b_speck(derive_seed(seed, 42)), b_logs(derive_seed(seed, 43));
    for (std::size_t i : a.lots) draw_rubble_lot(c, L, i, a_lots);
    if (b)
        for (std::size_t i : b->lots) draw_rubble_lot(c, L, i, b_lots);
    draw_speckle(c, L, a.speckle, a_speck);
    if (b) draw_speckle(c, L, b->speckle, b_speck);
    for (long k = 0; k < a.logs; ++k) draw_log(c, L, a_logs);
    if (b)
        for (long k = 0; k < b->logs; ++k) draw_log(c, L, b_logs);
    draw_water(c, L, a.water_rows + (b ? b->water_rows : 0));
    return img;
}

} // namespace detail

inline SyntheticPair generate_synthetic_pair(const SyntheticSceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng layout_rng(derive_seed(seed, 10));
    const auto L = detail::make_layout(spec, layout_rng);
    SyntheticPair out;
    out.budget = spec.damage_budget;
    out.label = label_for_budget(spec.damage_budget, spec.t_mild, spec.t_severe);
    out.clutter_level = uniform(layout_rng, 0.0, spec.clutter);

    // Slot order decides which slots are vacant before the event and which collapse after.
    std::vector<std::size_t> slots(L.slot_left.size());
    for (std::size_t i = 0; i < slots.size(); ++i) slots[i] = i;
    for (std::size_t i = slots.size(); i > 1; --i) std::swap(slots[i - 1], slots[layout_rng() % i]);
    const double ground = static_cast<double>(L.H - L.horizon);
    const double half_slots = 0.5 * static_cast<double>(spec.building_count);

    auto amounts = [&](double level, std::size_t first_slot, bool at_least_one_row) {
        detail::DamageAmounts d;
        d.speckle = level * spec.debris_density;
        const double rows = level * spec.flood_fraction * ground;
        d.water_rows = static_cast<std::size_t>(at_least_one_row ? std::ceil(rows) : std::lround(rows));
        d.logs = std::lround(level * spec.felled_tree_count);
        const auto lots = static_cast<std::size_t>(std::lround(level * half_slots));
        for (std::size_t i = first_slot; i < std::min(slots.size(), first_slot + lots); ++i) d.lots.push_back(slots[i]);
        return d;
    };

    const auto before = amounts(out.clutter_level, 0, false);
    out.pre = detail::render_scene(L, before, nullptr, seed);
    out.mask.assign(L.H * L.W, 0);
    if (spec.damage_budget > 0) {
        const auto after = amounts(spec.damage_budget, before.lots.size(), true);
        out.post = detail::render_scene(L, before, &after, seed);
        const std::size_t n = L.H * L.W;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t ch = 0; ch < 3; ++ch)
                if (out.post.values[ch * n + i] != out.pre.values[ch * n + i]) out.mask[i] = 1;
    } else {
        out.post = out.pre;
    }
    if (spec.noise_amplitude > 0) {
        Rng noise_rng(derive_seed(seed, 13));
        for (auto& v : out.post.values)
            v += static_cast<float>(uniform(noise_rng, -spec.noise_amplitude, spec.noise_amplitude));
        out.post.clamp();
    }
    return out;
}

// Benchmark sample: the budget is drawn uniformly from [0, 1) by the seed.
inline SyntheticPair generate_benchmark_pair(SyntheticSceneSpec spec, std::uint64_t seed) {
    Rng rng(derive_seed(seed, 20));
    spec.damage_budget = uniform(rng);
    return generate_synthetic_pair(spec, seed);
}

inline std::string synthetic_id(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "syn-%06zu", i);
    return buf;
}

struct SyntheticExport {
    std::filesystem::path manifest, labels, directory;
    std::size_t count = 0;
};

// Writes <dir>/images/<id>-{pre,post}.png, <dir>/masks/<id>.png, a catalog
// manifest and a pair_id,label file. Scenes sit on a 0.001 degree grid with
// each post 1 m from its pre, so pairing at the default threshold recovers
// them.
inline SyntheticExport export_synthetic_dataset(const std::filesystem::path& dir, std::size_t count,
                                                const SyntheticSceneSpec& spec, std::uint64_t seed) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    ImageCatalog catalog;
    std::vector<LabeledPair> labels;
    const double one_meter = 1.0 / 111'195.0;
    for (std::size_t i = 0; i < count; ++i) {
        const auto id = synthetic_id(i);
        auto s = generate_benchmark_pair(spec, derive_seed(seed, i));
        write_png(dir / "images" / (id + "-pre.png"), s.pre);
        write_png(dir / "images" / (id + "-post.png"), s.post);
        write_mask_png(dir / "masks" / (id + ".png"), s.mask, s.pre.height, s.pre.width);
        const double lat = 27.0 + 0.001 * static_cast<double>(i / 100), lon = -82.0 + 0.001 * static_cast<double>(i % 100);
        catalog.add({id + "-pre", Phase::pre, lat, lon, "2023-08-29T12:00:00Z", "images/" + id + "-pre.png"});
        catalog.add({id + "-post", Phase::post, lat + one_meter, lon, "2024-10-17T12:00:00Z",
                     "images/" + id + "-post.png"});
        labels.push_back({"pair-" + id + "-post", static_cast<int>(s.label)});
    }
    SyntheticExport out{dir / "manifest.csv", dir / "labels.csv", dir, count};
    std::ofstream m(out.manifest), l(out.labels);
    if (!m || !l) throw RuntimeFailure("cannot write synthetic dataset index in " + dir.string());
    write_manifest(m, catalog);
    write_labels_csv(l, labels);
    return out;
}

} // namespace svdamage

#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdamage/catalog/catalog.hpp"

namespace svdamage {

inline constexpr double kDefaultMaxPairDistanceM = 10.0;

struct ImagePair {
    std::string pair_id;
    std::string pre_id;
    std::string post_id;
    double pairing_distance = 0; // meters

    bool operator==(const ImagePair&) const = default;
};

inline std::string pair_id_for(const std::string& post_id) { return "pair-" + post_id; }

struct PairDiscard {
    std::string post_id;
    std::string nearest_pre_id;
    double distance = 0;
};

struct PairingResult {
    std::vector<ImagePair> pairs;                             // sorted by pair_id
    std::vector<PairDiscard> discarded;                       // nearest match beyond the threshold
    std::map<std::string, std::vector<std::string>> shared;   // pre_id -> posts, when > 1
    std::vector<std::string> rejected;                        // diagnostics for invalid coordinates
};

namespace detail {

struct PreEntry {
    double lat;
    GeoPoint at;
    const std::string* id;
};

// Nearest pre entry to q; ties resolve to the lexicographically lowest id.
inline std::pair<const PreEntry*, double> nearest_pre(const std::vector<PreEntry>& pres, const GeoPoint& q) {
    auto mid = std::lower_bound(pres.begin(), pres.end(), q.latitude,
                                [](const PreEntry& e, double lat) { return e.lat < lat; });
    const PreEntry* best = nullptr;
    double best_d = INFINITY;
    auto consider = [&](const PreEntry& e) {
        const double d = haversine_distance(q, e.at);
        if (d < best_d || (d == best_d && *e.id < *best->id)) best = &e, best_d = d;
    };
    // Latitude difference bounds the distance from below; the slack keeps
    // equal-distance candidates in play despite rounding.
    auto hopeless = [&](const PreEntry& e) { return latitude_bound(q.latitude, e.lat) * (1.0 - 1e-9) > best_d; };
    auto up = mid;
    auto down = mid;
    while (up != pres.end() || down != pres.begin()) {
        bool moved = false;
        if (up != pres.end() && !hopeless(*up)) consider(*up++), moved = true;
        else up = pres.end();
        if (down != pres.begin() && !hopeless(*std::prev(down))) consider(*--down), moved = true;
        else down = pres.begin();
        if (!moved) break;
    }
    return {best, best_d};
}

} // namespace detail

// Matches every post image to its globally nearest pre image; matches beyond
// max_distance are discarded and reported.
inline PairingResult pair_images(const ImageCatalog& catalog, double max_distance = kDefaultMaxPairDistanceM) {
    require(max_distance >= 0 && !std::isnan(max_distance), "max_distance must be non-negative");
    PairingResult out;
    std::vector<detail::PreEntry> pres;
    std::vector<const StreetViewImage*> posts;
    for (const auto& im : catalog.images()) {
        if (!valid_coordinate(im.location())) {
            out.rejected.push_back("image " + im.image_id + ": invalid coordinates");
            continue;
        }
        if (im.phase == Phase::pre) pres.push_back({im.latitude, im.location(), &im.image_id});
        else posts.push_back(&im);
    }
    if (pres.empty()) throw ValidationError("pair_images: catalog has no usable pre-phase images");
    if (posts.empty()) throw ValidationError("pair_images: catalog has no usable post-phase images");
    std::sort(pres.begin(), pres.end(), [](const auto& a, const auto& b) {
        return a.lat != b.lat ? a.lat < b.lat : *a.id < *b.id;
    });

    for (const auto* post : posts) {
        auto [best, d] = detail::nearest_pre(pres, post->location());
        if (d > max_distance) {
            out.discarded.push_back({post->image_id, *best->id, d});
            continue;
        }
        out.pairs.push_back({pair_id_for(post->image_id), *best->id, post->image_id, d});
    }
    std::sort(out.pairs.begin(), out.pairs.end(), [](const auto& a, const auto& b) { return a.pair_id < b.pair_id; });
    std::map<std::string, std::vector<std::string>> uses;
    for (const auto& p : out.pairs) uses[p.pre_id].push_back(p.post_id);
    for (auto& [pre, list] : uses)
        if (list.size() > 1) out.shared.emplace(pre, std::move(list));
    return out;
}

inline nlohmann::json to_json(const ImagePair& p) {
    return {{"pair_id", p.pair_id}, {"pre_id", p.pre_id}, {"post_id", p.post_id},
            {"pairing_distance", p.pairing_distance}};
}

inline void write_pairs_jsonl(std::ostream& out, const std::vector<ImagePair>& pairs) {
    for (const auto& p : pairs) out << to_json(p).dump() << '\n';
}

inline std::vector<ImagePair> read_pairs_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read pair list " + path.string());
    std::vector<ImagePair> out;
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        try {
            auto j = nlohmann::json::parse(line);
            out.push_back({j.at("pair_id").get<std::string>(), j.at("pre_id").get<std::string>(),
                           j.at("post_id").get<std::string>(), j.at("pairing_distance").get<double>()});
        } catch (const nlohmann::json::exception& e) {
            throw ValidationError(path.string() + ":" + std::to_string(n) + ": " + e.what());
        }
    }
    return out;
}

inline void write_discard_report(std::ostream& out, const PairingResult& r, double max_distance) {
    char buf[64];
    out << "pairs " << r.pairs.size() << " discarded " << r.discarded.size() << " shared_pre " << r.shared.size()
        << " rejected " << r.rejected.size() << '\n';
    for (const auto& d : r.discarded) {
        std::snprintf(buf, sizeof buf, "%.3f", d.distance);
        out << "discard " << d.post_id << " nearest " << d.nearest_pre_id << " at " << buf << " m > "
            << max_distance << " m\n";
    }
    for (const auto& [pre, posts] : r.shared) {
        out << "shared " << pre << ':';
        for (const auto& p : posts) out << ' ' << p;
        out << '\n';
    }
    for (const auto& msg : r.rejected) out << "rejected " << msg << '\n';
}

} // namespace svdamage

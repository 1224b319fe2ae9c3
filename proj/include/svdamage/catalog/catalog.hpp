#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <regex>
#include <string>
#include <vector>

#include "svdamage/catalog/geo.hpp"
#include "svdamage/core/error.hpp"

namespace svdamage {

enum class Phase { pre, post };

inline std::string to_string(Phase p) { return p == Phase::pre ? "pre" : "post"; }

inline Phase parse_phase(const std::string& s) {
    if (s == "pre") return Phase::pre;
    if (s == "post") return Phase::post;
    throw ValidationError("unknown phase '" + s + "' (expected pre or post)");
}

struct StreetViewImage {
    std::string image_id;
    Phase phase = Phase::post;
    double latitude = 0;
    double longitude = 0;
    std::string captured_at; // ISO-8601, UTC
    std::string uri;

    GeoPoint location() const { return {latitude, longitude}; }
};

inline bool is_iso8601(const std::string& s) {
    static const std::regex re(R"(\d{4}-\d{2}-\d{2}([T ]\d{2}:\d{2}(:\d{2}(\.\d+)?)?(Z|[+-]\d{2}:?\d{2})?)?)");
    return std::regex_match(s, re);
}

class ImageCatalog {
public:
    // Returns false (and leaves the catalog unchanged) on a duplicate id.
    bool add(StreetViewImage img) {
        if (index_.count(img.image_id)) return false;
        index_.emplace(img.image_id, images_.size());
        images_.push_back(std::move(img));
        return true;
    }

    const std::vector<StreetViewImage>& images() const { return images_; }
    std::size_t size() const { return images_.size(); }
    bool contains(const std::string& id) const { return index_.count(id) > 0; }

    const StreetViewImage& at(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw ValidationError("catalog has no image '" + id + "'");
        return images_[it->second];
    }

    std::size_t count(Phase p) const {
        std::size_t n = 0;
        for (const auto& im : images_) n += im.phase == p;
        return n;
    }

private:
    std::vector<StreetViewImage> images_;
    std::map<std::string, std::size_t> index_;
};

struct CatalogLoad {
    ImageCatalog catalog;
    std::vector<std::string> diagnostics; // one per rejected row
};

// Splits one CSV record; double quotes protect commas and "" escapes a quote.
inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out(1);
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') out.back() += '"', ++i;
            else if (c == '"') quoted = false;
            else out.back() += c;
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.emplace_back();
        } else if (c != '\r') {
            out.back() += c;
        }
    }
    return out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string o = "\"";
    for (char c : s) o += c == '"' ? std::string("\"\"") : std::string(1, c);
    return o + '"';
}

namespace detail {

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        std::size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

} // namespace detail

inline const char* kManifestHeader = "image_id,phase,latitude,longitude,captured_at,uri";

// Reads a manifest CSV. Bad rows are skipped with a diagnostic; an unreadable
// file or a header without the required columns throws.
inline CatalogLoad load_catalog(std::istream& in, const std::string& name = "manifest") {
    CatalogLoad out;
    std::string line;
    if (!std::getline(in, line)) throw ValidationError(name + ": empty manifest");
    if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
    const auto header = split_csv_line(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[header[i]] = i;
    for (const char* need : {"image_id", "phase", "latitude", "longitude", "captured_at", "uri"})
        if (!col.count(need)) throw ValidationError(name + ": header lacks column '" + need + "'");

    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty() || line == "\r") continue;
        const auto f = split_csv_line(line);
        auto reject = [&](const std::string& why) {
            out.diagnostics.push_back(name + ":" + std::to_string(row) + ": " + why);
        };
        if (f.size() != header.size()) {
            reject("expected " + std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
            continue;
        }
        StreetViewImage img;
        img.image_id = f[col["image_id"]];
        if (img.image_id.empty()) {
            reject("missing image_id");
            continue;
        }
        const auto& ph = f[col["phase"]];
        if (ph != "pre" && ph != "post") {
            reject("image " + img.image_id + ": bad phase '" + ph + "'");
            continue;
        }
        img.phase = parse_phase(ph);
        if (!detail::parse_double(f[col["latitude"]], img.latitude) ||
            !detail::parse_double(f[col["longitude"]], img.longitude)) {
            reject("image " + img.image_id + ": unparseable coordinates");
            continue;
        }
        if (!valid_coordinate(img.location())) {
            reject("image " + img.image_id + ": coordinates out of range (" + f[col["latitude"]] + ", " +
                   f[col["longitude"]] + ")");
            continue;
        }
        img.captured_at = f[col["captured_at"]];
        if (!is_iso8601(img.captured_at)) {
            reject("image " + img.image_id + ": captured_at '" + img.captured_at + "' is not ISO-8601");
            continue;
        }
        img.uri = f[col["uri"]];
        if (img.uri.empty()) {
            reject("image " + img.image_id + ": missing uri");
            continue;
        }
        if (!out.catalog.add(img)) reject("duplicate image_id " + img.image_id);
    }
    return out;
}

inline CatalogLoad load_catalog(const std::filesystem::path& manifest) {
    std::ifstream in(manifest);
    if (!in) throw ValidationError("cannot read manifest " + manifest.string());
    return load_catalog(in, manifest.string());
}

inline void write_manifest(std::ostream& out, const ImageCatalog& catalog) {
    out << kManifestHeader << '\n';
    char buf[64];
    for (const auto& im : catalog.images()) {
        out << csv_escape(im.image_id) << ',' << to_string(im.phase) << ',';
        std::snprintf(buf, sizeof buf, "%.9f,%.9f", im.latitude, im.longitude);
        out << buf << ',' << csv_escape(im.captured_at) << ',' << csv_escape(im.uri) << '\n';
    }
}

} // namespace svdamage

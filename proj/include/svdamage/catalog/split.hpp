#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdamage/catalog/catalog.hpp"

namespace svdamage {

enum class DamageLabel : int { mild = 0, moderate = 1, severe = 2, no_damage = 3 };

inline const char* to_string(DamageLabel l) {
    switch (l) {
    case DamageLabel::mild: return "mild";
    case DamageLabel::moderate: return "moderate";
    case DamageLabel::severe: return "severe";
    case DamageLabel::no_damage: return "no_damage";
    }
    return "?";
}

inline DamageLabel parse_label(const std::string& s) {
    if (s == "mild" || s == "0") return DamageLabel::mild;
    if (s == "moderate" || s == "1") return DamageLabel::moderate;
    if (s == "severe" || s == "2") return DamageLabel::severe;
    if (s == "no_damage" || s == "3") return DamageLabel::no_damage;
    throw ValidationError("unknown damage label '" + s + "'");
}

struct LabeledPair {
    std::string pair_id;
    int label = 0;
};

struct SplitRatio {
    int train = 8;
    int val = 2;
    std::string str() const { return std::to_string(train) + ":" + std::to_string(val); }
};

inline SplitRatio parse_ratio(const std::string& s) {
    const auto colon = s.find(':');
    SplitRatio r;
    try {
        require(colon != std::string::npos, "");
        std::size_t a = 0, b = 0;
        r.train = std::stoi(s.substr(0, colon), &a);
        r.val = std::stoi(s.substr(colon + 1), &b);
        require(a == colon && b == s.size() - colon - 1, "");
    } catch (const std::exception&) {
        throw ValidationError("bad split ratio '" + s + "' (expected A:B)");
    }
    if (r.train <= 0 || r.val <= 0) throw ValidationError("split ratio components must be positive: " + s);
    return r;
}

struct DatasetSplit {
    std::vector<std::string> train_ids; // sorted
    std::vector<std::string> val_ids;   // sorted
    SplitRatio ratio;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;
};

// Per-class train counts: floor of each class's share, then the slots still
// needed to reach round(N * a / (a + b)) go to the largest remainders (lower
// class index first on ties). Classes too small to split are reported in
// `small` and sent wholly to train.
inline std::map<int, std::size_t> stratified_train_counts(const std::map<int, std::size_t>& class_sizes,
                                                          SplitRatio ratio, std::vector<int>* small = nullptr) {
    std::map<int, std::size_t> out;
    std::size_t n = 0;
    for (const auto& [k, c] : class_sizes) {
        if (c < 2) {
            out[k] = c;
            if (small) small->push_back(k);
        } else {
            n += c;
        }
    }
    const long long a = ratio.train, total = ratio.train + ratio.val;
    // round half up on an exact rational: (2*n*a + total) / (2*total)
    std::size_t target = static_cast<std::size_t>((2 * static_cast<long long>(n) * a + total) / (2 * total));
    std::vector<std::pair<long long, int>> rema; // (remainder numerator, class)
    std::size_t assigned = 0;
    for (const auto& [k, c] : class_sizes) {
        if (c < 2) continue;
        const long long num = static_cast<long long>(c) * a;
        out[k] = static_cast<std::size_t>(num / total);
        assigned += out[k];
        rema.emplace_back(num % total, k);
    }
    std::stable_sort(rema.begin(), rema.end(), [](const auto& x, const auto& y) {
        return x.first != y.first ? x.first > y.first : x.second < y.second;
    });
    for (std::size_t i = 0; assigned < target && i < rema.size(); ++i, ++assigned) ++out[rema[i].second];
    return out;
}

inline DatasetSplit split_dataset(const std::vector<LabeledPair>& pairs, SplitRatio ratio, std::uint64_t seed) {
    require(ratio.train > 0 && ratio.val > 0, "split ratio components must be positive");
    require(!pairs.empty(), "split_dataset: no labeled pairs");
    std::map<int, std::vector<std::string>> by_class;
    std::map<std::string, int> seen;
    for (const auto& p : pairs) {
        require(seen.emplace(p.pair_id, p.label).second, "split_dataset: duplicate pair " + p.pair_id);
        by_class[p.label].push_back(p.pair_id);
    }
    std::map<int, std::size_t> sizes;
    for (auto& [k, ids] : by_class) {
        std::sort(ids.begin(), ids.end());
        sizes[k] = ids.size();
    }
    DatasetSplit s;
    s.ratio = ratio;
    s.seed = seed;
    std::vector<int> small;
    const auto counts = stratified_train_counts(sizes, ratio, &small);
    for (int k : small)
        s.warnings.push_back("class " + std::to_string(k) + " has " + std::to_string(sizes[k]) +
                             " sample(s); placed entirely in train");
    std::mt19937_64 rng(seed);
    for (auto& [k, ids] : by_class) {
        for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);
        const std::size_t t = counts.at(k);
        s.train_ids.insert(s.train_ids.end(), ids.begin(), ids.begin() + static_cast<long>(t));
        s.val_ids.insert(s.val_ids.end(), ids.begin() + static_cast<long>(t), ids.end());
    }
    std::sort(s.train_ids.begin(), s.train_ids.end());
    std::sort(s.val_ids.begin(), s.val_ids.end());
    return s;
}

inline nlohmann::json to_json(const DatasetSplit& s) {
    return {{"ratio", s.ratio.str()}, {"seed", s.seed}, {"train", s.train_ids}, {"val", s.val_ids},
            {"warnings", s.warnings}};
}

inline DatasetSplit split_from_json(const nlohmann::json& j) {
    DatasetSplit s;
    s.ratio = parse_ratio(j.at("ratio").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    s.train_ids = j.at("train").get<std::vector<std::string>>();
    s.val_ids = j.at("val").get<std::vector<std::string>>();
    s.warnings = j.value("warnings", std::vector<std::string>{});
    return s;
}

// `pair_id,label` CSV as written by the annotation export.
inline std::vector<LabeledPair> read_labels_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read label file " + path.string());
    std::vector<LabeledPair> out;
    std::string line;
    std::getline(in, line);
    if (split_csv_line(line) != std::vector<std::string>{"pair_id", "label"})
        throw ValidationError(path.string() + ": expected header pair_id,label");
    std::size_t n = 1;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty() || line == "\r") continue;
        auto f = split_csv_line(line);
        if (f.size() != 2) throw ValidationError(path.string() + ":" + std::to_string(n) + ": expected 2 fields");
        out.push_back({f[0], static_cast<int>(parse_label(f[1]))});
    }
    return out;
}

inline void write_labels_csv(std::ostream& out, const std::vector<LabeledPair>& labels) {
    out << "pair_id,label\n";
    for (const auto& l : labels)
        out << csv_escape(l.pair_id) << ',' << to_string(static_cast<DamageLabel>(l.label)) << '\n';
}

} // namespace svdamage

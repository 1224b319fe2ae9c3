#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <array>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdamage/catalog/catalog.hpp"
#include "svdamage/catalog/pairing.hpp"
#include "svdamage/catalog/split.hpp"

namespace svdamage {

struct AnnotationRecord {
    std::string pair_id, annotator_id;
    DamageLabel label = DamageLabel::mild;
    std::string submitted_at; // UTC, ISO 8601
    bool operator==(const AnnotationRecord&) const = default;
};

struct AdjudicationRecord {
    std::string pair_id, adjudicator_id;
    DamageLabel label = DamageLabel::mild;
    std::string submitted_at;
    bool operator==(const AdjudicationRecord&) const = default;
};

inline DamageLabel parse_damage_class(const std::string& s) {
    const DamageLabel l = parse_label(s);
    if (l == DamageLabel::no_damage) throw ValidationError("annotation labels are mild|moderate|severe, got '" + s + "'");
    return l;
}

enum class ResolvedBy { majority, adjudication, conflict };

inline const char* to_string(ResolvedBy r) {
    switch (r) {
    case ResolvedBy::majority: return "majority";
    case ResolvedBy::adjudication: return "adjudication";
    case ResolvedBy::conflict: return "conflict";
    }
    return "?";
}

struct ConsensusLabel {
    std::string pair_id;
    std::optional<DamageLabel> label; // nullopt: CONFLICT
    std::array<int, 3> votes{0, 0, 0};
    ResolvedBy resolved_by = ResolvedBy::conflict;
    bool conflict() const { return !label.has_value(); }
};

// Strict plurality over the damage classes, else CONFLICT; an adjudicated
// label overrides either outcome.
inline ConsensusLabel resolve_consensus(const std::string& pair_id, const std::array<int, 3>& votes,
                                        std::optional<DamageLabel> adjudicated = std::nullopt) {
    ConsensusLabel c;
    c.pair_id = pair_id;
    c.votes = votes;
    if (adjudicated) {
        c.label = adjudicated;
        c.resolved_by = ResolvedBy::adjudication;
        return c;
    }
    int best = 0;
    for (int k = 1; k < 3; ++k)
        if (votes[k] > votes[best]) best = k;
    int ties = 0;
    for (int k = 0; k < 3; ++k) ties += votes[k] == votes[best];
    if (votes[best] > 0 && ties == 1) {
        c.label = static_cast<DamageLabel>(best);
        c.resolved_by = ResolvedBy::majority;
    }
    return c;
}

inline std::string utc_now_iso8601() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct PairInfo {
    std::string pair_id, pre_id, post_id, pre_uri, post_uri;
    double distance = 0;
};

// Pair metadata from pairs.jsonl plus the catalog's image URIs.
inline std::vector<PairInfo> pair_infos(const std::vector<ImagePair>& pairs, const ImageCatalog* catalog) {
    std::vector<PairInfo> out;
    for (const auto& p : pairs) {
        PairInfo i{p.pair_id, p.pre_id, p.post_id, "", "", p.pairing_distance};
        if (catalog) {
            if (catalog->contains(p.pre_id)) i.pre_uri = catalog->at(p.pre_id).uri;
            if (catalog->contains(p.post_id)) i.post_uri = catalog->at(p.post_id).uri;
        }
        out.push_back(std::move(i));
    }
    return out;
}

inline nlohmann::json to_json(const AnnotationRecord& r) {
    return {{"type", "label"}, {"pair_id", r.pair_id}, {"annotator_id", r.annotator_id},
            {"label", to_string(r.label)}, {"submitted_at", r.submitted_at}};
}

inline nlohmann::json to_json(const AdjudicationRecord& r) {
    return {{"type", "adjudication"}, {"pair_id", r.pair_id}, {"adjudicator_id", r.adjudicator_id},
            {"label", to_string(r.label)}, {"submitted_at", r.submitted_at}};
}

inline nlohmann::json to_json(const ConsensusLabel& c) {
    return {{"pair_id", c.pair_id},
            {"label", c.label ? to_string(*c.label) : "CONFLICT"},
            {"votes", {{"mild", c.votes[0]}, {"moderate", c.votes[1]}, {"severe", c.votes[2]}}},
            {"resolved_by", to_string(c.resolved_by)}};
}

struct SubmitResult {
    bool accepted = false;
    AnnotationRecord record; // the stored record (the existing one on rejection)
};

struct ExportSummary {
    std::size_t exported = 0, conflicts = 0, unlabeled = 0;
    std::vector<std::string> conflict_ids;
};

struct AnnotationStats {
    std::size_t pairs = 0, labeled_pairs = 0, complete_pairs = 0, records = 0, conflicts = 0, multi_labeled = 0,
                unanimous = 0;
    std::map<std::string, std::size_t> per_annotator;
    double agreement_rate() const {
        return multi_labeled ? static_cast<double>(unanimous) / static_cast<double>(multi_labeled) : 0.0;
    }
};

inline nlohmann::json to_json(const AnnotationStats& s) {
    return {{"pairs", s.pairs},
            {"labeled_pairs", s.labeled_pairs},
            {"complete_pairs", s.complete_pairs},
            {"records", s.records},
            {"conflicts", s.conflicts},
            {"multi_labeled_pairs", s.multi_labeled},
            {"unanimous_pairs", s.unanimous},
            {"agreement_rate", s.agreement_rate()},
            {"per_annotator", s.per_annotator}};
}

// Label store over an append-only JSON Lines log. Existing log content is
// replayed on open; every accepted submission or adjudication is appended
// with one write(2) on an O_APPEND descriptor.
class AnnotationStore {
public:
    using Clock = std::function<std::string()>;

    AnnotationStore(std::vector<PairInfo> pairs, std::vector<std::string> annotators,
                    std::vector<std::string> adjudicators, std::filesystem::path log_path, Clock clock = utc_now_iso8601)
        : log_path_(std::move(log_path)), clock_(std::move(clock)) {
        require(!annotators.empty(), "annotation store needs at least one annotator");
        for (auto& p : pairs) {
            require(!p.pair_id.empty(), "pair with empty id");
            require(index_.emplace(p.pair_id, pairs_.size()).second, "duplicate pair id " + p.pair_id);
            pairs_.push_back(std::move(p));
        }
        std::sort(pairs_.begin(), pairs_.end(), [](const PairInfo& a, const PairInfo& b) { return a.pair_id < b.pair_id; });
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            index_[pairs_[i].pair_id] = i;
            images_[pairs_[i].pre_id] = pairs_[i].pre_uri;
            images_[pairs_[i].post_id] = pairs_[i].post_uri;
        }
        votes_.resize(pairs_.size());
        adjudicated_.resize(pairs_.size());
        for (auto& a : annotators) {
            require(!a.empty(), "empty annotator id");
            annotators_.insert(a);
        }
        for (auto& a : adjudicators) {
            require(!a.empty(), "empty adjudicator id");
            adjudicators_.insert(a);
        }
        replay();
        fd_ = ::open(log_path_.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) throw RuntimeFailure("cannot open label log " + log_path_.string());
    }

    ~AnnotationStore() {
        if (fd_ >= 0) ::close(fd_);
    }
    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    const std::filesystem::path& log_path() const { return log_path_; }
    std::size_t pair_count() const { return pairs_.size(); }
    bool is_annotator(const std::string& id) const { return annotators_.count(id) > 0; }
    bool is_adjudicator(const std::string& id) const { return adjudicators_.count(id) > 0; }

    std::optional<PairInfo> pair(const std::string& pair_id) const {
        auto it = index_.find(pair_id);
        if (it == index_.end()) return std::nullopt;
        return pairs_[it->second];
    }

    // Empty when the image is not part of any pair.
    std::string image_uri(const std::string& image_id) const {
        auto it = images_.find(image_id);
        return it == images_.end() ? "" : it->second;
    }

    // Least-labeled pair this annotator has not labeled; ties by pair id.
    std::optional<PairInfo> next_pair(const std::string& annotator) const {
        require_annotator(annotator);
        std::shared_lock lock(mu_);
        std::optional<std::size_t> best;
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            if (votes_[i].count(annotator)) continue;
            if (!best || votes_[i].size() < votes_[*best].size()) best = i;
        }
        if (!best) return std::nullopt;
        return pairs_[*best];
    }

    SubmitResult submit(AnnotationRecord r) {
        require_annotator(r.annotator_id);
        const std::size_t i = pair_index(r.pair_id);
        require(r.label != DamageLabel::no_damage, "annotation labels are mild|moderate|severe");
        if (r.submitted_at.empty()) r.submitted_at = clock_();
        std::unique_lock lock(mu_);
        auto it = votes_[i].find(r.annotator_id);
        if (it != votes_[i].end()) return {false, records_[it->second]};
        append(to_json(r));
        votes_[i].emplace(r.annotator_id, records_.size());
        records_.push_back(r);
        return {true, r};
    }

    AdjudicationRecord adjudicate(AdjudicationRecord r) {
        if (!is_adjudicator(r.adjudicator_id))
            throw ValidationError("'" + r.adjudicator_id + "' is not a registered adjudicator");
        const std::size_t i = pair_index(r.pair_id);
        require(r.label != DamageLabel::no_damage, "adjudicated labels are mild|moderate|severe");
        if (r.submitted_at.empty()) r.submitted_at = clock_();
        std::unique_lock lock(mu_);
        require(!votes_[i].empty(), "pair " + r.pair_id + " has no labels to adjudicate");
        append(to_json(r));
        adjudicated_[i] = r.label;
        adjudications_.push_back(r);
        return r;
    }

    ConsensusLabel consensus(const std::string& pair_id) const {
        const std::size_t i = pair_index(pair_id);
        std::shared_lock lock(mu_);
        if (votes_[i].empty()) throw ValidationError("pair " + pair_id + " has no labels");
        return consensus_locked(i);
    }

    std::vector<ConsensusLabel> conflicts() const {
        std::shared_lock lock(mu_);
        std::vector<ConsensusLabel> out;
        for (std::size_t i = 0; i < pairs_.size(); ++i)
            if (!votes_[i].empty()) {
                auto c = consensus_locked(i);
                if (c.conflict()) out.push_back(std::move(c));
            }
        return out;
    }

    // `pair_id,label` for every labeled pair with a resolved consensus, by pair id.
    ExportSummary export_labels(std::ostream& out) const {
        std::shared_lock lock(mu_);
        ExportSummary s;
        std::vector<LabeledPair> rows;
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            if (votes_[i].empty()) {
                ++s.unlabeled;
                continue;
            }
            auto c = consensus_locked(i);
            if (c.conflict()) {
                ++s.conflicts;
                s.conflict_ids.push_back(c.pair_id);
                continue;
            }
            rows.push_back({c.pair_id, static_cast<int>(*c.label)});
        }
        write_labels_csv(out, rows);
        s.exported = rows.size();
        return s;
    }

    AnnotationStats stats() const {
        std::shared_lock lock(mu_);
        AnnotationStats s;
        s.pairs = pairs_.size();
        s.records = records_.size();
        for (const auto& a : annotators_) s.per_annotator[a] = 0;
        for (const auto& r : records_) ++s.per_annotator[r.annotator_id];
        for (std::size_t i = 0; i < pairs_.size(); ++i) {
            const auto& v = votes_[i];
            if (v.empty()) continue;
            ++s.labeled_pairs;
            if (v.size() >= annotators_.size()) ++s.complete_pairs;
            if (consensus_locked(i).conflict()) ++s.conflicts;
            if (v.size() >= 2) {
                ++s.multi_labeled;
                std::set<DamageLabel> distinct;
                for (const auto& [a, idx] : v) distinct.insert(records_[idx].label);
                s.unanimous += distinct.size() == 1;
            }
        }
        return s;
    }

    std::vector<AnnotationRecord> records() const {
        std::shared_lock lock(mu_);
        return records_;
    }

    std::vector<std::string> labels_for(const std::string& pair_id) const {
        const std::size_t i = pair_index(pair_id);
        std::shared_lock lock(mu_);
        std::vector<std::string> out;
        for (const auto& [a, idx] : votes_[i]) out.push_back(a);
        return out;
    }

private:
    void require_annotator(const std::string& id) const {
        if (!is_annotator(id)) throw ValidationError("unknown annotator '" + id + "'");
    }

    std::size_t pair_index(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw NotFound("unknown pair '" + id + "'");
        return it->second;
    }

    ConsensusLabel consensus_locked(std::size_t i) const {
        std::array<int, 3> votes{0, 0, 0};
        for (const auto& [a, idx] : votes_[i]) ++votes[static_cast<std::size_t>(records_[idx].label)];
        return resolve_consensus(pairs_[i].pair_id, votes, adjudicated_[i]);
    }

    void append(const nlohmann::json& j) {
        const std::string line = j.dump() + '\n';
        const ssize_t n = ::write(fd_, line.data(), line.size());
        if (n != static_cast<ssize_t>(line.size())) throw RuntimeFailure("failed appending to " + log_path_.string());
    }

    void replay() {
        std::ifstream in(log_path_);
        if (!in) return;
        std::string line;
        std::size_t n = 0;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) continue;
            const std::string where = log_path_.string() + ":" + std::to_string(n);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(line);
            } catch (const nlohmann::json::exception&) {
                throw ValidationError(where + ": malformed log line");
            }
            const std::string type = j.value("type", "");
            auto it = index_.find(j.value("pair_id", ""));
            if (it == index_.end()) throw ValidationError(where + ": unknown pair " + j.value("pair_id", ""));
            const DamageLabel label = parse_damage_class(j.value("label", ""));
            if (type == "label") {
                AnnotationRecord r{j.value("pair_id", ""), j.value("annotator_id", ""), label, j.value("submitted_at", "")};
                annotators_.insert(r.annotator_id);
                require(votes_[it->second].emplace(r.annotator_id, records_.size()).second,
                        where + ": duplicate label for (" + r.pair_id + ", " + r.annotator_id + ")");
                records_.push_back(std::move(r));
            } else if (type == "adjudication") {
                AdjudicationRecord r{j.value("pair_id", ""), j.value("adjudicator_id", ""), label, j.value("submitted_at", "")};
                adjudicators_.insert(r.adjudicator_id);
                adjudicated_[it->second] = label;
                adjudications_.push_back(std::move(r));
            } else {
                throw ValidationError(where + ": unknown record type '" + type + "'");
            }
        }
    }

    std::filesystem::path log_path_;
    Clock clock_;
    int fd_ = -1;
    std::vector<PairInfo> pairs_;
    std::map<std::string, std::size_t> index_;
    std::map<std::string, std::string> images_;
    std::set<std::string> annotators_, adjudicators_;

    mutable std::shared_mutex mu_;
    std::vector<std::map<std::string, std::size_t>> votes_; // per pair: annotator -> record index
    std::vector<std::optional<DamageLabel>> adjudicated_;
    std::vector<AnnotationRecord> records_;
    std::vector<AdjudicationRecord> adjudications_;
};

} // namespace svdamage

#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <random>
#include <sstream>
#include <thread>

#include "svdamage/annotation/server.hpp"
#include "svdamage/data/image_io.hpp"

using namespace svdamage;

namespace {

std::filesystem::path fresh_log(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("svd_annot_" + name + ".jsonl");
    std::filesystem::remove(p);
    return p;
}

std::string pid(std::size_t i) {
    char id[32];
    std::snprintf(id, sizeof id, "pair-%05zu", i);
    return id;
}

std::vector<PairInfo> make_pairs(std::size_t n) {
    std::vector<PairInfo> out;
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = pid(i);
        out.push_back({id, "pre" + std::to_string(i), "post" + std::to_string(i), "", "", 1.0});
    }
    return out;
}

const std::vector<std::string> kFour{"a1", "a2", "a3", "a4"};

std::string fixed_clock() { return "2024-10-10T12:00:00Z"; }

std::size_t line_count(const std::filesystem::path& p) {
    std::ifstream in(p);
    std::size_t n = 0;
    std::string line;
    while (std::getline(in, line)) n += !line.empty();
    return n;
}

// Plurality by explicit counting over the raw vote list.
std::optional<DamageLabel> brute_force(const std::vector<int>& votes) {
    int best_count = -1, best = -1, holders = 0;
    for (int k = 0; k < 3; ++k) {
        const int c = static_cast<int>(std::count(votes.begin(), votes.end(), k));
        if (c > best_count) best_count = c, best = k, holders = 1;
        else if (c == best_count) ++holders;
    }
    if (holders != 1 || best_count == 0) return std::nullopt;
    return static_cast<DamageLabel>(best);
}

} // namespace

TEST(Consensus, Examples) {
    auto a = resolve_consensus("p", {3, 1, 0});
    EXPECT_EQ(a.label, DamageLabel::mild);
    EXPECT_EQ(a.resolved_by, ResolvedBy::majority);
    auto b = resolve_consensus("p", {2, 2, 0});
    EXPECT_TRUE(b.conflict());
    auto c = resolve_consensus("p", {2, 2, 0}, DamageLabel::moderate);
    EXPECT_EQ(c.label, DamageLabel::moderate);
    EXPECT_EQ(c.resolved_by, ResolvedBy::adjudication);
    EXPECT_EQ(resolve_consensus("p", {1, 1, 2}).label, DamageLabel::severe);
    EXPECT_TRUE(resolve_consensus("p", {0, 0, 0}).conflict());
}

TEST(Consensus, StoreMatchesBruteForceOnRandomDraws) {
    const std::size_t n = 3000;
    AnnotationStore store(make_pairs(n), kFour, {}, fresh_log("draws"), fixed_clock);
    std::mt19937_64 rng(3);
    std::vector<std::vector<int>> votes(n);
    for (std::size_t i = 0; i < n; ++i)
        for (const auto& a : kFour) {
            const int v = static_cast<int>(rng() % 3);
            votes[i].push_back(v);
            store.submit({pid(i), a, static_cast<DamageLabel>(v), ""});
        }
    for (std::size_t i = 0; i < n; ++i) {
        const std::string id = pid(i);
        auto c = store.consensus(id);
        EXPECT_EQ(c.label, brute_force(votes[i])) << id;
        for (int k = 0; k < 3; ++k)
            EXPECT_EQ(c.votes[static_cast<std::size_t>(k)], std::count(votes[i].begin(), votes[i].end(), k));
    }
}

TEST(Consensus, SubmissionOrderDoesNotMatter) {
    std::mt19937_64 rng(4);
    std::vector<AnnotationRecord> recs;
    for (const auto& p : make_pairs(50))
        for (const auto& a : kFour) recs.push_back({p.pair_id, a, static_cast<DamageLabel>(rng() % 3), ""});
    AnnotationStore s1(make_pairs(50), kFour, {}, fresh_log("ord1"), fixed_clock);
    AnnotationStore s2(make_pairs(50), kFour, {}, fresh_log("ord2"), fixed_clock);
    for (const auto& r : recs) s1.submit(r);
    std::shuffle(recs.begin(), recs.end(), rng);
    for (const auto& r : recs) s2.submit(r);
    for (const auto& p : make_pairs(50)) {
        auto a = s1.consensus(p.pair_id), b = s2.consensus(p.pair_id);
        EXPECT_EQ(a.label, b.label);
        EXPECT_EQ(a.votes, b.votes);
    }
    std::ostringstream e1, e2;
    s1.export_labels(e1);
    s2.export_labels(e2);
    EXPECT_EQ(e1.str(), e2.str());
}

TEST(Assignment, LeastLabeledFirstAndQueueEmpty) {
    auto pairs = make_pairs(2);
    AnnotationStore s(pairs, {"x", "y"}, {}, fresh_log("next"), fixed_clock);
    s.submit({"pair-00000", "y", DamageLabel::mild, ""});
    EXPECT_EQ(s.next_pair("x")->pair_id, "pair-00001");
    EXPECT_EQ(s.next_pair("x")->pair_id, "pair-00001");
    s.submit({"pair-00001", "x", DamageLabel::mild, ""});
    EXPECT_EQ(s.next_pair("x")->pair_id, "pair-00000");
    s.submit({"pair-00000", "x", DamageLabel::mild, ""});
    EXPECT_FALSE(s.next_pair("x").has_value());
    EXPECT_THROW(s.next_pair("nobody"), ValidationError);
}

TEST(Assignment, FourAnnotatorsDrainHundredPairs) {
    AnnotationStore s(make_pairs(100), kFour, {}, fresh_log("drain"), fixed_clock);
    std::mt19937_64 rng(5);
    std::map<std::pair<std::string, std::string>, int> seen;
    std::vector<std::string> active = kFour;
    while (!active.empty()) {
        const std::size_t k = rng() % active.size();
        auto p = s.next_pair(active[k]);
        if (!p) {
            active.erase(active.begin() + static_cast<long>(k));
            continue;
        }
        const auto key = std::make_pair(p->pair_id, active[k]);
        EXPECT_EQ(++seen[key], 1);
        ASSERT_TRUE(s.submit({p->pair_id, active[k], DamageLabel::severe, ""}).accepted);
    }
    EXPECT_EQ(seen.size(), 400u);
    EXPECT_EQ(s.stats().complete_pairs, 100u);
}

TEST(Submit, DuplicatesAndErrors) {
    const auto log = fresh_log("submit");
    AnnotationStore s(make_pairs(3), kFour, {}, log, fixed_clock);
    auto r = s.submit({"pair-00001", "a1", DamageLabel::moderate, ""});
    EXPECT_TRUE(r.accepted);
    EXPECT_EQ(r.record.submitted_at, "2024-10-10T12:00:00Z");
    EXPECT_EQ(line_count(log), 1u);
    auto d = s.submit({"pair-00001", "a1", DamageLabel::severe, ""});
    EXPECT_FALSE(d.accepted);
    EXPECT_EQ(d.record.label, DamageLabel::moderate);
    EXPECT_EQ(line_count(log), 1u);
    EXPECT_THROW(s.submit({"pair-99", "a1", DamageLabel::mild, ""}), NotFound);
    EXPECT_THROW(s.submit({"pair-00001", "zz", DamageLabel::mild, ""}), ValidationError);
    EXPECT_THROW(s.submit({"pair-00002", "a2", DamageLabel::no_damage, ""}), ValidationError);
    EXPECT_THROW(s.consensus("pair-00000"), ValidationError);
    EXPECT_THROW(parse_damage_class("no_damage"), ValidationError);
}

TEST(Export, ConflictsExcludedAndAdjudicationResolves) {
    const auto log = fresh_log("export");
    AnnotationStore s(make_pairs(10), kFour, {"judge"}, log, fixed_clock);
    for (std::size_t i = 0; i < 10; ++i) {
        const std::string id = pid(i);
        const bool tie = i < 3;
        const std::vector<int> v = tie ? std::vector<int>{0, 0, 1, 1} : std::vector<int>{2, 2, 2, 1};
        for (std::size_t a = 0; a < 4; ++a) s.submit({id, kFour[a], static_cast<DamageLabel>(v[a]), ""});
    }
    std::ostringstream os;
    auto sum = s.export_labels(os);
    EXPECT_EQ(sum.exported, 7u);
    EXPECT_EQ(sum.conflicts, 3u);
    EXPECT_EQ(s.conflicts().size(), 3u);
    EXPECT_NEAR(s.stats().agreement_rate(), 0.0, 1e-12);

    EXPECT_THROW(s.adjudicate({"pair-00000", "a1", DamageLabel::mild, ""}), ValidationError);
    s.adjudicate({"pair-00000", "judge", DamageLabel::moderate, ""});
    EXPECT_EQ(s.consensus("pair-00000").label, DamageLabel::moderate);
    EXPECT_EQ(s.conflicts().size(), 2u);
    const auto csv = std::filesystem::temp_directory_path() / "svd_annot_export.csv";
    {
        std::ofstream f(csv);
        EXPECT_EQ(s.export_labels(f).exported, 8u);
    }
    auto labels = read_labels_csv(csv);
    ASSERT_EQ(labels.size(), 8u);
    EXPECT_EQ(labels[0].pair_id, "pair-00000");
    EXPECT_EQ(labels[0].label, 1);
    std::ostringstream a, b;
    s.export_labels(a);
    s.export_labels(b);
    EXPECT_EQ(a.str(), b.str());
}

TEST(Log, ReplayRestoresStateAndRejectsCorruption) {
    const auto log = fresh_log("replay");
    std::string before;
    {
        AnnotationStore s(make_pairs(5), kFour, {"judge"}, log, fixed_clock);
        s.submit({"pair-00000", "a1", DamageLabel::mild, ""});
        s.submit({"pair-00000", "a2", DamageLabel::severe, ""});
        s.adjudicate({"pair-00000", "judge", DamageLabel::severe, ""});
        s.submit({"pair-00003", "a4", DamageLabel::moderate, ""});
        std::ostringstream os;
        s.export_labels(os);
        before = os.str();
    }
    AnnotationStore again(make_pairs(5), kFour, {}, log, fixed_clock);
    std::ostringstream os;
    again.export_labels(os);
    EXPECT_EQ(os.str(), before);
    EXPECT_EQ(again.records().size(), 3u);
    EXPECT_FALSE(again.submit({"pair-00000", "a1", DamageLabel::severe, ""}).accepted);
    {
        std::ofstream f(log, std::ios::app);
        f << "{not json\n";
    }
    EXPECT_THROW(AnnotationStore(make_pairs(5), kFour, {}, log, fixed_clock), ValidationError);
}

TEST(Log, AppendOnlyUnderConcurrentSubmissions) {
    const auto log = fresh_log("concurrent");
    const std::size_t n_pairs = 60, n_annot = 8;
    std::vector<std::string> annot;
    for (std::size_t i = 0; i < n_annot; ++i) annot.push_back("c" + std::to_string(i));
    AnnotationStore s(make_pairs(n_pairs), annot, {}, log, fixed_clock);
    std::atomic<bool> done{false};
    std::atomic<int> violations{0}, snapshots{0};
    std::thread watcher([&] {
        std::string prev;
        while (!done.load()) {
            std::ifstream f(log);
            std::string cur((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
            if (cur.compare(0, prev.size(), prev) != 0) ++violations;
            prev = std::move(cur);
            ++snapshots;
        }
    });
    std::vector<std::thread> workers;
    std::atomic<int> accepted{0}, rejected{0};
    for (std::size_t t = 0; t < n_annot; ++t)
        workers.emplace_back([&, t] {
            for (std::size_t i = 0; i < n_pairs; ++i) {
                const std::string id = pid((i * 7 + t) % n_pairs);
                // Every record is submitted twice; the second must bounce.
                for (int k = 0; k < 2; ++k)
                    (s.submit({id, annot[t], static_cast<DamageLabel>((i + t) % 3), ""}).accepted ? accepted : rejected)++;
            }
        });
    for (auto& w : workers) w.join();
    done = true;
    watcher.join();
    EXPECT_EQ(violations.load(), 0);
    EXPECT_GT(snapshots.load(), 0);
    EXPECT_EQ(accepted.load(), static_cast<int>(n_pairs * n_annot));
    EXPECT_EQ(rejected.load(), static_cast<int>(n_pairs * n_annot));
    EXPECT_EQ(line_count(log), n_pairs * n_annot);
    std::ifstream f(log);
    std::string line;
    std::set<std::pair<std::string, std::string>> keys;
    while (std::getline(f, line)) {
        auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(keys.emplace(j["pair_id"], j["annotator_id"]).second);
    }
    EXPECT_EQ(keys.size(), n_pairs * n_annot);
}

TEST(Http, EndpointsRoundTrip) {
    const auto dir = std::filesystem::temp_directory_path() / "svd_annot_http";
    std::filesystem::create_directories(dir);
    write_png(dir / "pre0.png", PixelImage(4, 4, 3, 0.5f));
    auto pairs = make_pairs(3);
    pairs[0].pre_uri = (dir / "pre0.png").string();
    AnnotationStore store(pairs, {"a1", "a2"}, {"judge"}, fresh_log("http"), fixed_clock);
    ServerOptions opt;
    opt.port = 0;
    AnnotationServer server(store, opt);
    const int port = server.start();
    httplib::Client cli("127.0.0.1", port);

    auto r = cli.Get("/api/pairs/next?annotator=a1");
    ASSERT_TRUE(r);
    EXPECT_EQ(r->status, 200);
    auto j = nlohmann::json::parse(r->body);
    EXPECT_EQ(j["pair"]["pair_id"], "pair-00000");
    EXPECT_EQ(j["pair"]["pre_url"], "/api/images/pre0");
    EXPECT_EQ(cli.Get("/api/pairs/next?annotator=ghost")->status, 400);
    EXPECT_EQ(cli.Get("/api/pairs/pair-00002")->status, 200);
    EXPECT_EQ(cli.Get("/api/pairs/pair-77")->status, 404);

    auto post = [&](const std::string& path, const nlohmann::json& body) {
        return cli.Post(path, body.dump(), "application/json");
    };
    EXPECT_EQ(post("/api/labels", {{"pair_id", "pair-00000"}, {"annotator_id", "a1"}, {"label", "mild"}})->status, 201);
    auto dup = post("/api/labels", {{"pair_id", "pair-00000"}, {"annotator_id", "a1"}, {"label", "severe"}});
    EXPECT_EQ(dup->status, 409);
    EXPECT_EQ(nlohmann::json::parse(dup->body)["record"]["label"], "mild");
    EXPECT_EQ(post("/api/labels", {{"pair_id", "pair-00000"}, {"annotator_id", "a2"}, {"label", "severe"}})->status, 201);
    EXPECT_EQ(post("/api/labels", {{"pair_id", "pair-00000"}, {"annotator_id", "a2"}, {"label", "no_damage"}})->status, 400);
    EXPECT_EQ(cli.Post("/api/labels", "{oops", "application/json")->status, 400);

    auto conflicts = nlohmann::json::parse(cli.Get("/api/conflicts")->body)["conflicts"];
    ASSERT_EQ(conflicts.size(), 1u);
    EXPECT_EQ(conflicts[0]["votes"]["mild"], 1);
    EXPECT_EQ(conflicts[0]["votes"]["severe"], 1);
    EXPECT_EQ(post("/api/adjudications", {{"pair_id", "pair-00000"}, {"adjudicator_id", "a1"}, {"label", "mild"}})->status, 400);
    auto adj = post("/api/adjudications", {{"pair_id", "pair-00000"}, {"adjudicator_id", "judge"}, {"label", "severe"}});
    EXPECT_EQ(adj->status, 201);
    EXPECT_EQ(nlohmann::json::parse(adj->body)["consensus"]["resolved_by"], "adjudication");
    EXPECT_TRUE(nlohmann::json::parse(cli.Get("/api/conflicts")->body)["conflicts"].empty());

    auto stats = nlohmann::json::parse(cli.Get("/api/stats")->body);
    EXPECT_EQ(stats["records"], 2);
    EXPECT_EQ(stats["per_annotator"]["a1"], 1);
    EXPECT_EQ(stats["multi_labeled_pairs"], 1);
    EXPECT_EQ(stats["agreement_rate"], 0.0);
    auto csv = cli.Get("/api/export");
    EXPECT_EQ(csv->body, "pair_id,label\npair-00000,severe\n");
    auto img = cli.Get("/api/images/pre0");
    EXPECT_EQ(img->status, 200);
    EXPECT_EQ(img->get_header_value("Content-Type"), "image/png");
    EXPECT_EQ(cli.Get("/api/images/post1")->status, 404);
    server.stop();
    std::filesystem::remove_all(dir);
}

// svdamage: command-line front end for every pipeline stage.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <pthread.h>
#include <signal.h>
#include <unistd.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "svdamage/svdamage.hpp"

namespace fs = std::filesystem;
using namespace svdamage;

namespace {

struct Run {
    std::string subcommand;
    std::string command_line;
    fs::path out;
    std::string config_hash;
    std::optional<std::uint64_t> seed;
    std::vector<std::pair<std::string, fs::path>> outputs;
    std::string started_at;

    void output(const std::string& what, const fs::path& p) {
        outputs.emplace_back(what, p);
        std::cout << what << ": " << p.string() << '\n';
    }

    // One manifest per run, written on success and failure alike.
    void finish(int exit_code, const std::string& error) const {
        if (out.empty()) return;
        nlohmann::json j{{"subcommand", subcommand},
                         {"command_line", command_line},
                         {"config_hash", config_hash},
                         {"seed", seed ? nlohmann::json(*seed) : nlohmann::json(nullptr)},
                         {"started_at", started_at},
                         {"finished_at", utc_now_iso8601()},
                         {"artifact_version", kArtifactVersion},
                         {"exit_code", exit_code}};
        auto& o = j["outputs"] = nlohmann::json::object();
        for (const auto& [k, p] : outputs) o[k] = p.string();
        if (!error.empty()) j["error"] = error;
        std::error_code ec;
        fs::create_directories(out, ec);
        std::string stamp = started_at;
        stamp.erase(std::remove(stamp.begin(), stamp.end(), ':'), stamp.end());
        const auto path = out / ("run-" + subcommand + "-" + stamp + "-" + std::to_string(::getpid()) + ".json");
        std::ofstream f(path);
        if (f) f << j.dump(2) << '\n';
        if (f) std::cout << "manifest: " << path.string() << '\n';
    }
};

fs::path output_root() {
    const char* env = std::getenv("SVDAMAGE_OUTPUT");
    return env && *env ? fs::path(env) : fs::path("svdamage-out");
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw RuntimeFailure("cannot write " + p.string());
    return f;
}

void write_text(const fs::path& p, const std::string& s) {
    auto f = open_out(p);
    f << s;
}

// --- subcommands ---------------------------------------------------------

void cmd_ingest(Run& run, const fs::path& manifest) {
    auto loaded = load_catalog(manifest);
    // The catalog lands elsewhere, so relative URIs are anchored to the input.
    const auto base = fs::absolute(manifest).parent_path();
    ImageCatalog anchored;
    for (auto im : loaded.catalog.images()) {
        if (!im.uri.empty() && fs::path(im.uri).is_relative() && im.uri.find("://") == std::string::npos)
            im.uri = (base / im.uri).lexically_normal().string();
        anchored.add(std::move(im));
    }
    fs::create_directories(run.out);
    {
        auto f = open_out(run.out / "catalog.csv");
        write_manifest(f, anchored);
    }
    std::ostringstream rep;
    rep << "images " << loaded.catalog.size() << " pre " << loaded.catalog.count(Phase::pre) << " post "
        << loaded.catalog.count(Phase::post) << " rejected " << loaded.diagnostics.size() << '\n';
    for (const auto& d : loaded.diagnostics) rep << d << '\n';
    write_text(run.out / "ingest_report.txt", rep.str());
    std::cout << rep.str().substr(0, rep.str().find('\n') + 1);
    run.output("catalog", run.out / "catalog.csv");
    run.output("report", run.out / "ingest_report.txt");
}

void cmd_pair(Run& run, const fs::path& catalog, double max_distance) {
    auto loaded = load_catalog(catalog);
    auto r = pair_images(loaded.catalog, max_distance);
    for (const auto& d : loaded.diagnostics) r.rejected.push_back(d);
    fs::create_directories(run.out);
    {
        auto f = open_out(run.out / "pairs.jsonl");
        write_pairs_jsonl(f, r.pairs);
    }
    std::ostringstream rep;
    write_discard_report(rep, r, max_distance);
    write_text(run.out / "discards.txt", rep.str());
    std::cout << "pairs " << r.pairs.size() << " discarded " << r.discarded.size() << '\n';
    run.output("pairs", run.out / "pairs.jsonl");
    run.output("discards", run.out / "discards.txt");
}

void cmd_split(Run& run, const fs::path& labels, const std::string& ratio, std::uint64_t seed) {
    run.seed = seed;
    auto s = split_dataset(read_labels_csv(labels), parse_ratio(ratio), seed);
    fs::create_directories(run.out);
    write_text(run.out / "split.json", to_json(s).dump(2) + "\n");
    for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "train " << s.train_ids.size() << " val " << s.val_ids.size() << '\n';
    run.output("split", run.out / "split.json");
}

// Scene spec file: the synthetic.* keys without their prefix.
SyntheticSceneSpec read_scene_spec(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read scene spec " + path.string());
    std::string text = "experiment = exp1\n", line;
    while (std::getline(in, line)) {
        auto t = detail::trim(line.substr(0, line.find('#')));
        if (t.empty()) continue;
        for (const char* k : {"count", "seed"})
            if (t.rfind(k, 0) == 0 && detail::trim(t.substr(std::string(k).size())).rfind('=', 0) == 0)
                throw ValidationError(path.string() + ": '" + k + "' belongs on the command line");
        text += "synthetic." + t + "\n";
    }
    return parse_config_text(text, path.string()).scene;
}

void cmd_synth(Run& run, std::size_t count, const std::string& spec_path, std::uint64_t seed) {
    run.seed = seed;
    require(count > 0, "--count must be positive");
    auto spec = spec_path.empty() ? SyntheticSceneSpec{} : read_scene_spec(spec_path);
    auto e = export_synthetic_dataset(run.out, count, spec, seed);
    std::cout << "pairs " << e.count << '\n';
    run.output("manifest", e.manifest);
    run.output("labels", e.labels);
    run.output("images", e.directory / "images");
    run.output("masks", e.directory / "masks");
}

void cmd_train(Run& run, const fs::path& config) {
    auto cfg = load_config(config);
    run.config_hash = config_hash(cfg);
    run.seed = cfg.seed;
    if (run.out.empty()) run.out = cfg.output_dir.empty() ? output_root() / "train" / config.stem() : fs::path(cfg.output_dir);
    std::cout << "model " << cfg.model_name() << " config " << run.config_hash << '\n';
    auto data = load_dataset(cfg);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << "train samples " << data.train.size() << " val samples " << data.val.size() << '\n';
    auto res = run_experiment(cfg, run.out, data, [&](const EpochRecord& e) {
        std::cout << "epoch " << e.epoch + 1 << "/" << cfg.epochs << " loss " << format_score(e.train_loss)
                  << " val_acc " << format_percent(e.val.accuracy) << std::endl;
    });
    for (const auto& w : res.training.warnings) std::cerr << "warning: " << w << '\n';
    std::cout << format_row(res.report.model, res.report, true) << '\n';
    run.output("checkpoint", res.checkpoint_dir);
    run.output("log", res.log_path);
    run.output("report", res.report_path);
}

void cmd_eval(Run& run, const fs::path& checkpoint, const std::string& split) {
    auto ck = load_checkpoint(checkpoint);
    run.config_hash = ck.record.config_hash;
    run.seed = ck.config.seed;
    auto rep = evaluate_checkpoint(ck, split);
    fs::create_directories(run.out);
    nlohmann::json j = to_json(rep);
    j["split"] = split;
    j["checkpoint"] = checkpoint.string();
    write_text(run.out / "eval.json", j.dump(2) + "\n");
    {
        auto f = open_out(run.out / "report.jsonl");
        f << to_json(rep).dump() << '\n';
    }
    std::cout << render_table({rep});
    run.output("metrics", run.out / "eval.json");
    run.output("report", run.out / "report.jsonl");
}

int parse_class(const std::string& s, std::size_t classes) {
    const int k = static_cast<int>(parse_label(s));
    if (static_cast<std::size_t>(k) >= classes)
        throw ValidationError("class '" + s + "' is outside this model's " + std::to_string(classes) + " classes");
    return k;
}

void cmd_gradcam(Run& run, const fs::path& checkpoint, const std::string& pair_id, const std::string& cls,
                 HeatmapConfig hc) {
    auto ck = load_checkpoint(checkpoint);
    run.config_hash = ck.record.config_hash;
    run.seed = ck.config.seed;
    if (cls != "predicted") hc.target_class = parse_class(cls, ck.config.num_classes());
    hc.validate();
    auto found = find_pair(ck.config, pair_id);
    const auto& p = found.record;
    const bool dual = ck.config.dual();
    auto m = grad_cam(*ck.model, dual ? &p.pre : nullptr, p.post, ck.config.transform, hc);
    auto e = export_cam(run.out, pair_id, ck.config.model_name(), m, p.pre, p.post, hc);
    std::cout << "layer " << m.layer << " class " << class_name(m.target_class) << " predicted "
              << class_name(m.predicted_class) << " grid " << m.height << "x" << m.width << '\n';
    run.output("heatmap", e.triptych);
    run.output("grid", e.grid);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!detail::trim(item).empty()) out.push_back(detail::trim(item));
    return out;
}

struct ServeArgs {
    int port = 8080;
    std::string host = "127.0.0.1";
    fs::path label_log, pairs, manifest, static_dir;
    std::string annotators = "ann1,ann2,ann3,ann4", adjudicators = "adj1";
};

void cmd_serve(Run& run, const ServeArgs& a) {
    std::optional<ImageCatalog> catalog;
    if (!a.manifest.empty()) catalog = load_catalog(a.manifest).catalog;
    auto infos = pair_infos(read_pairs_jsonl(a.pairs), catalog ? &*catalog : nullptr);
    // Catalog URIs are relative to the manifest.
    if (!a.manifest.empty())
        for (auto& i : infos)
            for (auto* u : {&i.pre_uri, &i.post_uri})
                if (!u->empty() && fs::path(*u).is_relative()) *u = (a.manifest.parent_path() / *u).string();
    const auto log = a.label_log.empty() ? run.out / "labels.jsonl" : a.label_log;
    if (log.has_parent_path()) fs::create_directories(log.parent_path());
    AnnotationStore store(std::move(infos), split_list(a.annotators), split_list(a.adjudicators), log);
    // Server threads inherit the blocked mask; the main thread waits for the signal.
    sigset_t stop_on;
    sigemptyset(&stop_on);
    sigaddset(&stop_on, SIGINT);
    sigaddset(&stop_on, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_on, nullptr);
    AnnotationServer server(store, {a.host, a.port, a.static_dir});
    const int port = server.start();
    run.output("label_log", log);
    std::cout << "serving " << store.stats().pairs << " pairs on http://" << a.host << ':' << port << std::endl;
    int sig = 0;
    sigwait(&stop_on, &sig);
    server.stop();
    std::cout << "stopped" << std::endl;
}

void cmd_report(Run& run, const std::vector<std::string>& inputs) {
    std::vector<MetricsReport> reports;
    auto read = [&](const fs::path& p) {
        std::ifstream in(p);
        if (!in) throw ValidationError("cannot read " + p.string());
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) {
                try {
                    reports.push_back(report_from_json(nlohmann::json::parse(line)));
                } catch (const nlohmann::json::exception& e) {
                    throw ValidationError(p.string() + ": " + e.what());
                }
            }
    };
    for (const auto& in : inputs) {
        if (fs::is_directory(in)) {
            std::vector<fs::path> found;
            for (const auto& e : fs::recursive_directory_iterator(in))
                if (e.path().filename() == "report.jsonl") found.push_back(e.path());
            std::sort(found.begin(), found.end());
            for (const auto& p : found) read(p);
        } else {
            read(in);
        }
    }
    if (reports.empty()) throw ValidationError("no metrics reports found");
    const auto table = render_table(reports);
    fs::create_directories(run.out);
    write_text(run.out / "report.txt", table);
    std::cout << table;
    run.output("table", run.out / "report.txt");
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Street-view disaster damage classification pipeline"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string out;
    app.add_option("--out", out, "Output directory (default: $SVDAMAGE_OUTPUT/<subcommand>)");

    fs::path manifest, catalog, labels, config, checkpoint;
    double max_distance = kDefaultMaxPairDistanceM;
    std::string ratio = "8:2", split = "val", spec, pair_id, cls = "predicted", layer = "final", branch = "post";
    std::uint64_t seed = 42;
    std::size_t count = 2000;
    HeatmapConfig hc;
    ServeArgs serve;
    std::vector<std::string> inputs;

    auto* ingest = app.add_subcommand("ingest", "Validate an image manifest into a catalog");
    ingest->add_option("--manifest", manifest, "Manifest CSV")->required()->check(CLI::ExistingFile);

    auto* pair = app.add_subcommand("pair", "Match post images to their nearest pre image");
    pair->add_option("--catalog,--manifest", catalog, "Catalog CSV")->required()->check(CLI::ExistingFile);
    pair->add_option("--max-distance", max_distance, "Pairing threshold in meters")->capture_default_str();

    auto* split_cmd = app.add_subcommand("split", "Stratified train/validation split");
    split_cmd->add_option("--labels", labels, "pair_id,label CSV")->required()->check(CLI::ExistingFile);
    split_cmd->add_option("--ratio", ratio, "train:val")->capture_default_str();
    split_cmd->add_option("--seed", seed)->capture_default_str();

    auto* synth = app.add_subcommand("synth", "Export a synthetic labeled dataset");
    synth->add_option("--count", count)->capture_default_str();
    synth->add_option("--spec", spec, "Scene parameter file")->check(CLI::ExistingFile);
    synth->add_option("--seed", seed)->capture_default_str();

    auto* train = app.add_subcommand("train", "Train one experiment");
    train->add_option("--config", config, "Experiment config")->required()->check(CLI::ExistingFile);

    auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    eval->add_option("--split", split, "val | train")->capture_default_str();

    auto* cam = app.add_subcommand("gradcam", "Grad-CAM heatmap for one pair");
    cam->add_option("--checkpoint", checkpoint)->required()->check(CLI::ExistingDirectory);
    cam->add_option("--pair-id", pair_id)->required();
    cam->add_option("--class", cls, "mild | moderate | severe | no_damage | predicted")->capture_default_str();
    cam->add_option("--layer", layer, "final | fused | stages.N | layers.N")->capture_default_str();
    cam->add_option("--branch", branch, "pre | post")->capture_default_str();
    cam->add_option("--alpha", hc.alpha)->capture_default_str();
    cam->add_option("--colormap", hc.colormap, "jet | hot | gray")->capture_default_str();

    auto* ann = app.add_subcommand("annotate-serve", "Serve the annotation API");
    ann->add_option("--port", serve.port)->capture_default_str();
    ann->add_option("--host", serve.host)->capture_default_str();
    ann->add_option("--label-log", serve.label_log, "Append-only JSONL label log");
    ann->add_option("--pairs", serve.pairs, "pairs.jsonl")->required()->check(CLI::ExistingFile);
    ann->add_option("--manifest", serve.manifest, "Catalog CSV for image URIs")->check(CLI::ExistingFile);
    ann->add_option("--annotators", serve.annotators, "Comma-separated ids")->capture_default_str();
    ann->add_option("--adjudicators", serve.adjudicators, "Comma-separated ids")->capture_default_str();
    ann->add_option("--static", serve.static_dir, "UI bundle directory")->check(CLI::ExistingDirectory);

    auto* report = app.add_subcommand("report", "Render a metrics table");
    report->add_option("inputs", inputs, "report.jsonl files or run directories")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        if (code != 0) std::cerr << app.help();
        return code == 0 ? 0 : 1;
    }

    Run run;
    run.started_at = utc_now_iso8601();
    for (int i = 0; i < argc; ++i) run.command_line += (i ? " " : "") + std::string(argv[i]);
    auto* sub = app.get_subcommands().front();
    run.subcommand = sub->get_name();
    if (!out.empty()) run.out = out;
    else if (sub != train) run.out = output_root() / run.subcommand;

    int code = 0;
    std::string error;
    try {
        if (sub == ingest) cmd_ingest(run, manifest);
        else if (sub == pair) cmd_pair(run, catalog, max_distance);
        else if (sub == split_cmd) cmd_split(run, labels, ratio, seed);
        else if (sub == synth) cmd_synth(run, count, spec, seed);
        else if (sub == train) cmd_train(run, config);
        else if (sub == eval) cmd_eval(run, checkpoint, split);
        else if (sub == cam) {
            hc.target_layer = layer;
            hc.branch = parse_branch(branch);
            cmd_gradcam(run, checkpoint, pair_id, cls, hc);
        } else if (sub == ann) cmd_serve(run, serve);
        else if (sub == report) cmd_report(run, inputs);
    } catch (const ValidationError& e) {
        error = e.what();
        code = 1;
    } catch (const std::exception& e) {
        error = e.what();
        code = 2;
    }
    if (code) std::cerr << "error: " << error << '\n';
    run.finish(code, error);
    return code;
}

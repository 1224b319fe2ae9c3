#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>

#include <httplib.h>
#undef _res // from <resolv.h>; collides with Eigen parameter names
#include <json.hpp>

#include "svdamage/annotation/store.hpp"

namespace svdamage {

struct ServerOptions {
    std::string host = "127.0.0.1";
    int port = 8080; // 0: pick a free port
    std::filesystem::path static_dir; // annotation UI bundle, optional
};

// JSON API over an AnnotationStore:
//   GET  /api/pairs/next?annotator=<id>   GET  /api/pairs/<pair_id>
//   POST /api/labels                      GET  /api/conflicts
//   POST /api/adjudications               GET  /api/stats
//   GET  /api/export                      GET  /api/images/<image_id>
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, ServerOptions opts) : store_(store), opts_(std::move(opts)) { routes(); }
    ~AnnotationServer() { stop(); }

    // Binds and serves on a background thread; returns the bound port.
    int start() {
        port_ = opts_.port == 0 ? http_.bind_to_any_port(opts_.host) : (http_.bind_to_port(opts_.host, opts_.port) ? opts_.port : -1);
        if (port_ < 0) throw RuntimeFailure("cannot bind " + opts_.host + ":" + std::to_string(opts_.port));
        thread_ = std::thread([this] { http_.listen_after_bind(); });
        http_.wait_until_ready();
        return port_;
    }

    // Serves on the calling thread until stop() is called elsewhere.
    void run() {
        if (!http_.listen(opts_.host, opts_.port)) throw RuntimeFailure("cannot listen on " + opts_.host + ":" + std::to_string(opts_.port));
    }

    void stop() {
        http_.stop();
        if (thread_.joinable()) thread_.join();
    }

    int port() const { return port_; }

private:
    static void send(httplib::Response& res, int status, const nlohmann::json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static nlohmann::json error_body(const std::string& msg) { return {{"error", msg}}; }

    template <typename F>
    auto guarded(F f) {
        return [f](const httplib::Request& req, httplib::Response& res) {
            try {
                f(req, res);
            } catch (const NotFound& e) {
                send(res, 404, error_body(e.what()));
            } catch (const ValidationError& e) {
                send(res, 400, error_body(e.what()));
            } catch (const nlohmann::json::exception& e) {
                send(res, 400, error_body(std::string("bad JSON body: ") + e.what()));
            } catch (const std::exception& e) {
                send(res, 500, error_body(e.what()));
            }
        };
    }

    nlohmann::json pair_json(const PairInfo& p) const {
        return {{"pair_id", p.pair_id},
                {"pre_id", p.pre_id},
                {"post_id", p.post_id},
                {"pre_uri", p.pre_uri},
                {"post_uri", p.post_uri},
                {"pre_url", "/api/images/" + p.pre_id},
                {"post_url", "/api/images/" + p.post_id},
                {"pairing_distance_m", p.distance},
                {"labels", store_.labels_for(p.pair_id).size()}};
    }

    void routes() {
        http_.Get("/api/pairs/next", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string who = req.get_param_value("annotator");
            if (who.empty()) throw ValidationError("missing annotator parameter");
            auto p = store_.next_pair(who);
            if (!p) return send(res, 200, {{"status", "queue_empty"}, {"annotator", who}});
            send(res, 200, {{"status", "assigned"}, {"pair", pair_json(*p)}});
        }));

        http_.Get(R"(/api/pairs/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            auto p = store_.pair(id);
            if (!p) throw NotFound("unknown pair '" + id + "'");
            send(res, 200, pair_json(*p));
        }));

        http_.Post("/api/labels", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto j = nlohmann::json::parse(req.body);
            AnnotationRecord r{j.at("pair_id").get<std::string>(), j.at("annotator_id").get<std::string>(),
                               parse_damage_class(j.at("label").get<std::string>()), j.value("submitted_at", "")};
            const auto out = store_.submit(r);
            send(res, out.accepted ? 201 : 409, {{"accepted", out.accepted}, {"record", to_json(out.record)}});
        }));

        http_.Get("/api/conflicts", guarded([this](const httplib::Request&, httplib::Response& res) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& c : store_.conflicts()) {
                auto j = to_json(c);
                j["annotators"] = store_.labels_for(c.pair_id);
                arr.push_back(std::move(j));
            }
            send(res, 200, {{"conflicts", arr}});
        }));

        http_.Post("/api/adjudications", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto j = nlohmann::json::parse(req.body);
            AdjudicationRecord r{j.at("pair_id").get<std::string>(), j.at("adjudicator_id").get<std::string>(),
                                 parse_damage_class(j.at("label").get<std::string>()), j.value("submitted_at", "")};
            const auto rec = store_.adjudicate(r);
            send(res, 201, {{"record", to_json(rec)}, {"consensus", to_json(store_.consensus(r.pair_id))}});
        }));

        http_.Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
            send(res, 200, to_json(store_.stats()));
        }));

        http_.Get("/api/export", guarded([this](const httplib::Request&, httplib::Response& res) {
            std::ostringstream os;
            const auto s = store_.export_labels(os);
            res.set_header("X-Exported", std::to_string(s.exported));
            res.set_header("X-Conflicts", std::to_string(s.conflicts));
            res.set_content(os.str(), "text/csv");
        }));

        http_.Get(R"(/api/images/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.matches[1];
            const std::string uri = store_.image_uri(id);
            if (uri.empty()) throw NotFound("unknown image '" + id + "'");
            std::ifstream f(uri, std::ios::binary);
            if (!f) throw NotFound("image file missing: " + uri);
            std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
            const bool png = bytes.size() > 4 && bytes.compare(1, 3, "PNG") == 0;
            res.set_content(bytes, png ? "image/png" : "image/jpeg");
        }));

        if (!opts_.static_dir.empty() && std::filesystem::is_directory(opts_.static_dir))
            http_.set_mount_point("/", opts_.static_dir.string());
    }

    AnnotationStore& store_;
    ServerOptions opts_;
    httplib::Server http_;
    std::thread thread_;
    int port_ = -1;
};

} // namespace svdamage

#include "icopro/serve/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "icopro/errors.hpp"

namespace icopro::serve {
namespace {

nlohmann::json vehicle_json(const env::VehicleView& v) {
    return {{"lane", v.lane}, {"x", v.x}, {"speed", v.speed}};
}

void reply(httplib::Response& res, int status, const nlohmann::json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json; charset=utf-8");
}

void reply_error(httplib::Response& res, int status, const std::string& reason) {
    reply(res, status, {{"error", reason}});
}

int status_of(const labelers::SubmitResult& r) {
    switch (r.status) {
    case labelers::SubmitStatus::Ok: return 200;
    case labelers::SubmitStatus::NotFound: return 404;
    case labelers::SubmitStatus::Conflict: return 409;
    case labelers::SubmitStatus::Invalid: return 422;
    }
    return 500;
}

} // namespace

nlohmann::json query_to_json(const labelers::Query& q, const std::vector<std::string>& action_names) {
    nlohmann::json frames = nlohmann::json::array();
    for (std::size_t t = 0; t < q.length(); ++t) {
        nlohmann::json f{{"executed_action", q.executed[t]}};
        if (t < q.frames.size()) {
            const auto& w = q.frames[t];
            nlohmann::json vehicles = nlohmann::json::array();
            for (const auto& v : w.vehicles) vehicles.push_back(vehicle_json(v));
            f["lanes"] = w.lanes;
            f["ego"] = vehicle_json(w.ego);
            f["vehicles"] = std::move(vehicles);
        }
        frames.push_back(std::move(f));
    }
    return {{"segment_id", q.segment_id}, {"frames", std::move(frames)}, {"action_names", action_names}};
}

nlohmann::json session_to_json(const labelers::SessionSnapshot& s, int total_iterations) {
    return {{"session_id", s.session_id},
            {"status", s.status},
            {"pending", s.pending},
            {"resolved_total", s.resolved_total},
            {"labels_total", s.labels_total},
            {"iteration", s.iteration},
            {"total_iterations", total_iterations}};
}

LabelService::LabelService(std::shared_ptr<labelers::LabelSession> session, int total_iterations,
                           std::filesystem::path static_dir)
    : session_(std::move(session)), total_iterations_(total_iterations), server_(std::make_unique<httplib::Server>()) {
    auto& srv = *server_;
    if (!static_dir.empty() && !srv.set_mount_point("/", static_dir.string())) {
        throw ConfigError("static directory does not exist: " + static_dir.string());
    }

    srv.Get("/api/session", [this](const httplib::Request&, httplib::Response& res) {
        reply(res, 200, session_to_json(session_->snapshot(), total_iterations_));
    });

    srv.Get("/api/query/next", [this](const httplib::Request&, httplib::Response& res) {
        auto q = session_->next_pending();
        if (!q) {
            res.status = 204;
            return;
        }
        reply(res, 200, query_to_json(*q, session_->action_names()));
    });

    srv.Post(R"(/api/query/(\d+)/label)", [this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t id = 0;
        try {
            id = std::stoull(req.matches[1].str());
        } catch (const std::exception&) {
            return reply_error(res, 404, "unknown segment");
        }
        nlohmann::json body;
        try {
            body = nlohmann::json::parse(req.body);
        } catch (const nlohmann::json::parse_error&) {
            return reply_error(res, 400, "body must be JSON");
        }
        if (!body.is_object() || !body.contains("t") || !body.contains("action")) {
            return reply_error(res, 422, "body needs t and action");
        }
        if (!body["t"].is_number_integer()) return reply_error(res, 422, "t must be an integer");
        int action = -1;
        const auto& names = session_->action_names();
        if (body["action"].is_number_integer()) {
            action = body["action"].get<int>();
        } else if (body["action"].is_string()) {
            const auto it = std::find(names.begin(), names.end(), body["action"].get<std::string>());
            if (it == names.end()) return reply_error(res, 422, "unknown action " + body["action"].dump());
            action = static_cast<int>(it - names.begin());
        } else {
            return reply_error(res, 422, "action must be an index or a name");
        }
        const auto r = session_->submit_label(id, body["t"].get<int>(), action);
        if (r.status == labelers::SubmitStatus::Ok) return reply(res, 200, {{"ok", true}});
        reply_error(res, status_of(r), r.reason);
    });

    srv.Post(R"(/api/query/(\d+)/pass)", [this](const httplib::Request& req, httplib::Response& res) {
        std::uint64_t id = 0;
        try {
            id = std::stoull(req.matches[1].str());
        } catch (const std::exception&) {
            return reply_error(res, 404, "unknown segment");
        }
        const auto r = session_->submit_pass(id);
        if (r.status == labelers::SubmitStatus::Ok) return reply(res, 200, {{"ok", true}});
        reply_error(res, status_of(r), r.reason);
    });
}

LabelService::~LabelService() {
    stop();
}

int LabelService::start(const std::string& host, int port) {
    if (thread_.joinable()) throw UsageError("label service already started");
    int bound = port;
    if (port == 0) {
        bound = server_->bind_to_any_port(host);
        if (bound < 0) throw UsageError("cannot bind label service on " + host);
    } else if (!server_->bind_to_port(host, port)) {
        throw UsageError("cannot bind label service on " + host + ":" + std::to_string(port));
    }
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    spdlog::info("label service listening on http://{}:{}", host, bound);
    return bound;
}

void LabelService::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

} // namespace icopro::serve

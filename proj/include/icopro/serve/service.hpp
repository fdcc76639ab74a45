#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "icopro/labelers/labelers.hpp"

namespace httplib {
class Server;
}

namespace icopro::serve {

/// Wire form of a pending query: structured frames for the console to render.
nlohmann::json query_to_json(const labelers::Query& q, const std::vector<std::string>& action_names);
nlohmann::json session_to_json(const labelers::SessionSnapshot& s, int total_iterations);

/// HTTP front of a LabelSession.
///   GET  /api/session
///   GET  /api/query/next            204 when nothing is pending
///   POST /api/query/{id}/label      {"t": int, "action": int | name}
///   POST /api/query/{id}/pass
class LabelService {
public:
    LabelService(std::shared_ptr<labelers::LabelSession> session, int total_iterations,
                 std::filesystem::path static_dir = {});
    ~LabelService();
    LabelService(const LabelService&) = delete;
    LabelService& operator=(const LabelService&) = delete;

    /// Binds and starts serving on a background thread. Port 0 picks a free port.
    /// Returns the bound port; throws UsageError if binding fails.
    int start(const std::string& host, int port);
    void stop();

private:
    std::shared_ptr<labelers::LabelSession> session_;
    int total_iterations_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

} // namespace icopro::serve

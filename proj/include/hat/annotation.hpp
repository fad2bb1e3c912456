#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "hat/io.hpp"
#include "hat/loop.hpp"

namespace httplib {
class Server;
}

namespace hat {

struct AnnotationItem {
    std::string item_id;
    std::string source_text;
    std::string lf_display;
    std::optional<std::string> translation;
    std::optional<std::string> translator;
    std::string updated_at;  // ISO-8601 UTC with milliseconds
};

enum class SessionStatus { open, complete };

std::string_view to_string(SessionStatus status);

struct AnnotationSession {
    std::string session_id;
    std::string run;
    std::size_t round = 0;
    SessionStatus status = SessionStatus::open;
    std::string created_at;
    std::vector<AnnotationItem> items;

    std::vector<std::string> missing_items() const;
};

json session_to_json(const AnnotationSession& session);
AnnotationSession session_from_json(const json& j);

/// Session id for a (run, round) pair.
std::string session_id_for(const std::string& run, std::size_t round);

/// Sessions persisted as one append-only event log per session under
/// `log_dir`. Completion writes `ht_dir`/round_q.jsonl.
class AnnotationStore {
public:
    AnnotationStore(std::filesystem::path log_dir, std::filesystem::path ht_dir);
    ~AnnotationStore();

    AnnotationStore(const AnnotationStore&) = delete;
    AnnotationStore& operator=(const AnnotationStore&) = delete;

    struct Created {
        AnnotationSession session;
        bool created = false;  // false when an identical session already existed
    };

    /// Items carry item_id, source_text and lf_display only.
    Created create_session(const std::string& run, std::size_t round, const std::vector<AnnotationItem>& items);
    std::vector<AnnotationSession> list_sessions() const;
    AnnotationSession get_session(const std::string& session_id) const;
    AnnotationItem submit_translation(const std::string& session_id, const std::string& item_id,
                                      const std::string& translation, const std::string& translator);
    /// Returns the path of the written HT file.
    std::filesystem::path complete_session(const std::string& session_id);

    const std::filesystem::path& ht_dir() const { return ht_dir_; }

private:
    struct Entry;

    Entry& entry(const std::string& session_id) const;
    void replay(const std::filesystem::path& log);
    std::string next_timestamp();

    std::filesystem::path log_dir_;
    std::filesystem::path ht_dir_;
    mutable std::mutex registry_mutex_;
    std::map<std::string, std::unique_ptr<Entry>> sessions_;
    std::mutex clock_mutex_;
    std::int64_t last_millis_ = 0;
};

/// HTTP front end of an AnnotationStore. Every request needs
/// `Authorization: Bearer <token>`.
class AnnotationServer {
public:
    AnnotationServer(AnnotationStore& store, std::string token);
    ~AnnotationServer();

    /// Binds and serves until stop(); port 0 picks a free port.
    void listen(const std::string& host, int port);
    /// Binds to a free port and returns it; call serve() afterwards.
    int bind_any(const std::string& host);
    void serve();
    void wait_until_ready() const;
    void stop();

private:
    void install_routes();

    AnnotationStore& store_;
    std::string token_;
    std::unique_ptr<httplib::Server> server_;
};

/// Thin HTTP client for the annotation API.
class AnnotationClient {
public:
    AnnotationClient(std::string host, int port, std::string token);

    struct Response {
        int status = 0;
        json body;
    };

    Response create_session(const std::string& run, std::size_t round, const std::vector<AnnotationItem>& items) const;
    Response list_sessions() const;
    Response get_session(const std::string& session_id) const;
    Response submit(const std::string& session_id, const std::string& item_id, const std::string& translation,
                    const std::string& translator) const;
    Response complete(const std::string& session_id) const;

private:
    Response send(const std::string& method, const std::string& path, const json* body) const;

    std::string host_;
    int port_;
    std::string token_;
};

/// Posts each round's selection as a session and waits for its completion.
/// Throws suspended error when the session is still open after `timeout`.
class ServiceTranslator final : public Translator {
public:
    ServiceTranslator(AnnotationClient client, std::string run, std::chrono::milliseconds timeout,
                      std::chrono::milliseconds poll_interval = std::chrono::milliseconds(2000));

    std::vector<Example> translate(std::size_t round, std::span<const Example> selected, Rng& rng) override;

private:
    AnnotationClient client_;
    std::string run_;
    std::chrono::milliseconds timeout_;
    std::chrono::milliseconds poll_interval_;
};

}  // namespace hat

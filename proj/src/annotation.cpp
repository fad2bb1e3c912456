#include "hat/annotation.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <regex>
#include <set>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "httplib.h"

#include "hat/error.hpp"
#include "hat/textmodel.hpp"

namespace hat {

namespace fs = std::filesystem;

namespace {

std::string iso_millis(std::int64_t millis) {
    std::time_t secs = static_cast<std::time_t>(millis / 1000);
    std::tm tm{};
    gmtime_r(&secs, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    return fmt::format("{}.{:03d}Z", buf, static_cast<int>(millis % 1000));
}

std::string required_string(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) throw Error(ErrorCode::validation, fmt::format("'{}' must be a string", key));
    return it->get<std::string>();
}

json optional_string(const std::optional<std::string>& s) { return s ? json(*s) : json(nullptr); }

std::optional<std::string> read_optional(const json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

bool same_items(const std::vector<AnnotationItem>& a, const std::vector<AnnotationItem>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i].item_id != b[i].item_id || a[i].source_text != b[i].source_text || a[i].lf_display != b[i].lf_display)
            return false;
    return true;
}

// Appends one line and syncs it to disk before returning.
void append_durable(const fs::path& path, const std::string& line) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND, 0644);
    if (fd < 0) throw Error(ErrorCode::io, "cannot open '" + path.string() + "' for append");
    std::string data = line + "\n";
    const char* p = data.data();
    std::size_t left = data.size();
    while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            ::close(fd);
            throw Error(ErrorCode::io, "write to '" + path.string() + "' failed");
        }
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    ::fsync(fd);
    ::close(fd);
}

int status_for(ErrorCode code) {
    switch (code) {
        case ErrorCode::validation:
        case ErrorCode::invalid_argument: return 400;
        case ErrorCode::not_found: return 404;
        case ErrorCode::conflict:
        case ErrorCode::state:
        case ErrorCode::completeness: return 409;
        default: return 500;
    }
}

}  // namespace

std::string_view to_string(SessionStatus status) { return status == SessionStatus::open ? "open" : "complete"; }

std::vector<std::string> AnnotationSession::missing_items() const {
    std::vector<std::string> out;
    for (const auto& item : items)
        if (!item.translation || normalize_whitespace(*item.translation).empty()) out.push_back(item.item_id);
    return out;
}

json session_to_json(const AnnotationSession& s) {
    json items = json::array();
    std::size_t translated = 0;
    for (const auto& item : s.items) {
        if (item.translation && !normalize_whitespace(*item.translation).empty()) ++translated;
        items.push_back({{"item_id", item.item_id},
                         {"source_text", item.source_text},
                         {"lf_display", item.lf_display},
                         {"translation", optional_string(item.translation)},
                         {"translator", optional_string(item.translator)},
                         {"updated_at", item.updated_at}});
    }
    return json{{"session_id", s.session_id}, {"run", s.run},          {"round", s.round},
                {"status", to_string(s.status)}, {"created_at", s.created_at}, {"translated", translated},
                {"total", s.items.size()},     {"items", items}};
}

AnnotationSession session_from_json(const json& j) {
    AnnotationSession s;
    s.session_id = j.at("session_id").get<std::string>();
    s.run = j.at("run").get<std::string>();
    s.round = j.at("round").get<std::size_t>();
    s.status = j.at("status").get<std::string>() == "complete" ? SessionStatus::complete : SessionStatus::open;
    s.created_at = j.value("created_at", "");
    for (const auto& i : j.at("items")) {
        AnnotationItem item;
        item.item_id = i.at("item_id").get<std::string>();
        item.source_text = i.at("source_text").get<std::string>();
        item.lf_display = i.at("lf_display").get<std::string>();
        item.translation = read_optional(i, "translation");
        item.translator = read_optional(i, "translator");
        item.updated_at = i.value("updated_at", "");
        s.items.push_back(std::move(item));
    }
    return s;
}

std::string session_id_for(const std::string& run, std::size_t round) {
    return fmt::format("{:016x}", fnv1a64(run + '\x1f' + std::to_string(round)));
}

struct AnnotationStore::Entry {
    std::mutex mutex;
    AnnotationSession session;
    fs::path log;
};

AnnotationStore::AnnotationStore(fs::path log_dir, fs::path ht_dir)
    : log_dir_(std::move(log_dir)), ht_dir_(std::move(ht_dir)) {
    fs::create_directories(log_dir_);
    std::vector<fs::path> logs;
    for (const auto& e : fs::directory_iterator(log_dir_))
        if (e.path().extension() == ".jsonl") logs.push_back(e.path());
    std::sort(logs.begin(), logs.end());
    for (const auto& log : logs) replay(log);
    if (!sessions_.empty()) spdlog::info("recovered {} annotation sessions from {}", sessions_.size(), log_dir_.string());
}

AnnotationStore::~AnnotationStore() = default;

void AnnotationStore::replay(const fs::path& log) {
    std::ifstream in(log);
    std::string line;
    std::unique_ptr<Entry> entry;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (normalize_whitespace(line).empty()) continue;
        json event;
        try {
            event = json::parse(line);
        } catch (const json::exception&) {
            // A torn final line from an interrupted append carries no acknowledged write.
            if (in.peek() == std::char_traits<char>::eof()) {
                spdlog::warn("{}:{}: ignoring truncated event", log.string(), lineno);
                break;
            }
            throw Error(ErrorCode::integrity, fmt::format("{}:{}: malformed event", log.string(), lineno));
        }
        const std::string type = event.at("type").get<std::string>();
        if (type == "create") {
            entry = std::make_unique<Entry>();
            entry->session = session_from_json(event.at("session"));
            entry->log = log;
        } else if (!entry) {
            throw Error(ErrorCode::integrity, log.string() + ": event before create");
        } else if (type == "submit") {
            const auto id = event.at("item_id").get<std::string>();
            for (auto& item : entry->session.items) {
                if (item.item_id != id) continue;
                item.translation = event.at("translation").get<std::string>();
                item.translator = event.at("translator").get<std::string>();
                item.updated_at = event.at("updated_at").get<std::string>();
            }
        } else if (type == "complete") {
            entry->session.status = SessionStatus::complete;
        } else {
            throw Error(ErrorCode::integrity, fmt::format("{}:{}: unknown event '{}'", log.string(), lineno, type));
        }
    }
    if (!entry) return;
    for (const auto& item : entry->session.items) {
        // Timestamps are issued strictly increasing; resume above the newest one seen.
        std::tm tm{};
        int ms = 0;
        if (std::sscanf(item.updated_at.c_str(), "%d-%d-%dT%d:%d:%d.%dZ", &tm.tm_year, &tm.tm_mon, &tm.tm_mday,
                        &tm.tm_hour, &tm.tm_min, &tm.tm_sec, &ms) == 7) {
            tm.tm_year -= 1900;
            tm.tm_mon -= 1;
            last_millis_ = std::max<std::int64_t>(last_millis_, static_cast<std::int64_t>(timegm(&tm)) * 1000 + ms);
        }
    }
    sessions_[entry->session.session_id] = std::move(entry);
}

std::string AnnotationStore::next_timestamp() {
    std::lock_guard lock(clock_mutex_);
    auto now = std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::system_clock::now().time_since_epoch())
                   .count();
    last_millis_ = std::max<std::int64_t>(now, last_millis_ + 1);
    return iso_millis(last_millis_);
}

AnnotationStore::Entry& AnnotationStore::entry(const std::string& session_id) const {
    std::lock_guard lock(registry_mutex_);
    auto it = sessions_.find(session_id);
    if (it == sessions_.end()) throw Error(ErrorCode::not_found, "no session '" + session_id + "'");
    return *it->second;
}

AnnotationStore::Created AnnotationStore::create_session(const std::string& run, std::size_t round,
                                                         const std::vector<AnnotationItem>& items) {
    if (run.empty()) throw Error(ErrorCode::validation, "run must not be empty");
    if (items.empty()) throw Error(ErrorCode::validation, "a session needs at least one item");
    std::set<std::string> ids;
    for (const auto& item : items) {
        if (item.item_id.empty()) throw Error(ErrorCode::validation, "item_id must not be empty");
        if (!ids.insert(item.item_id).second) throw Error(ErrorCode::validation, "duplicate item_id '" + item.item_id + "'");
    }
    const std::string id = session_id_for(run, round);

    std::lock_guard lock(registry_mutex_);
    if (auto it = sessions_.find(id); it != sessions_.end()) {
        std::lock_guard session_lock(it->second->mutex);
        if (!same_items(it->second->session.items, items))
            throw Error(ErrorCode::conflict,
                        fmt::format("run '{}' round {} already has a session with different items", run, round));
        return {it->second->session, false};
    }
    auto entry = std::make_unique<Entry>();
    AnnotationSession& s = entry->session;
    s.session_id = id;
    s.run = run;
    s.round = round;
    s.created_at = next_timestamp();
    for (const auto& item : items) {
        AnnotationItem copy;
        copy.item_id = item.item_id;
        copy.source_text = item.source_text;
        copy.lf_display = item.lf_display;
        copy.updated_at = s.created_at;
        s.items.push_back(std::move(copy));
    }
    entry->log = log_dir_ / (id + ".jsonl");
    append_durable(entry->log, json{{"type", "create"}, {"session", session_to_json(s)}}.dump());
    AnnotationSession out = s;
    sessions_[id] = std::move(entry);
    spdlog::info("session {} created for run '{}' round {} with {} items", id, run, round, items.size());
    return {out, true};
}

std::vector<AnnotationSession> AnnotationStore::list_sessions() const {
    std::vector<Entry*> entries;
    {
        std::lock_guard lock(registry_mutex_);
        for (const auto& [id, e] : sessions_) entries.push_back(e.get());
    }
    std::vector<AnnotationSession> out;
    for (Entry* e : entries) {
        std::lock_guard lock(e->mutex);
        out.push_back(e->session);
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        return std::tie(a.run, a.round) < std::tie(b.run, b.round);
    });
    return out;
}

AnnotationSession AnnotationStore::get_session(const std::string& session_id) const {
    Entry& e = entry(session_id);
    std::lock_guard lock(e.mutex);
    return e.session;
}

AnnotationItem AnnotationStore::submit_translation(const std::string& session_id, const std::string& item_id,
                                                   const std::string& translation, const std::string& translator) {
    Entry& e = entry(session_id);
    std::lock_guard lock(e.mutex);
    auto it = std::find_if(e.session.items.begin(), e.session.items.end(),
                           [&](const AnnotationItem& i) { return i.item_id == item_id; });
    if (it == e.session.items.end())
        throw Error(ErrorCode::not_found, "session '" + session_id + "' has no item '" + item_id + "'");
    if (e.session.status == SessionStatus::complete)
        throw Error(ErrorCode::state, "session '" + session_id + "' is complete");
    if (normalize_whitespace(translation).empty()) throw Error(ErrorCode::validation, "translation must not be empty");
    const std::string stamp = next_timestamp();
    append_durable(e.log, json{{"type", "submit"},
                               {"item_id", item_id},
                               {"translation", translation},
                               {"translator", translator},
                               {"updated_at", stamp}}
                              .dump());
    it->translation = translation;
    it->translator = translator;
    it->updated_at = stamp;
    return *it;
}

fs::path AnnotationStore::complete_session(const std::string& session_id) {
    Entry& e = entry(session_id);
    std::lock_guard lock(e.mutex);
    const fs::path path = ht_dir_ / fmt::format("round_{}.jsonl", e.session.round);
    if (e.session.status == SessionStatus::complete) return path;
    auto missing = e.session.missing_items();
    if (!missing.empty())
        throw Error(ErrorCode::completeness, fmt::format("untranslated items: {}", fmt::join(missing, ", ")));
    std::vector<Example> examples;
    for (const auto& item : e.session.items) {
        Example ex;
        ex.utterance = make_utterance(item.item_id, std::string(kTargetLanguage), *item.translation);
        ex.lf = LogicalForm(item.lf_display, -1);
        ex.origin = Origin::human_translated;
        examples.push_back(std::move(ex));
    }
    fs::create_directories(ht_dir_);
    write_jsonl(path, examples);
    append_durable(e.log, json{{"type", "complete"}, {"at", next_timestamp()}}.dump());
    e.session.status = SessionStatus::complete;
    spdlog::info("session {} complete, wrote {}", session_id, path.string());
    return path;
}

AnnotationServer::AnnotationServer(AnnotationStore& store, std::string token)
    : store_(store), token_(std::move(token)), server_(std::make_unique<httplib::Server>()) {
    if (token_.empty()) throw Error(ErrorCode::configuration, "the annotation service needs a bearer token");
    install_routes();
}

AnnotationServer::~AnnotationServer() { stop(); }

void AnnotationServer::install_routes() {
    auto& srv = *server_;
    auto reply = [](httplib::Response& res, int status, const json& body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    };
    auto fail = [reply](httplib::Response& res, int status, const std::string& error, const std::string& detail,
                        json extra = json::object()) {
        json body{{"error", error}, {"detail", detail}};
        body.update(extra);
        reply(res, status, body);
    };
    // Runs a handler, translating library errors into JSON error bodies.
    auto guarded = [this, fail](auto handler) {
        return [this, fail, handler](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                json extra = json::object();
                if (e.code() == ErrorCode::completeness) {
                    auto s = store_.get_session(req.path_params.at("id"));
                    extra["missing"] = s.missing_items();
                }
                fail(res, status_for(e.code()), std::string(to_string(e.code())), e.what(), extra);
            } catch (const json::exception& e) {
                fail(res, 400, "validation", std::string("malformed JSON body: ") + e.what());
            }
        };
    };

    srv.set_pre_routing_handler([this, fail](const httplib::Request& req, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Headers", "Authorization, Content-Type");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, PUT, OPTIONS");
        if (req.method == "OPTIONS") {
            res.status = 204;
            return httplib::Server::HandlerResponse::Handled;
        }
        if (req.get_header_value("Authorization") != "Bearer " + token_) {
            fail(res, 401, "unauthorized", "missing or wrong bearer token");
            return httplib::Server::HandlerResponse::Handled;
        }
        return httplib::Server::HandlerResponse::Unhandled;
    });

    srv.Post("/v1/sessions", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                 json body = json::parse(req.body);
                 if (!body.is_object()) throw Error(ErrorCode::validation, "body must be an object");
                 const std::string run = body.contains("run") ? required_string(body, "run") : "default";
                 if (!body.contains("round") || !body["round"].is_number_unsigned())
                     throw Error(ErrorCode::validation, "'round' must be a non-negative integer");
                 if (!body.contains("items") || !body["items"].is_array())
                     throw Error(ErrorCode::validation, "'items' must be an array");
                 std::vector<AnnotationItem> items;
                 for (const auto& i : body["items"]) {
                     if (!i.is_object()) throw Error(ErrorCode::validation, "each item must be an object");
                     AnnotationItem item;
                     item.item_id = required_string(i, "item_id");
                     item.source_text = required_string(i, "source_text");
                     item.lf_display = i.contains("lf_display") ? required_string(i, "lf_display") : "";
                     items.push_back(std::move(item));
                 }
                 auto created = store_.create_session(run, body["round"].get<std::size_t>(), items);
                 reply(res, created.created ? 201 : 200, session_to_json(created.session));
             }));
    srv.Get("/v1/sessions", guarded([this, reply](const httplib::Request&, httplib::Response& res) {
                json list = json::array();
                for (const auto& s : store_.list_sessions()) {
                    json j = session_to_json(s);
                    j.erase("items");
                    list.push_back(std::move(j));
                }
                reply(res, 200, json{{"sessions", list}});
            }));
    srv.Get("/v1/sessions/:id", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                reply(res, 200, session_to_json(store_.get_session(req.path_params.at("id"))));
            }));
    srv.Put("/v1/sessions/:id/items/:item_id",
            guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                json body = json::parse(req.body);
                if (!body.is_object()) throw Error(ErrorCode::validation, "body must be an object");
                const std::string translation = required_string(body, "translation");
                const std::string translator = body.contains("translator") ? required_string(body, "translator") : "";
                auto item = store_.submit_translation(req.path_params.at("id"), req.path_params.at("item_id"),
                                                      translation, translator);
                reply(res, 200,
                      json{{"item_id", item.item_id},
                           {"source_text", item.source_text},
                           {"lf_display", item.lf_display},
                           {"translation", optional_string(item.translation)},
                           {"translator", optional_string(item.translator)},
                           {"updated_at", item.updated_at}});
            }));
    srv.Post("/v1/sessions/:id/complete", guarded([this, reply](const httplib::Request& req, httplib::Response& res) {
                 auto path = store_.complete_session(req.path_params.at("id"));
                 json body = session_to_json(store_.get_session(req.path_params.at("id")));
                 body["ht_file"] = path.string();
                 reply(res, 200, body);
             }));
    srv.set_error_handler([fail](const httplib::Request& req, httplib::Response& res) {
        if (res.status == 404 && res.body.empty()) fail(res, 404, "not_found", "no route for " + req.method + " " + req.path);
    });
}

void AnnotationServer::listen(const std::string& host, int port) {
    spdlog::info("annotation service listening on {}:{}", host, port);
    if (!server_->listen(host, port)) throw Error(ErrorCode::io, fmt::format("cannot listen on {}:{}", host, port));
}

int AnnotationServer::bind_any(const std::string& host) {
    int port = server_->bind_to_any_port(host);
    if (port < 0) throw Error(ErrorCode::io, "cannot bind to " + host);
    return port;
}

void AnnotationServer::serve() { server_->listen_after_bind(); }

void AnnotationServer::wait_until_ready() const { server_->wait_until_ready(); }

void AnnotationServer::stop() {
    if (server_) server_->stop();
}

AnnotationClient::AnnotationClient(std::string host, int port, std::string token)
    : host_(std::move(host)), port_(port), token_(std::move(token)) {}

AnnotationClient::Response AnnotationClient::send(const std::string& method, const std::string& path,
                                                  const json* body) const {
    httplib::Client cli(host_, port_);
    cli.set_connection_timeout(5);
    httplib::Headers headers{{"Authorization", "Bearer " + token_}};
    httplib::Result r;
    const std::string payload = body ? body->dump() : std::string();
    if (method == "GET")
        r = cli.Get(path, headers);
    else if (method == "POST")
        r = cli.Post(path, headers, payload, "application/json");
    else if (method == "PUT")
        r = cli.Put(path, headers, payload, "application/json");
    else
        throw Error(ErrorCode::invalid_argument, "unsupported method " + method);
    if (!r) throw Error(ErrorCode::io, fmt::format("annotation service {}:{} unreachable ({})", host_, port_,
                                                   httplib::to_string(r.error())));
    Response out;
    out.status = r->status;
    out.body = r->body.empty() ? json(nullptr) : json::parse(r->body, nullptr, false);
    return out;
}

AnnotationClient::Response AnnotationClient::create_session(const std::string& run, std::size_t round,
                                                            const std::vector<AnnotationItem>& items) const {
    json list = json::array();
    for (const auto& i : items)
        list.push_back({{"item_id", i.item_id}, {"source_text", i.source_text}, {"lf_display", i.lf_display}});
    json body{{"run", run}, {"round", round}, {"items", list}};
    return send("POST", "/v1/sessions", &body);
}

AnnotationClient::Response AnnotationClient::list_sessions() const { return send("GET", "/v1/sessions", nullptr); }

AnnotationClient::Response AnnotationClient::get_session(const std::string& session_id) const {
    return send("GET", "/v1/sessions/" + session_id, nullptr);
}

AnnotationClient::Response AnnotationClient::submit(const std::string& session_id, const std::string& item_id,
                                                    const std::string& translation,
                                                    const std::string& translator) const {
    json body{{"translation", translation}, {"translator", translator}};
    return send("PUT", "/v1/sessions/" + session_id + "/items/" + item_id, &body);
}

AnnotationClient::Response AnnotationClient::complete(const std::string& session_id) const {
    return send("POST", "/v1/sessions/" + session_id + "/complete", nullptr);
}

ServiceTranslator::ServiceTranslator(AnnotationClient client, std::string run, std::chrono::milliseconds timeout,
                                     std::chrono::milliseconds poll_interval)
    : client_(std::move(client)), run_(std::move(run)), timeout_(timeout), poll_interval_(poll_interval) {}

std::vector<Example> ServiceTranslator::translate(std::size_t round, std::span<const Example> selected, Rng&) {
    std::vector<AnnotationItem> items;
    for (const auto& e : selected) {
        AnnotationItem item;
        item.item_id = e.utterance.id;
        item.source_text = e.utterance.raw;
        item.lf_display = e.lf.canonical;
        items.push_back(std::move(item));
    }
    auto created = client_.create_session(run_, round, items);
    if (created.status != 200 && created.status != 201)
        throw Error(created.status == 409 ? ErrorCode::conflict : ErrorCode::io,
                    "session creation failed: " + created.body.dump());
    const std::string id = created.body.at("session_id").get<std::string>();

    const auto deadline = std::chrono::steady_clock::now() + timeout_;
    json session = created.body;
    while (session.at("status").get<std::string>() != "complete") {
        if (std::chrono::steady_clock::now() >= deadline)
            throw Error(ErrorCode::suspended,
                        fmt::format("round {} waits on annotation session {}; rerun to resume", round, id));
        std::this_thread::sleep_for(std::min(poll_interval_, std::chrono::duration_cast<std::chrono::milliseconds>(
                                                                 deadline - std::chrono::steady_clock::now()) +
                                                                 std::chrono::milliseconds(1)));
        auto r = client_.get_session(id);
        if (r.status != 200) throw Error(ErrorCode::io, "session poll failed: " + r.body.dump());
        session = r.body;
    }
    AnnotationSession s = session_from_json(session);
    std::vector<Example> out;
    for (const auto& item : s.items) {
        Example ex;
        ex.utterance = make_utterance(item.item_id, std::string(kTargetLanguage), *item.translation);
        ex.lf = LogicalForm(item.lf_display, -1);
        ex.origin = Origin::human_translated;
        out.push_back(std::move(ex));
    }
    return out;
}

}  // namespace hat

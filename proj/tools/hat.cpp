// hat: command-line entry point.
#include <algorithm>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "CLI11.hpp"

#include "hat/annotation.hpp"
#include "hat/error.hpp"
#include "hat/io.hpp"
#include "hat/loop.hpp"
#include "hat/simulator.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

void setup_logging() {
    auto logger = spdlog::stderr_color_mt("hat");
    spdlog::set_default_logger(logger);
    spdlog::set_level(spdlog::level::warn);
    if (const char* level = std::getenv("HAT_LOG")) spdlog::set_level(spdlog::level::from_str(level));
}

fs::path world_path(const fs::path& dir) { return dir / "world.json"; }
fs::path bundle_path(const fs::path& dir) { return dir / "bundle"; }

hat::LoopConfig load_loop_config(const std::string& path) {
    if (path.empty()) return {};
    return hat::loop_config_from_json(hat::json::parse(hat::read_file(path)));
}

// The world is regenerated from its config; a stored bundle must match it.
hat::World load_world(const fs::path& dir) {
    if (!fs::exists(world_path(dir)))
        throw hat::Error(hat::ErrorCode::configuration, "'" + dir.string() + "' has no world.json; run `hat simulate` first");
    hat::World world = hat::generate_world(hat::load_world_config(world_path(dir)));
    if (fs::exists(bundle_path(dir))) {
        hat::DatasetBundle stored = hat::read_bundle_dir(bundle_path(dir));
        hat::assign_template_ids(stored);
        if (!(stored == world.bundle))
            throw hat::Error(hat::ErrorCode::integrity,
                             "bundle in '" + dir.string() + "' differs from the world its world.json generates");
    }
    return world;
}

struct RunOptions {
    std::string dir;
    std::string out;
    std::string acquisition = "abe-nbest";
    std::string config;
    std::string mode = "simulated";
    std::string compare;
    std::size_t seeds = 20;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string service_host = "127.0.0.1";
    int service_port = 8080;
    std::string token;
    std::string run_name;
    double timeout_seconds = 3600.0;
    double poll_seconds = 2.0;
};

hat::LoopConfig effective_config(const RunOptions& o) {
    hat::LoopConfig c = load_loop_config(o.config);
    c.strategy = hat::strategy_from_string(o.acquisition);
    if (o.seed) c.seed = *o.seed;
    if (o.workers) c.workers = *o.workers;
    c.validate();
    return c;
}

fs::path run_dir_for(const RunOptions& o) {
    return o.out.empty() ? fs::path(o.dir) / "runs" / o.acquisition : fs::path(o.out);
}

std::string token_from(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* t = std::getenv("HAT_TOKEN")) return t;
    return {};
}

int cmd_simulate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed) {
    hat::WorldConfig wc = config.empty() ? hat::WorldConfig{} : hat::load_world_config(config);
    if (seed) wc.seed = *seed;
    wc.validate();
    hat::World world = hat::generate_world(wc);
    fs::create_directories(out);
    hat::write_file_atomic(world_path(out), hat::world_config_to_json(wc).dump(2) + "\n");
    hat::write_bundle_dir(bundle_path(out), world.bundle);
    fmt::print("wrote world with {} source, {} test examples to {}\n", world.bundle.d_source.size(),
               world.bundle.test_target.size(), out);
    return 0;
}

int cmd_compare(const RunOptions& o) {
    hat::WorldConfig wc = hat::load_world_config(world_path(o.dir));
    hat::LoopConfig c = effective_config(o);
    auto started = std::chrono::steady_clock::now();
    auto result = hat::compare_strategies(wc, c, hat::strategy_from_string(o.acquisition),
                                          hat::strategy_from_string(o.compare), o.seeds);
    double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    hat::json report = hat::comparison_to_json(result);
    report["seconds"] = seconds;
    fs::path path = fs::path(o.dir) / fmt::format("compare_{}_vs_{}.json", o.compare, o.acquisition);
    hat::write_file_atomic(path, report.dump(2) + "\n");
    fmt::print("{} vs {} over {} seeds: mean difference {:+.4f}, t {:.3f}, one-sided p {:.4g}\nreport: {}\n",
               o.compare, o.acquisition, o.seeds, result.mean_difference, result.t_statistic, result.p_value,
               path.string());
    return 0;
}

int cmd_run(const RunOptions& o) {
    if (!o.compare.empty()) return cmd_compare(o);
    hat::World world = load_world(o.dir);
    hat::RunContext ctx;
    ctx.oracles = &world.oracles;
    ctx.config = effective_config(o);
    hat::RunDirectory dir(run_dir_for(o));
    ctx.directory = &dir;

    std::unique_ptr<hat::Translator> translator;
    if (hat::translation_mode_from_string(o.mode) == hat::TranslationMode::simulated) {
        translator = std::make_unique<hat::SimulatedTranslator>(world.oracles);
    } else {
        std::string token = token_from(o.token);
        if (token.empty()) throw hat::Error(hat::ErrorCode::configuration, "human-service mode needs --token or HAT_TOKEN");
        std::string run = o.run_name.empty() ? fs::absolute(dir.root()).lexically_normal().string() : o.run_name;
        translator = std::make_unique<hat::ServiceTranslator>(
            hat::AnnotationClient(o.service_host, o.service_port, token), run,
            std::chrono::milliseconds(static_cast<long long>(o.timeout_seconds * 1000)),
            std::chrono::milliseconds(static_cast<long long>(o.poll_seconds * 1000)));
    }
    ctx.translator = translator.get();
    auto result = hat::run_hat(world.bundle, ctx);
    const auto& last = result.history.back();
    fmt::print("round {}: accuracy_target {:.4f} (round 0: {:.4f})\nmetrics: {}\n", last.round,
               last.metrics.at("accuracy_target"), result.history.front().metrics.at("accuracy_target"),
               dir.metrics_path().string());
    return 0;
}

// Latest checkpointed state of a run directory, or round 0 when there is none.
std::pair<hat::RoundState, hat::DatasetBundle> current_state(const hat::World& world, const hat::RunContext& ctx,
                                                             const fs::path& run_dir) {
    if (fs::exists(run_dir)) {
        hat::RunDirectory dir(run_dir);
        if (auto latest = dir.latest_checkpoint()) {
            hat::Checkpoint c = hat::checkpoint_load(dir.checkpoint_path(*latest));
            return {c.state, c.bundle};
        }
    }
    return {hat::initial_state(world.bundle, ctx), world.bundle};
}

int cmd_score(const RunOptions& o, std::optional<std::size_t> k_flag) {
    hat::World world = load_world(o.dir);
    hat::RunContext ctx;
    ctx.oracles = &world.oracles;
    ctx.config = effective_config(o);
    auto [state, bundle] = current_state(world, ctx, run_dir_for(o));
    std::size_t k = 0;
    if (k_flag) {
        k = *k_flag;
    } else {
        hat::BudgetSchedule schedule{bundle.d_source.size(), ctx.config.schedule};
        if (state.round >= schedule.rounds())
            throw hat::Error(hat::ErrorCode::range, "the run has finished every round; pass --k");
        k = hat::budget_for_round(schedule, state.round + 1).increment;
    }
    auto selection = hat::select_round(bundle, state, k, ctx);
    std::set<std::string> picked;
    for (const auto& e : selection.selected) picked.insert(e.utterance.id);
    std::cout << hat::scores_to_csv(selection.scores, picked);
    return 0;
}

// Metrics as JSON with JS also on the x100 scale.
hat::json metrics_json(const std::map<std::string, double>& metrics) {
    hat::json j = metrics;
    if (auto it = metrics.find("js"); it != metrics.end()) j["js_x100"] = 100.0 * it->second;
    return j;
}

int cmd_eval(const RunOptions& o) {
    hat::World world = load_world(o.dir);
    hat::RunContext ctx;
    ctx.oracles = &world.oracles;
    ctx.config = effective_config(o);
    auto [state, bundle] = current_state(world, ctx, run_dir_for(o));
    auto parser = hat::SurrogateParser::train(hat::merge_training_set(bundle), ctx.config.parser_lm);
    auto metrics = hat::evaluate_round(bundle, state, parser, ctx);
    hat::json out{{"round", state.round}, {"metrics", metrics_json(metrics)}};
    fmt::print("{}\n", out.dump(2));
    return 0;
}

hat::AnnotationServer* g_server = nullptr;

int cmd_serve(const std::string& dir, const std::string& ht_dir, const std::string& host, int port,
              const std::string& token_flag) {
    std::string token = token_from(token_flag);
    if (token.empty()) throw hat::Error(hat::ErrorCode::configuration, "serve needs --token or HAT_TOKEN");
    hat::AnnotationStore store(fs::path(dir) / "annotation", ht_dir.empty() ? fs::path(dir) / "ht" : fs::path(ht_dir));
    hat::AnnotationServer server(store, token);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    if (port == 0) {
        int bound = server.bind_any(host);
        fmt::print("listening on {}:{}\n", host, bound);
        std::fflush(stdout);
        server.serve();
    } else {
        fmt::print("listening on {}:{}\n", host, port);
        std::fflush(stdout);
        server.listen(host, port);
    }
    g_server = nullptr;
    return 0;
}

// Stacks every run's metrics.csv under a leading strategy column.
int cmd_report(const std::string& dir, const std::string& format) {
    fs::path runs = fs::path(dir) / "runs";
    if (!fs::exists(runs)) throw hat::Error(hat::ErrorCode::not_found, "no runs under '" + dir + "'");
    std::vector<fs::path> names;
    for (const auto& e : fs::directory_iterator(runs))
        if (fs::exists(e.path() / "metrics.csv")) names.push_back(e.path());
    std::sort(names.begin(), names.end());
    if (format == "json") {
        hat::json out = hat::json::object();
        for (const auto& run : names) {
            hat::RunDirectory rd(run);
            auto latest = rd.latest_checkpoint();
            if (!latest) continue;
            hat::json rows = hat::json::array();
            for (const auto& s : rd.load_history(*latest)) rows.push_back({{"round", s.round}, {"metrics", metrics_json(s.metrics)}});
            out[run.filename().string()] = rows;
        }
        fmt::print("{}\n", out.dump(2));
        return 0;
    }
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::istringstream in(line);
        std::string cell;
        while (std::getline(in, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        return cells;
    };
    bool header = false;
    for (const auto& run : names) {
        std::istringstream in(hat::read_file(run / "metrics.csv"));
        std::string line;
        std::size_t js_col = 0;
        bool first = true;
        while (std::getline(in, line)) {
            if (first) {
                first = false;
                auto cols = split(line);
                js_col = std::find(cols.begin(), cols.end(), "js") - cols.begin();
                if (!header) fmt::print("strategy,{},js_x100\n", line);
                header = true;
                continue;
            }
            if (line.empty()) continue;
            auto cells = split(line);
            std::string scaled;
            if (js_col < cells.size() && !cells[js_col].empty()) scaled = fmt::format("{}", 100.0 * std::stod(cells[js_col]));
            fmt::print("{},{},{}\n", run.filename().string(), line, scaled);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    setup_logging();
    CLI::App app{"Human-assisted translation active learning: simulate worlds, run selection rounds, "
                 "score pools, serve the annotation API, report metrics."};
    app.require_subcommand(1);

    std::string sim_config, sim_out;
    std::optional<std::uint64_t> sim_seed;
    auto* simulate = app.add_subcommand("simulate", "Generate a synthetic world and write it to a directory");
    simulate->add_option("--config", sim_config, "World config (JSON)")->check(CLI::ExistingFile);
    simulate->add_option("--out", sim_out, "Output directory")->required();
    simulate->add_option("--seed", sim_seed, "World seed (overrides the config)");

    RunOptions run_opts;
    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--dir", run_opts.dir, "World directory written by simulate")->required();
        cmd->add_option("--acquisition", run_opts.acquisition,
                        "abe-nbest, abe-max, random, cluster, lcs-fw, lcs-bw, traffic, csse or rttl")
            ->capture_default_str();
        cmd->add_option("--config", run_opts.config, "Loop config (JSON)")->check(CLI::ExistingFile);
        cmd->add_option("--seed", run_opts.seed, "Run seed (overrides the config)");
        cmd->add_option("--workers", run_opts.workers, "Scoring threads; results do not depend on it");
        cmd->add_option("--out", run_opts.out, "Run directory (default <dir>/runs/<acquisition>)");
    };
    auto* run = app.add_subcommand("run", "Run every round of the schedule, resuming from the latest checkpoint");
    add_common(run);
    run->add_option("--mode", run_opts.mode, "simulated or human-service")->capture_default_str();
    run->add_option("--compare", run_opts.compare, "Second strategy for a paired multi-seed comparison");
    run->add_option("--seeds", run_opts.seeds, "Seeds of the paired comparison")->capture_default_str();
    run->add_option("--service-host", run_opts.service_host, "Annotation service host")->capture_default_str();
    run->add_option("--service-port", run_opts.service_port, "Annotation service port")->capture_default_str();
    run->add_option("--token", run_opts.token, "Annotation service bearer token (default $HAT_TOKEN)");
    run->add_option("--run-name", run_opts.run_name, "Session namespace on the service (default the run directory)");
    run->add_option("--timeout", run_opts.timeout_seconds, "Seconds to wait for a session before suspending")
        ->capture_default_str();
    run->add_option("--poll", run_opts.poll_seconds, "Seconds between session polls")->capture_default_str();

    std::optional<std::size_t> score_k;
    auto* score = app.add_subcommand("score", "Score the current pool of a run and print the score CSV");
    add_common(score);
    score->add_option("--k", score_k, "Selection size (default the next round's budget)");

    auto* eval = app.add_subcommand("eval", "Print the metrics of a run's latest checkpoint as JSON");
    add_common(eval);

    std::string serve_dir, serve_ht, serve_host = "127.0.0.1", serve_token;
    int serve_port = 8080;
    auto* serve = app.add_subcommand("serve", "Serve the annotation HTTP API");
    serve->add_option("--dir", serve_dir, "Directory for session logs")->required();
    serve->add_option("--ht-dir", serve_ht, "Where completed sessions write round_q.jsonl (default <dir>/ht)");
    serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
    serve->add_option("--port", serve_port, "Port; 0 picks a free one")->capture_default_str();
    serve->add_option("--token", serve_token, "Bearer token (default $HAT_TOKEN)");

    std::string report_dir, report_format = "csv";
    auto* report = app.add_subcommand("report", "Combine the metrics of every run under a directory");
    report->add_option("--dir", report_dir, "World directory")->required();
    report->add_option("--format", report_format, "csv or json")
        ->check(CLI::IsMember({"csv", "json"}))
        ->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    try {
        if (*simulate) return cmd_simulate(sim_config, sim_out, sim_seed);
        if (*run) return cmd_run(run_opts);
        if (*score) return cmd_score(run_opts, score_k);
        if (*eval) return cmd_eval(run_opts);
        if (*serve) return cmd_serve(serve_dir, serve_ht, serve_host, serve_port, serve_token);
        if (*report) return cmd_report(report_dir, report_format);
    } catch (const hat::Error& e) {
        if (e.code() == hat::ErrorCode::configuration) {
            fmt::print(stderr, "{}\n", e.what());
            return kExitUsage;
        }
        fmt::print(stderr, "{}\n", e.what());
        return kExitRuntime;
    } catch (const std::exception& e) {
        fmt::print(stderr, "error: {}\n", e.what());
        return kExitRuntime;
    }
    return kExitUsage;
}

// aloop: command-line front end for the active-learning loop.
//
//   aloop config validate <run.yaml>
//   aloop protocol validate <protocol.yaml>
//   aloop serve --config <run.yaml> [--workspace DIR] [--protocol P.yaml] [--port N] [--callback URL] [--start]
//   aloop simgen --spec <synthetic.yaml> --out <dir>
//   aloop experiment --config <run.yaml> --spec <synthetic.yaml> --strategies ENT,RANDOM --folds 5 --seeds 3 --out results.csv
//   aloop report <results.csv> [--per-class]

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <pthread.h>

#include <CLI11.hpp>

#include "aloop/common/fs.hpp"
#include "aloop/controller/service.hpp"
#include "aloop/protocol/protocol.hpp"
#include "aloop/simlab/experiment.hpp"

namespace {

using namespace aloop;

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');)
        if (!item.empty()) out.push_back(item);
    return out;
}

config::RunConfig load_config(const std::string& path) {
    auto cfg = config::parse_run_config(fs::read_text(path));
    for (const auto& w : cfg.warnings) log().warn("{}: {}", path, w);
    return cfg;
}

int cmd_config_validate(const std::string& path) {
    const auto cfg = load_config(path);
    const auto violations = config::validate_run_config(cfg);
    for (const auto& v : violations) std::cout << path << ": " << v.str() << "\n";
    if (!violations.empty()) return 1;
    std::cout << path << ": ok (strategy " << cfg.active_learning.strategy << ", " << cfg.active_learning.rounds
              << " rounds)\n";
    return 0;
}

int cmd_protocol_validate(const std::string& path) {
    const auto p = protocol::parse_protocol(fs::read_text(path));
    std::cout << path << ": " << p.states.size() << " states, start '" << p.start << "'\n";
    for (const auto& s : p.states) std::cout << "  " << s.name << " (" << protocol::to_string(s.type) << ")\n";
    return 0;
}

struct ServeArgs {
    std::string config, workspace, protocol, host = "127.0.0.1", callback;
    int port = 8080;
    bool start = false;
};

int cmd_serve(ServeArgs a) {
    if (a.workspace.empty()) {
        const char* env = std::getenv("ALOOP_WORKSPACE");
        if (!env) throw UsageError("no workspace: pass --workspace or set ALOOP_WORKSPACE");
        a.workspace = env;
    }
    // Block termination signals before any thread exists so only sigwait below sees them.
    sigset_t sigs;
    sigemptyset(&sigs);
    sigaddset(&sigs, SIGINT);
    sigaddset(&sigs, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &sigs, nullptr);

    auto cfg = load_config(a.config);
    const auto violations = config::validate_run_config(cfg);
    if (!violations.empty()) {
        for (const auto& v : violations) log().error("{}: {}", a.config, v.str());
        return 1;
    }
    data::Workspace ws(a.workspace);
    const auto init = ws.initialize_with_files();
    log().info("workspace {}: {} annotated, {} unannotated, {} rejected", a.workspace, init.pool.annotated.size(),
               init.pool.unannotated.size(), init.rejected.size());

    ctl::ServiceOptions opt;
    opt.host = a.host;
    if (!a.protocol.empty()) opt.protocol = protocol::parse_protocol(fs::read_text(a.protocol));
    ctl::Service svc(ws, cfg, opt);
    if (!a.callback.empty()) svc.cycle().set_pusher(ctl::http_pusher(a.callback));
    const int port = svc.start(a.port);
    log().info("listening on http://{}:{}", a.host, port);
    if (a.start && !svc.schedule_iteration()) log().warn("could not start the first iteration");

    int sig = 0;
    sigwait(&sigs, &sig);
    log().info("signal {}: shutting down", sig);
    svc.stop();
    return 0;
}

int cmd_simgen(const std::string& spec_path, const std::string& out) {
    const auto spec = sim::parse_synthetic_spec(fs::read_text(spec_path));
    sim::generate_synthetic(spec, out);
    std::cout << "wrote " << spec.volumes * spec.slices_per_volume << " slices to " << out << "\n";
    return 0;
}

struct ExperimentArgs {
    std::string config, spec, strategies = "ENT,MCDR,CORESET,RANDOM", out = "results.csv", work_dir;
    int folds = 5, seeds = 1, threads = 0;
    bool no_full_budget = false, keep = false;
};

int cmd_experiment(const ExperimentArgs& a) {
    const auto cfg = load_config(a.config);
    const auto spec = sim::parse_synthetic_spec(fs::read_text(a.spec));
    sim::ExperimentOptions opt;
    opt.strategies = split_list(a.strategies);
    opt.folds = a.folds;
    opt.seeds = a.seeds;
    opt.threads = a.threads;
    opt.full_budget = !a.no_full_budget;
    opt.keep_workspaces = a.keep;
    if (!a.work_dir.empty()) opt.work_dir = a.work_dir;
    const auto res = sim::run_experiment(cfg, spec, opt);
    fs::write_atomic(a.out, sim::to_csv(res.rows));
    std::cout << sim::render_table(sim::learning_curve(res.rows));
    for (const auto& c : res.cells)
        if (c.error) std::cerr << "failed: " << c.strategy << " fold " << c.fold << " seed " << c.seed << ": " << *c.error << "\n";
    std::cout << "wrote " << res.rows.size() << " rows to " << a.out << "\n";
    return res.failed() ? 2 : 0;
}

int cmd_report(const std::string& path, bool per_class) {
    const auto curve = sim::learning_curve(sim::parse_csv(fs::read_text(path)));
    std::cout << sim::render_table(curve);
    if (per_class) {
        std::cout << "\n";
        for (const auto& p : curve) {
            std::printf("%-8.2f %-10s", p.budget_pct, p.strategy.c_str());
            for (std::size_t c = 0; c < p.class_mean.size(); ++c) std::printf("  c%zu %.3f±%.3f", c, p.class_mean[c], p.class_std[c]);
            std::printf("  (n=%d)\n", p.runs);
        }
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"aloop: active-learning loop for layered medical image segmentation"};
    app.require_subcommand(1);
    int rc = 0;

    auto* config = app.add_subcommand("config", "Run configuration tools")->require_subcommand(1);
    std::string config_path;
    auto* cv = config->add_subcommand("validate", "Parse and check a run configuration");
    cv->add_option("file", config_path)->required()->check(CLI::ExistingFile);
    cv->callback([&] { rc = cmd_config_validate(config_path); });

    auto* proto = app.add_subcommand("protocol", "Annotation protocol tools")->require_subcommand(1);
    std::string proto_path;
    auto* pv = proto->add_subcommand("validate", "Parse and check an annotation protocol");
    pv->add_option("file", proto_path)->required()->check(CLI::ExistingFile);
    pv->callback([&] { rc = cmd_protocol_validate(proto_path); });

    ServeArgs sa;
    auto* serve = app.add_subcommand("serve", "Run the AL controller over HTTP");
    serve->add_option("--config", sa.config, "Run configuration YAML")->required()->check(CLI::ExistingFile);
    serve->add_option("--workspace", sa.workspace, "Workspace root (default: $ALOOP_WORKSPACE)");
    serve->add_option("--protocol", sa.protocol, "Annotation protocol YAML; enables /sessions")->check(CLI::ExistingFile);
    serve->add_option("--host", sa.host, "Bind address")->capture_default_str();
    serve->add_option("--port", sa.port, "Port")->capture_default_str();
    serve->add_option("--callback", sa.callback, "Annotation tool URL that receives query batches");
    serve->add_flag("--start", sa.start, "Begin the first iteration immediately");
    serve->callback([&] { rc = cmd_serve(sa); });

    std::string spec_path, out_dir;
    auto* simgen = app.add_subcommand("simgen", "Generate a synthetic layered-image workspace");
    simgen->add_option("--spec", spec_path, "Synthetic spec YAML")->required()->check(CLI::ExistingFile);
    simgen->add_option("--out", out_dir, "Output directory")->required();
    simgen->callback([&] { rc = cmd_simgen(spec_path, out_dir); });

    ExperimentArgs ea;
    auto* exp = app.add_subcommand("experiment", "k-fold simulated AL runs with an oracle annotator");
    exp->add_option("--config", ea.config)->required()->check(CLI::ExistingFile);
    exp->add_option("--spec", ea.spec)->required()->check(CLI::ExistingFile);
    exp->add_option("--strategies", ea.strategies, "Comma-separated strategy names")->capture_default_str();
    exp->add_option("--folds", ea.folds)->capture_default_str()->check(CLI::Range(2, 1000));
    exp->add_option("--seeds", ea.seeds)->capture_default_str()->check(CLI::Range(1, 1000));
    exp->add_option("--threads", ea.threads, "Concurrent cells (0 = all cores)")->capture_default_str();
    exp->add_option("--out", ea.out, "CSV output")->capture_default_str();
    exp->add_option("--work-dir", ea.work_dir, "Scratch directory for per-cell workspaces");
    exp->add_flag("--no-full-budget", ea.no_full_budget, "Skip the final 100% training run");
    exp->add_flag("--keep-workspaces", ea.keep, "Leave per-cell workspaces on disk");
    exp->callback([&] { rc = cmd_experiment(ea); });

    std::string csv_path;
    bool per_class = false;
    auto* report = app.add_subcommand("report", "Summarise an experiment CSV as a budget x strategy table");
    report->add_option("file", csv_path)->required()->check(CLI::ExistingFile);
    report->add_flag("--per-class", per_class, "Also print per-class dice");
    report->callback([&] { rc = cmd_report(csv_path, per_class); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const aloop::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return rc;
}

#include "cvatlas/pipeline/service.hpp"
#include "cvatlas/pipeline/stages.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <csignal>
#include <functional>
#include <iostream>
#include <map>
#include <string>

namespace {

httplib::Server* g_server = nullptr;

void stop_server(int) {
    if (g_server) g_server->stop();
}

int serve(const cvatlas::RunConfig& cfg, std::optional<std::string> host, std::optional<int> port) {
    const auto L = cvatlas::layout(cfg);
    cvatlas::detail::require(L.atlas_dir() / "manifest.json", "atlas");
    cvatlas::AtlasService service(L.atlas_dir(), L.store(), cfg.serve.blind, L.cv_dir());
    std::string h = host.value_or(cfg.serve.host);
    int p = port.value_or(cfg.serve.port);
    if (const auto env = cvatlas::bind_override()) std::tie(h, p) = *env;
    httplib::Server srv;
    service.mount(srv);
    g_server = &srv;
    std::signal(SIGINT, stop_server);
    std::signal(SIGTERM, stop_server);
    spdlog::info("serving atlas {} on http://{}:{} (blind by default: {})", service.store().atlas_id(), h, p,
                 cfg.serve.blind);
    if (!srv.listen(h, p)) {
        spdlog::error("cannot bind {}:{}", h, p);
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Activation atlas toolkit: train, visualize, label and measure agreement"};
    app.require_subcommand(1);
    std::string config;
    bool verbose = false;
    app.add_flag("-v,--verbose", verbose, "Debug logging");

    std::map<std::string, std::function<void(const cvatlas::RunConfig&)>> stages{
        {"make-dataset",
         [](const auto& c) { spdlog::info("dataset written to {}", cvatlas::make_dataset_stage(c).string()); }},
        {"train",
         [](const auto& c) {
             const auto s = cvatlas::train_stage(c);
             spdlog::info("validation accuracy {:.4f}, macro F1 {:.4f}", s.val_accuracy, s.val_f1);
         }},
        {"capture", [](const auto& c) { spdlog::info("captured {} records", cvatlas::capture_stage(c)); }},
        {"cv",
         [](const auto& c) {
             const auto s = cvatlas::cv_stage(c);
             spdlog::info("{} of {} class visualizations self-classified", s.self_classified, s.classes);
         }},
        {"atlas",
         [](const auto& c) {
             const auto a = cvatlas::atlas_stage(c);
             spdlog::info("atlas {}x{} at layer {}: {} non-empty cells", a.grid, a.grid, a.layer, a.non_empty());
         }},
        {"metrics", [](const auto& c) { std::cout << cvatlas::metrics_stage(c).dump(2) << "\n"; }},
        {"agreement", [](const auto& c) { std::cout << cvatlas::to_json(cvatlas::agreement_stage(c)).dump(2) << "\n"; }},
        {"report",
         [](const auto& c) {
             cvatlas::report_stage(c);
             std::cout << cvatlas::detail::read_text(cvatlas::layout(c).report_md());
         }},
        {"validate", [](const auto& c) { std::cout << "config ok, hash " << cvatlas::config_hash(c) << "\n"; }},
    };
    const std::map<std::string, std::string> help{
        {"make-dataset", "Write the synthetic dataset as an image folder"},
        {"train", "Build folds, prepare the frozen backbone and train the linear head"},
        {"capture", "Capture cls activations and attributions at the atlas layer"},
        {"cv", "Optimise one class visualization per class"},
        {"atlas", "Embed, grid, aggregate and invert the captured activations"},
        {"metrics", "Label atlas cells with every configured surrogate metric"},
        {"agreement", "Inter-rater agreement over collected annotations"},
        {"report", "Summarise all stage manifests"},
        {"validate", "Check the config and print its hash"}};

    std::map<std::string, CLI::App*> subs;
    for (const auto& [name, fn] : stages) {
        auto* sub = app.add_subcommand(name, help.at(name));
        sub->add_option("-c,--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
        subs[name] = sub;
    }
    std::optional<std::string> host;
    std::optional<int> port;
    auto* serve_cmd = app.add_subcommand("serve", "Serve the atlas and collect annotations over HTTP");
    serve_cmd->add_option("-c,--config", config, "Run config (YAML)")->required()->check(CLI::ExistingFile);
    serve_cmd->add_option("--host", host, "Bind host (CVATLAS_BIND overrides)");
    serve_cmd->add_option("--port", port, "Bind port (CVATLAS_BIND overrides)");

    CLI11_PARSE(app, argc, argv);
    spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
    try {
        const auto cfg = cvatlas::load_run_config(config);
        if (serve_cmd->parsed()) return serve(cfg, host, port);
        for (const auto& [name, sub] : subs)
            if (sub->parsed()) stages.at(name)(cfg);
    } catch (const cvatlas::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cvatlas::MissingArtifact& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

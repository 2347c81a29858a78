// Command-line front end: synth, coarse, refine and export stages of the pipeline.
#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>

#include "cit3d/error.hpp"
#include "cit3d/pipeline.hpp"

namespace {

std::string one_line(std::string s) {
    for (char& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
    }
    return s;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Single-image 3D reconstruction pipeline"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    bool deterministic = false;
    bool quiet = false;
    const auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Run configuration file")->required();
        cmd->add_option("--seed", seed, "Random seed (default 0, overrides run.seed)");
        cmd->add_flag("--deterministic", deterministic, "Single-threaded, bit-reproducible execution");
        cmd->add_flag("-q,--quiet", quiet, "Suppress progress output");
    };
    CLI::App* synth = app.add_subcommand("synth", "Render the synthetic reference inputs");
    CLI::App* coarse = app.add_subcommand("coarse", "Optimize the coarse radiance field");
    CLI::App* refine = app.add_subcommand("refine", "Extract, texture and refine the point cloud");
    CLI::App* exp = app.add_subcommand("export", "Write a standalone colored point cloud");
    for (CLI::App* cmd : {synth, coarse, refine, exp}) add_common(cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        cit3d::RunConfig config = cit3d::load_config(config_path);
        if (seed) config.run.seed = *seed;
        cit3d::RunOptions options;
        options.deterministic = deterministic;
        if (!quiet) options.log = [](const std::string& line) { std::cerr << line << '\n'; };

        std::vector<std::filesystem::path> artifacts;
        if (synth->parsed()) artifacts = cit3d::run_synth(config, options).artifacts;
        if (coarse->parsed()) artifacts = cit3d::run_coarse_cmd(config, options).artifacts;
        if (refine->parsed()) artifacts = cit3d::run_refine_cmd(config, options).artifacts;
        if (exp->parsed()) artifacts = cit3d::run_export_cmd(config, options).artifacts;
        for (const auto& p : artifacts) std::cout << p.string() << '\n';
    } catch (const cit3d::ConfigError& e) {
        std::printf("error: config: %s\n", one_line(e.what()).c_str());
        return 2;
    } catch (const cit3d::IoError& e) {
        std::printf("error: io: %s\n", one_line(e.what()).c_str());
        return 3;
    } catch (const std::exception& e) {
        std::printf("error: %s\n", one_line(e.what()).c_str());
        return 1;
    }
    return 0;
}

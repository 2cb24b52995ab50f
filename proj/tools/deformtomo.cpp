// deformtomo: simulate deformed cryo-ET tilt series and reconstruct them
// jointly with the per-tilt deformations, with FBP and evaluation tooling.
//
// Exit codes: 0 success, 1 configuration/usage, 2 file I/O, 3 numerics.

#include <CLI11.hpp>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include "dtomo/pipeline.hpp"

namespace {

dtomo::RunConfig resolve_config(const std::string& config_path, std::optional<std::uint64_t> seed) {
    dtomo::RunConfig cfg =
        config_path.empty() ? dtomo::default_config() : dtomo::load_config(config_path);
    if (!seed) {
        if (const char* env = std::getenv("DEFORMTOMO_SEED")) {
            try {
                seed = static_cast<std::uint64_t>(std::stoull(env));
            } catch (const std::exception&) {
                throw dtomo::ConfigError("DEFORMTOMO_SEED is not an integer: " +
                                         std::string(env));
            }
        }
    }
    if (seed) dtomo::apply_seed_override(cfg, *seed);
    return cfg;
}

dtomo::TrainMode parse_mode(const std::string& mode) {
    if (mode == "est") return dtomo::TrainMode::Est;
    if (mode == "est-wo") return dtomo::TrainMode::EstWo;
    throw dtomo::ConfigError("mode must be 'est' or 'est-wo', got '" + mode + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"deformtomo: joint volume and deformation estimation for tilt series"};
    app.require_subcommand(1);

    std::string config_path, out_dir, bundle_dir, mode = "est";
    std::string est_dir, est_wo_dir, fbp_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> snr_db;

    app.add_option("--seed", seed, "Override every stage seed (also: DEFORMTOMO_SEED)");

    auto* sim = app.add_subcommand("simulate", "Generate a phantom tilt-series bundle");
    sim->add_option("--config", config_path, "Run configuration file");
    sim->add_option("--out", out_dir, "Output bundle directory")->required();
    sim->add_option("--snr-db", snr_db, "Override the noise target SNR in dB");

    auto* rec = app.add_subcommand("reconstruct", "Joint estimation from a bundle");
    rec->add_option("--bundle", bundle_dir, "Input bundle directory")->required();
    rec->add_option("--out", out_dir, "Output directory")->required();
    rec->add_option("--mode", mode, "est (joint) or est-wo (volume only)");
    rec->add_option("--config", config_path, "Override the bundle's configuration");

    auto* fbp = app.add_subcommand("fbp", "Filtered back-projection baseline");
    fbp->add_option("--bundle", bundle_dir, "Input bundle directory")->required();
    fbp->add_option("--out", out_dir, "Output directory")->required();

    auto* ev = app.add_subcommand("evaluate", "Metrics report from reconstruction outputs");
    ev->add_option("--bundle", bundle_dir, "Input bundle directory")->required();
    ev->add_option("--est", est_dir, "EST reconstruction directory");
    ev->add_option("--est-wo", est_wo_dir, "EST-W/O reconstruction directory");
    ev->add_option("--fbp", fbp_dir, "FBP directory");
    ev->add_option("--out", out_dir, "Output directory")->required();

    auto* pipe = app.add_subcommand("pipeline",
                                    "simulate + reconstruct both modes + fbp + evaluate");
    pipe->add_option("--config", config_path, "Run configuration file");
    pipe->add_option("--out", out_dir, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            dtomo::RunConfig cfg = resolve_config(config_path, seed);
            if (snr_db) {
                cfg.noise_snr_db = *snr_db;
                cfg.noise_enabled = !std::isinf(*snr_db);
            }
            dtomo::run_simulate(cfg, out_dir);
        } else if (rec->parsed()) {
            std::optional<dtomo::RunConfig> override_cfg;
            if (!config_path.empty() || seed) {
                dtomo::RunConfig cfg =
                    config_path.empty()
                        ? dtomo::load_config(
                              (std::filesystem::path(bundle_dir) / "config.cfg").string())
                        : dtomo::load_config(config_path);
                if (seed) dtomo::apply_seed_override(cfg, *seed);
                override_cfg = cfg;
            }
            dtomo::run_reconstruct(bundle_dir, out_dir, parse_mode(mode), override_cfg);
        } else if (fbp->parsed()) {
            dtomo::run_fbp(bundle_dir, out_dir);
        } else if (ev->parsed()) {
            dtomo::run_evaluate(dtomo::EvaluateInputs{bundle_dir, est_dir, est_wo_dir, fbp_dir},
                                out_dir);
        } else if (pipe->parsed()) {
            dtomo::RunConfig cfg = resolve_config(config_path, seed);
            dtomo::run_pipeline(cfg, out_dir);
        }
    } catch (const dtomo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const dtomo::IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const dtomo::NumericsError& e) {
        std::cerr << "numerics error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    }
    return 0;
}

// patchail command-line front end.
#include "patchail/explain.hpp"
#include "patchail/gradcheck.hpp"
#include "patchail/trainer.hpp"

#include <CLI11.hpp>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <iostream>

using namespace patchail;

namespace {

constexpr int kUsageError = 2;
constexpr int kRuntimeError = 1;

// Shortest text that parses back to the same double, as in log.csv.
std::string exact(double v) {
    char buf[64];
    return std::string(buf, std::to_chars(buf, buf + sizeof buf, v).ptr);
}

// The run directory next to a checkpoint holds the config it was trained with.
TrainConfig config_for_checkpoint(const std::string& checkpoint, const std::string& config,
                                  const std::vector<std::string>& overrides) {
    const std::filesystem::path path =
        config.empty() ? std::filesystem::path(checkpoint).parent_path() / "config.txt" : std::filesystem::path(config);
    TrainConfig c = TrainConfig::load(path);
    c.apply_overrides(overrides);
    return c;
}

void apply_out_dir_env(TrainConfig& c) {
    if (const char* dir = std::getenv("PATCHAIL_OUT_DIR"); dir != nullptr && *dir != '\0') c.out_dir = dir;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-discriminator adversarial visual imitation on a pixel point-mass task"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    // gen-demos
    auto* gen = app.add_subcommand("gen-demos", "Roll out the scripted expert and write a demo file");
    std::string gen_env = "point_mass";
    int gen_episodes = 10;
    std::uint64_t gen_seed = 0;
    std::string gen_out;
    Index gen_image = 84;
    bool gen_no_actions = false;
    gen->add_option("--env", gen_env, "Environment name")->check(CLI::IsMember({"point_mass"}));
    gen->add_option("--episodes", gen_episodes, "Number of trajectories")->check(CLI::PositiveNumber);
    gen->add_option("--seed", gen_seed, "Random seed");
    gen->add_option("--out", gen_out, "Output demo file")->required();
    gen->add_option("--image-size", gen_image, "Rendered frame side in pixels");
    gen->add_flag("--no-actions", gen_no_actions, "Store observations only");

    // train
    auto* tr = app.add_subcommand("train", "Train an imitation agent");
    std::string tr_config;
    std::vector<std::string> tr_set;
    std::string tr_out;
    std::optional<std::uint64_t> tr_seed;
    bool tr_smoke = false;
    tr->add_option("--config", tr_config, "Config file of key = value lines")->check(CLI::ExistingFile);
    tr->add_option("--set", tr_set, "Override a config key (key=value), repeatable");
    tr->add_option("--out-dir", tr_out, "Run directory (overrides out_dir and PATCHAIL_OUT_DIR)");
    tr->add_option("--seed", tr_seed, "Random seed (overrides the config)");
    tr->add_flag("--smoke", tr_smoke, "Start from the desk-scale benchmark configuration");

    // eval
    auto* ev = app.add_subcommand("eval", "Ground-truth return of a trained policy");
    std::string ev_ckpt, ev_config;
    std::vector<std::string> ev_set;
    int ev_episodes = 10;
    std::optional<std::uint64_t> ev_seed;
    ev->add_option("--checkpoint", ev_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ev->add_option("--config", ev_config, "Config of the run (default: config.txt beside the checkpoint)");
    ev->add_option("--set", ev_set, "Override a config key (key=value), repeatable");
    ev->add_option("--episodes", ev_episodes, "Evaluation episodes")->check(CLI::PositiveNumber);
    ev->add_option("--seed", ev_seed, "Seed of the evaluation episodes");

    // explain
    auto* ex = app.add_subcommand("explain", "Map patch rewards of one observation pair back to pixels");
    std::string ex_ckpt, ex_config, ex_input = "demo", ex_format = "ppm", ex_out = "explain", ex_demos;
    std::vector<std::string> ex_set;
    Index ex_index = 0;
    std::optional<std::uint64_t> ex_seed;
    ex->add_option("--checkpoint", ex_ckpt, "Checkpoint file")->required()->check(CLI::ExistingFile);
    ex->add_option("--config", ex_config, "Config of the run (default: config.txt beside the checkpoint)");
    ex->add_option("--set", ex_set, "Override a config key (key=value), repeatable");
    ex->add_option("--input", ex_input, "Pair source")->check(CLI::IsMember({"demo", "rollout"}));
    ex->add_option("--demos", ex_demos, "Demo file for --input demo (default: the config's demo_path)");
    ex->add_option("--index", ex_index, "Time step of the pair")->check(CLI::NonNegativeNumber);
    ex->add_option("--format", ex_format, "Heatmap format")->check(CLI::IsMember({"csv", "pgm", "ppm"}));
    ex->add_option("--out", ex_out, "Output prefix; writes <out>.<fmt> and <out>_attention.<fmt>");
    ex->add_option("--seed", ex_seed, "Seed of the rollout episode");

    // compare-sim
    auto* cs = app.add_subcommand("compare-sim", "Train while logging both similarity forms");
    std::string cs_config, cs_out;
    std::vector<std::string> cs_set;
    std::optional<std::uint64_t> cs_seed;
    Index cs_pairs = 64;
    bool cs_smoke = false;
    cs->add_option("--config", cs_config, "Config file")->check(CLI::ExistingFile);
    cs->add_option("--set", cs_set, "Override a config key (key=value), repeatable");
    cs->add_option("--out-dir", cs_out, "Run directory");
    cs->add_option("--seed", cs_seed, "Random seed (overrides the config)");
    cs->add_option("--pairs", cs_pairs, "Replay pairs scored per interval")->check(CLI::PositiveNumber);
    cs->add_flag("--smoke", cs_smoke, "Start from the desk-scale benchmark configuration");

    // geometry
    auto* geo = app.add_subcommand("geometry", "Patch grid and receptive field of an architecture");
    std::string geo_arch = arch::dmc_discriminator().to_string();
    Index geo_size = 84;
    geo->add_option("--arch", geo_arch, "Layers as [(size,channels,stride,padding),...]");
    geo->add_option("--input-size", geo_size, "Input side in pixels")->check(CLI::PositiveNumber);

    // gradcheck
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
    std::uint64_t gc_seed = 0;
    bool gc_quiet = false;
    gc->add_option("--seed", gc_seed, "Random seed");
    gc->add_flag("--quiet", gc_quiet, "Print failures and the summary only");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsageError;
    }

    try {
        if (*gen) {
            PointMassConfig env;
            env.image_size = gen_image;
            const DemoSet demos = generate_demos(env, gen_episodes, gen_seed, !gen_no_actions);
            save_demos(demos, gen_out);
            std::printf("wrote %d trajectories to %s\n", gen_episodes, gen_out.c_str());
            std::printf("expert mean return %.12g\n", demos.metadata.expert_return);
        } else if (*tr) {
            TrainConfig c = tr_smoke ? TrainConfig::smoke() : TrainConfig{};
            if (!tr_config.empty()) c = TrainConfig::load(tr_config);
            c.apply_overrides(tr_set);
            apply_out_dir_env(c);
            if (!tr_out.empty()) c.out_dir = tr_out;
            if (tr_seed) c.seed = *tr_seed;
            const TrainResult r = train(c);
            std::printf("final eval return %.6g (expert %.6g)\n", r.final_return, r.expert_return);
            std::printf("checkpoint %s\n", r.checkpoint.string().c_str());
        } else if (*ev) {
            TrainConfig c = config_for_checkpoint(ev_ckpt, ev_config, ev_set);
            if (ev_seed) c.seed = *ev_seed;
            const EvalResult r = evaluate(c, ev_ckpt, ev_episodes);
            std::printf("mean %s std %s over %d episodes\n", exact(r.mean).c_str(), exact(r.std).c_str(), ev_episodes);
        } else if (*ex) {
            TrainConfig c = config_for_checkpoint(ex_ckpt, ex_config, ex_set);
            if (ex_seed) c.seed = *ex_seed;
            const Restored nets = restore_networks(c, ex_ckpt);
            Eigen::ArrayXd pair;
            if (ex_input == "demo") {
                const DemoSet demos = load_demos(ex_demos.empty() ? c.demo_path : std::filesystem::path(ex_demos));
                const Trajectory& t = demos.trajectories.front();
                if (ex_index >= t.steps) throw std::invalid_argument("--index beyond the demo trajectory");
                pair = t.pair(ex_index);
            } else {
                PointMassEnv env(c.env, 0);
                Tensor obs = env.reset(eval_episode_seed(c.seed, 0));
                std::mt19937_64 unused(0);
                if (ex_index >= c.env.episode_length) throw std::invalid_argument("--index beyond the episode");
                for (Index t = 0;; ++t) {
                    const StepResult r = env.step(nets.agent.act(obs, 0, false, unused));
                    if (t == ex_index) {
                        pair.resize(obs.size() + r.observation.size());
                        pair << obs.data(), r.observation.data();
                        break;
                    }
                    obs = r.observation;
                }
            }
            const Index s = c.env.frame_stack, n = c.env.image_size;
            const Tensor x(Shape{2 * s, n, n}, pair);
            const Explanation e = explain_pair(nets.disc, x, c.reward.transform);
            const HeatmapFormat fmt = parse_heatmap_format(ex_format);
            const std::string pixels = ex_out + "." + ex_format;
            const std::string attention = ex_out + "_attention." + ex_format;
            export_heatmap(e.pixels, pixels, fmt);
            export_heatmap(e.attention, attention, fmt);
            std::printf("patch reward sum %.12g, pixel reward sum %.12g\n", e.rewards.sum(), e.pixels.sum());
            std::printf("wrote %s and %s\n", pixels.c_str(), attention.c_str());
        } else if (*cs) {
            TrainConfig c = cs_smoke ? TrainConfig::smoke() : TrainConfig{};
            if (!cs_config.empty()) c = TrainConfig::load(cs_config);
            c.apply_overrides(cs_set);
            apply_out_dir_env(c);
            if (!cs_out.empty()) c.out_dir = cs_out;
            if (cs_seed) c.seed = *cs_seed;
            const std::vector<SimRow> rows = compare_similarity(c, cs_pairs);
            std::vector<double> raw, bar;
            for (const SimRow& r : rows) {
                raw.push_back(r.sim_raw);
                bar.push_back(r.sim_bar);
            }
            std::printf("wrote %s\n", (c.out_dir / "sim_compare.csv").string().c_str());
            if (rows.size() >= 2) std::printf("correlation %.6g over %zu intervals\n", pearson_correlation(raw, bar), rows.size());
        } else if (*geo) {
            const ArchSpec spec = ArchSpec::parse(geo_arch);
            const PatchGeometry g = patch_geometry(spec, geo_size, geo_size);
            std::printf("grid %ldx%ld, receptive field %ld\n", static_cast<long>(g.grid_h), static_cast<long>(g.grid_w),
                        static_cast<long>(g.receptive_field));
        } else if (*gc) {
            int failed = 0;
            for (const GradcheckResult& r : run_gradcheck_suite(gc_seed)) {
                if (!r.passed()) ++failed;
                if (!gc_quiet || !r.passed()) {
                    std::printf("%s %-40s rel err %.3e (tol %.0e)\n", r.passed() ? "ok  " : "FAIL", r.name.c_str(), r.error,
                                r.tolerance);
                }
            }
            std::printf(failed ? "%d check(s) failed\n" : "all checks passed\n", failed);
            return failed ? kRuntimeError : 0;
        }
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kUsageError;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kRuntimeError;
    }
    return 0;
}

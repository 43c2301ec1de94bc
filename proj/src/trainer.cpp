#include "patchail/trainer.hpp"

#include "patchail/checkpoint.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace patchail {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out)) {
        throw std::invalid_argument("config key '" + key + "': expected a number, got '" + v + "'");
    }
    return out;
}

long long parse_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw std::invalid_argument("config key '" + key + "': expected an integer, got '" + v + "'");
    }
    return out;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw std::invalid_argument("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    return out;
}

// "linear(start,end,horizon)"
ExplorationSchedule parse_schedule(const std::string& v) {
    const std::string prefix = "linear(";
    if (v.rfind(prefix, 0) != 0 || v.back() != ')') {
        throw std::invalid_argument("schedule: expected linear(start,end,horizon), got '" + v + "'");
    }
    std::vector<std::string> parts;
    std::stringstream ss(v.substr(prefix.size(), v.size() - prefix.size() - 1));
    for (std::string p; std::getline(ss, p, ',');) parts.push_back(trim(p));
    if (parts.size() != 3) throw std::invalid_argument("schedule: expected three arguments, got '" + v + "'");
    ExplorationSchedule s;
    s.start = parse_double("schedule", parts[0]);
    s.end = parse_double("schedule", parts[1]);
    s.horizon = static_cast<long>(parse_int("schedule", parts[2]));
    return s;
}

std::string schedule_text(const ExplorationSchedule& s) {
    return "linear(" + fmt(s.start) + "," + fmt(s.end) + "," + std::to_string(s.horizon) + ")";
}

struct Key {
    const char* name;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
};

#define PAIL_INT(name, field)                                                                       \
    Key {                                                                                           \
        name, [](TrainConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(parse_int(name, v)); }, \
            [](const TrainConfig& c) { return std::to_string(c.field); }                            \
    }
#define PAIL_DBL(name, field)                                                            \
    Key {                                                                                \
        name, [](TrainConfig& c, const std::string& v) { c.field = parse_double(name, v); }, \
            [](const TrainConfig& c) { return fmt(c.field); }                            \
    }

const std::vector<Key>& key_table() {
    static const std::vector<Key> table = {
        Key{"seed", [](TrainConfig& c, const std::string& v) { c.seed = parse_u64("seed", v); },
            [](const TrainConfig& c) { return std::to_string(c.seed); }},
        PAIL_INT("total_steps", total_steps),
        PAIL_INT("eval_every", eval_every),
        PAIL_INT("eval_episodes", eval_episodes),
        Key{"demo_path", [](TrainConfig& c, const std::string& v) { c.demo_path = v; },
            [](const TrainConfig& c) { return c.demo_path.string(); }},
        Key{"out_dir", [](TrainConfig& c, const std::string& v) { c.out_dir = v; },
            [](const TrainConfig& c) { return c.out_dir.string(); }},
        PAIL_INT("image_size", env.image_size),
        PAIL_INT("frame_stack", env.frame_stack),
        PAIL_INT("action_repeat", env.action_repeat),
        PAIL_INT("episode_length", env.episode_length),
        PAIL_DBL("lr", agent.lr),
        PAIL_DBL("gamma", agent.gamma),
        PAIL_INT("nstep", agent.nstep),
        PAIL_INT("batch_size", agent.batch_size),
        PAIL_DBL("tau", agent.tau),
        PAIL_INT("feature_dim", agent.feature_dim),
        PAIL_INT("hidden_dim", agent.hidden_dim),
        PAIL_INT("exploration_steps", agent.exploration_steps),
        Key{"schedule", [](TrainConfig& c, const std::string& v) { c.agent.schedule = parse_schedule(v); },
            [](const TrainConfig& c) { return schedule_text(c.agent.schedule); }},
        PAIL_INT("aug_pad", agent.aug_pad),
        Key{"encoder_arch", [](TrainConfig& c, const std::string& v) {
                c.agent.encoder_arch = ArchSpec::parse(v);
                c.agent.encoder_arch.terminal = Activation::relu;
            },
            [](const TrainConfig& c) { return c.agent.encoder_arch.to_string(); }},
        PAIL_INT("buffer_size", buffer_size),
        PAIL_INT("update_every", update_every),
        PAIL_INT("seed_steps", seed_steps),
        Key{"arch", [](TrainConfig& c, const std::string& v) { c.arch = ArchSpec::parse(v); },
            [](const TrainConfig& c) { return c.arch.to_string(); }},
        PAIL_DBL("disc_lr", disc_lr),
        PAIL_INT("disc_batch_size", disc_batch_size),
        PAIL_INT("disc_every", disc_every),
        PAIL_DBL("gp_coef", gp_coef),
        PAIL_INT("stats_refresh", stats_refresh),
        PAIL_INT("stats_samples", stats_samples),
        // Selecting a variant resets lambda and scale to that variant's defaults;
        // it is applied before the other keys of the same source.
        Key{"reward.variant",
            [](TrainConfig& c, const std::string& v) {
                const RewardConfig d = RewardConfig::defaults_for(parse_variant(v));
                c.reward.variant = d.variant;
                c.reward.lambda = d.lambda;
                c.reward.scale = d.scale;
            },
            [](const TrainConfig& c) { return to_string(c.reward.variant); }},
        Key{"reward.transform", [](TrainConfig& c, const std::string& v) { c.reward.transform = parse_transform(v); },
            [](const TrainConfig& c) { return to_string(c.reward.transform); }},
        Key{"reward.aggregator", [](TrainConfig& c, const std::string& v) { c.reward.aggregator = parse_aggregator(v); },
            [](const TrainConfig& c) { return to_string(c.reward.aggregator); }},
        PAIL_DBL("reward.lambda", reward.lambda),
        PAIL_DBL("reward.scale", reward.scale),
        PAIL_INT("reward.lambda_decay_steps", reward.lambda_decay_steps),
        PAIL_DBL("reward.lambda_final", reward.lambda_final),
    };
    return table;
}

#undef PAIL_INT
#undef PAIL_DBL

const Key& find_key(const std::string& key) {
    for (const Key& k : key_table()) {
        if (key == k.name) return k;
    }
    throw std::invalid_argument("unknown config key '" + key + "'");
}

std::pair<std::string, std::string> split_assignment(const std::string& line) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("expected key=value, got '" + line + "'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw std::invalid_argument("missing key in '" + line + "'");
    return {std::move(key), std::move(value)};
}

void apply_assignments(TrainConfig& config, const std::vector<std::pair<std::string, std::string>>& kv) {
    for (const auto& [k, v] : kv) find_key(k);  // reject unknown keys before touching anything
    for (const auto& [k, v] : kv) {
        if (k == "reward.variant") config.set(k, v);
    }
    for (const auto& [k, v] : kv) {
        if (k != "reward.variant") config.set(k, v);
    }
}

}  // namespace

// ---------------------------------------------------------------- config

void TrainConfig::validate() const {
    if (total_steps < 0) throw std::invalid_argument("total_steps must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be positive");
    if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be positive");
    env.validate();
    agent.validate();
    if (buffer_size < 2) throw std::invalid_argument("buffer_size must be at least 2");
    if (update_every < 1) throw std::invalid_argument("update_every must be positive");
    if (seed_steps < 0) throw std::invalid_argument("seed_steps must be >= 0");
    arch.validate();
    if (arch.mlp_head) throw std::invalid_argument("arch: the patch discriminator has no MLP head");
    if (!(disc_lr > 0.0)) throw std::invalid_argument("disc_lr must be positive");
    if (disc_batch_size < 1) throw std::invalid_argument("disc_batch_size must be positive");
    if (disc_every < 1) throw std::invalid_argument("disc_every must be positive");
    if (!(gp_coef >= 0.0)) throw std::invalid_argument("gp_coef must be >= 0");
    if (stats_refresh < 1) throw std::invalid_argument("stats_refresh must be positive");
    if (stats_samples < 1) throw std::invalid_argument("stats_samples must be positive");
    reward.validate();
    patch_geometry(arch, env.image_size, env.image_size);
    patch_geometry(agent.encoder_arch, env.image_size, env.image_size);
}

void TrainConfig::set(const std::string& key, const std::string& value) { find_key(key).set(*this, trim(value)); }

std::vector<std::pair<std::string, std::string>> TrainConfig::entries() const {
    std::vector<std::pair<std::string, std::string>> out;
    for (const Key& k : key_table()) out.emplace_back(k.name, k.get(*this));
    return out;
}

std::vector<std::string> TrainConfig::keys() {
    std::vector<std::string> out;
    for (const Key& k : key_table()) out.emplace_back(k.name);
    return out;
}

TrainConfig TrainConfig::from_text(const std::string& text) {
    std::vector<std::pair<std::string, std::string>> kv;
    std::istringstream in(text);
    int lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        try {
            kv.push_back(split_assignment(line));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    TrainConfig c;
    apply_assignments(c, kv);
    return c;
}

TrainConfig TrainConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

void TrainConfig::apply_overrides(const std::vector<std::string>& overrides) {
    std::vector<std::pair<std::string, std::string>> kv;
    for (const auto& o : overrides) kv.push_back(split_assignment(o));
    apply_assignments(*this, kv);
}

std::string TrainConfig::to_text() const {
    std::string out;
    for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
    return out;
}

TrainConfig TrainConfig::smoke() {
    TrainConfig c;
    c.total_steps = 10000;
    c.eval_every = 1000;
    c.eval_episodes = 5;
    c.env.image_size = 32;
    c.agent.lr = 1e-3;
    c.agent.batch_size = 32;
    c.agent.hidden_dim = 128;
    c.agent.aug_pad = 2;
    c.agent.schedule = {1.0, 0.1, 20000};
    c.set("encoder_arch", "[(3,16,2,0),(3,16,2,0)]");
    c.buffer_size = 50000;
    c.arch = ArchSpec::parse("[(4,8,2,1),(4,16,2,1),(4,1,1,1)]");
    c.disc_lr = 1e-3;
    c.disc_batch_size = 32;
    c.stats_refresh = 2000;
    c.stats_samples = 256;
    return c;
}

// ---------------------------------------------------------------- evaluation

std::uint64_t eval_episode_seed(std::uint64_t seed, int index) {
    return episode_seed(seed ^ 0xe7a1e7a1e7a1e7a1ULL, static_cast<std::uint64_t>(index));
}

double rollout_return(const PointMassConfig& env_config, std::uint64_t seed, const PolicyFn& policy) {
    PointMassEnv env(env_config, 0);
    Tensor obs = env.reset(seed);
    double ret = 0.0;
    for (int t = 0; !env.done(); ++t) {
        const StepResult r = env.step(policy(obs, t));
        ret += r.ground_truth_reward;
        obs = r.observation;
    }
    return ret;
}

EvalResult evaluate(const DdpgAgent& agent, const PointMassConfig& env, int episodes, std::uint64_t seed) {
    if (episodes < 1) throw std::invalid_argument("evaluate: episodes must be positive");
    std::mt19937_64 unused(0);
    EvalResult out;
    for (int e = 0; e < episodes; ++e) {
        out.returns.push_back(rollout_return(env, eval_episode_seed(seed, e), [&](const Tensor& obs, int) {
            return Eigen::Vector2d(agent.act(obs, 0, false, unused));
        }));
    }
    const Eigen::Map<const Eigen::ArrayXd> r(out.returns.data(), static_cast<Index>(out.returns.size()));
    out.mean = r.mean();
    out.std = std::sqrt((r - out.mean).square().mean());
    return out;
}

namespace {

std::uint64_t agent_seed(std::uint64_t seed) { return episode_seed(seed, 0xa6e47ULL); }
std::uint64_t disc_seed(std::uint64_t seed) { return episode_seed(seed, 0xd15cULL); }

NamedTensors all_parameters(const DdpgAgent& agent, const PatchDiscriminator& disc) {
    NamedTensors out = agent.named_parameters();
    for (auto& p : disc.named_parameters()) out.push_back(p);
    return out;
}

}  // namespace

Restored restore_networks(const TrainConfig& config, const std::filesystem::path& checkpoint) {
    config.validate();
    const Index stack = config.env.frame_stack;
    const Index image = config.env.image_size;
    Restored r{DdpgAgent(config.agent, stack, image, PointMassEnv::kActionDim, agent_seed(config.seed)),
               PatchDiscriminator(config.arch, 2 * stack, image, disc_seed(config.seed), AdamConfig{config.disc_lr})};
    restore_checkpoint(checkpoint, all_parameters(r.agent, r.disc));
    return r;
}

EvalResult evaluate(const TrainConfig& config, const std::filesystem::path& checkpoint, int episodes) {
    const Restored r = restore_networks(config, checkpoint);
    return evaluate(r.agent, config.env, episodes, config.seed);
}

// ---------------------------------------------------------------- training

namespace {

Eigen::ArrayXd last_frame(const Tensor& obs) {
    const Index plane = obs.dim(1) * obs.dim(2);
    return obs.data().tail(plane);
}

struct Accumulator {
    double sum = 0.0;
    long count = 0;
    void add(double v) {
        sum += v;
        ++count;
    }
    double mean() const { return count ? sum / double(count) : 0.0; }
};

bool finite_row(const LogRow& r) {
    for (double v : {r.disc_loss, r.gp, r.mean_patch_reward, r.sim_bar_mean, r.actor_loss, r.critic_loss, r.eval_return}) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

const char* kLogHeader = "step,disc_updates,agent_updates,disc_loss,gp,mean_patch_reward,sim_bar_mean,actor_loss,critic_loss,eval_return";

std::string csv_row(const LogRow& r) {
    return std::to_string(r.step) + "," + std::to_string(r.disc_updates) + "," + std::to_string(r.agent_updates) + "," +
           fmt(r.disc_loss) + "," + fmt(r.gp) + "," + fmt(r.mean_patch_reward) + "," + fmt(r.sim_bar_mean) + "," +
           fmt(r.actor_loss) + "," + fmt(r.critic_loss) + "," + fmt(r.eval_return);
}

[[noreturn]] void abort_non_finite(const std::filesystem::path& out_dir, long step, const std::string& what,
                                   const std::vector<std::pair<std::string, double>>& values) {
    std::ofstream d(out_dir / "diagnostic.txt");
    d << "non-finite " << what << " at step " << step << "\n";
    for (const auto& [k, v] : values) d << k << " = " << fmt(v) << "\n";
    throw std::runtime_error("non-finite " + what + " at step " + std::to_string(step) + "; see " +
                             (out_dir / "diagnostic.txt").string());
}

void check_demos(const DemoSet& demos, const TrainConfig& config) {
    if (demos.trajectories.empty()) throw std::runtime_error("demo file holds no trajectories");
    for (const Trajectory& t : demos.trajectories) {
        if (t.stack != config.env.frame_stack || t.height != config.env.image_size || t.width != config.env.image_size) {
            throw std::runtime_error("demo shape mismatch: demos are " + std::to_string(t.stack) + "x" +
                                     std::to_string(t.height) + "x" + std::to_string(t.width) + ", config expects " +
                                     std::to_string(config.env.frame_stack) + "x" +
                                     std::to_string(config.env.image_size) + "x" +
                                     std::to_string(config.env.image_size));
        }
        if (t.steps < 1) throw std::runtime_error("demo trajectory without transitions");
    }
}

}  // namespace

TrainResult train(const TrainConfig& config, const IntervalHook& hook) {
    config.validate();
    namespace fs = std::filesystem;
    fs::create_directories(config.out_dir);
    {
        std::ofstream echo(config.out_dir / "config.txt");
        if (!echo) throw std::runtime_error("cannot write to " + config.out_dir.string());
        echo << config.to_text();
    }
    const DemoSet demos = load_demos(config.demo_path);
    check_demos(demos, config);

    const Index stack = config.env.frame_stack;
    const Index image = config.env.image_size;
    std::mt19937_64 rng(config.seed);
    PointMassEnv env(config.env, config.seed);
    DdpgAgent agent(config.agent, stack, image, PointMassEnv::kActionDim, agent_seed(config.seed));
    PatchDiscriminator disc(config.arch, 2 * stack, image, disc_seed(config.seed), AdamConfig{config.disc_lr});
    ReplayBuffer buffer(config.buffer_size, stack, image, image, PointMassEnv::kActionDim);
    ExpertStats stats;

    TrainResult result;
    result.expert_return = demos.metadata.expert_return;
    result.checkpoint = config.out_dir / "checkpoint.ptck";
    std::ofstream log(config.out_dir / "log.csv");
    std::ofstream timing(config.out_dir / "timing.csv");
    log << kLogHeader << "\n";
    timing << "step,wall_time\n";
    log.flush();

    const auto started = std::chrono::steady_clock::now();
    if (config.total_steps == 0) {
        save_checkpoint(result.checkpoint, all_parameters(agent, disc));
        return result;
    }

    Accumulator disc_loss, gp, patch_reward, similarity, actor_loss, critic_loss;
    long step = 0;
    long agent_updates = 0;
    std::uint64_t episode = 0;
    bool need_reset = true;
    Tensor obs;

    const PairRewardFn reward_fn = [&](const Tensor& pairs) {
        const Tensor aug = random_shift(pairs, config.agent.aug_pad, rng);
        const std::vector<Eigen::ArrayXXd> grids = disc.logit_grids(aug);
        Eigen::ArrayXd out(static_cast<Index>(grids.size()));
        for (std::size_t i = 0; i < grids.size(); ++i) {
            const RewardBreakdown b = compose_reward(grids[i], config.reward, &stats, step);
            out[static_cast<Index>(i)] = b.reward;
            patch_reward.add(b.aggregate);
            similarity.add(config.reward.variant == Variant::plain ? sim_bar(grids[i], stats) : b.similarity);
        }
        return out;
    };

    while (step < config.total_steps) {
        if (need_reset) {
            obs = env.reset(episode_seed(config.seed, episode++));
            buffer.start_episode(last_frame(obs));
            need_reset = false;
        }
        const Eigen::VectorXd action = agent.act(obs, step, true, rng);
        const StepResult r = env.step(action);
        // Episode ends are time limits, not terminal states.
        buffer.add(action, last_frame(r.observation), false);
        obs = r.observation;
        need_reset = r.done;
        ++step;

        if (step >= config.seed_steps && step % config.update_every == 0 && buffer.can_sample(config.agent.nstep)) {
            if (agent_updates % config.disc_every == 0) {
                const Tensor expert = random_shift(demos.sample_pairs(config.disc_batch_size, rng), config.agent.aug_pad, rng);
                const Tensor agent_pairs = random_shift(buffer.sample_pairs(config.disc_batch_size, rng), config.agent.aug_pad, rng);
                const DiscUpdateStats d = disc.update(expert, agent_pairs, config.gp_coef, rng);
                if (!std::isfinite(d.loss) || !std::isfinite(d.penalty)) {
                    abort_non_finite(config.out_dir, step, "discriminator loss", {{"disc_loss", d.loss}, {"gp", d.penalty}});
                }
                disc_loss.add(d.loss);
                gp.add(d.penalty);
            }
            if (!stats.valid() || step - stats.refresh_step >= config.stats_refresh) {
                stats = disc.refresh_expert_stats(demos.sample_pairs(config.stats_samples, rng), step);
            }
            const NStepBatch batch = buffer.sample_nstep(config.agent.batch_size, config.agent.nstep,
                                                         config.agent.gamma, reward_fn, rng);
            const UpdateStats u = agent.update(batch, rng);
            ++agent_updates;
            if (!std::isfinite(u.critic_loss) || !std::isfinite(u.actor_loss) || !batch.returns.allFinite()) {
                abort_non_finite(config.out_dir, step, "agent loss",
                                 {{"critic_loss", u.critic_loss}, {"actor_loss", u.actor_loss},
                                  {"returns_max", batch.returns.abs().maxCoeff()}});
            }
            critic_loss.add(u.critic_loss);
            actor_loss.add(u.actor_loss);
        }

        if (step % config.eval_every == 0 || step == config.total_steps) {
            LogRow row;
            row.step = step;
            row.disc_updates = disc.updates();
            row.agent_updates = agent_updates;
            row.disc_loss = disc_loss.mean();
            row.gp = gp.mean();
            row.mean_patch_reward = patch_reward.mean();
            row.sim_bar_mean = similarity.mean();
            row.actor_loss = actor_loss.mean();
            row.critic_loss = critic_loss.mean();
            row.eval_return = evaluate(agent, config.env, config.eval_episodes, config.seed).mean;
            if (!finite_row(row)) abort_non_finite(config.out_dir, step, "log value", {{"eval_return", row.eval_return}});
            log << csv_row(row) << "\n";
            log.flush();
            const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
            timing << step << "," << fmt(wall) << "\n";
            timing.flush();
            save_checkpoint(result.checkpoint, all_parameters(agent, disc));
            result.log.push_back(row);
            result.final_return = row.eval_return;
            disc_loss = gp = patch_reward = similarity = actor_loss = critic_loss = Accumulator{};
            if (hook) hook(step, disc, buffer);
        }
    }
    return result;
}

// ---------------------------------------------------------------- similarity comparison

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw std::invalid_argument("pearson_correlation: need two equal series of length >= 2");
    const Eigen::Map<const Eigen::ArrayXd> x(a.data(), static_cast<Index>(a.size()));
    const Eigen::Map<const Eigen::ArrayXd> y(b.data(), static_cast<Index>(b.size()));
    const Eigen::ArrayXd dx = x - x.mean();
    const Eigen::ArrayXd dy = y - y.mean();
    const double denom = std::sqrt(dx.square().sum() * dy.square().sum());
    return denom > 0.0 ? (dx * dy).sum() / denom : 0.0;
}

std::vector<SimRow> compare_similarity(const TrainConfig& config, Index pairs_per_interval) {
    const DemoSet demos = load_demos(config.demo_path);
    std::vector<SimRow> rows;
    std::mt19937_64 probe_rng(config.seed ^ 0x51a51a51a51aULL);

    const auto hook = [&](long step, const PatchDiscriminator& disc, const ReplayBuffer& buffer) {
        if (!buffer.can_sample(1)) return;
        std::vector<Eigen::ArrayXXd> expert;
        std::vector<std::pair<Index, Index>> chunk;
        const auto flush = [&] {
            if (chunk.empty()) return;
            for (auto& g : disc.logit_grids(demos.pairs(chunk))) expert.push_back(std::move(g));
            chunk.clear();
        };
        for (std::size_t t = 0; t < demos.trajectories.size(); ++t) {
            for (Index k = 0; k < demos.trajectories[t].steps; ++k) {
                chunk.emplace_back(static_cast<Index>(t), k);
                if (chunk.size() == 256) flush();
            }
        }
        flush();
        ExpertStats fresh;
        fresh.mean_logits = Eigen::ArrayXXd::Zero(expert.front().rows(), expert.front().cols());
        for (const auto& g : expert) fresh.mean_logits += g;
        fresh.mean_logits /= double(expert.size());
        fresh.refresh_step = step;

        SimRow row;
        row.step = step;
        const std::vector<Eigen::ArrayXXd> agent = disc.logit_grids(buffer.sample_pairs(pairs_per_interval, probe_rng));
        for (const auto& g : agent) {
            row.sim_raw += sim_raw(g, expert);
            row.sim_bar += sim_bar(g, fresh);
        }
        row.sim_raw /= double(agent.size());
        row.sim_bar /= double(agent.size());
        rows.push_back(row);
    };

    train(config, hook);
    std::ofstream out(config.out_dir / "sim_compare.csv");
    out << "step,sim_raw,sim_bar\n";
    for (const SimRow& r : rows) out << r.step << "," << fmt(r.sim_raw) << "," << fmt(r.sim_bar) << "\n";
    return rows;
}

}  // namespace patchail

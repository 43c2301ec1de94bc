#include "patchail/agent.hpp"

#include "patchail/env.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace patchail {

// ---------------------------------------------------------------- augmentation

Tensor shift_with_offsets(const Tensor& batch, int pad, const std::vector<std::pair<int, int>>& offsets) {
    if (batch.rank() != 4) throw std::invalid_argument("random_shift: expected [N,C,H,W], got " + to_string(batch.shape()));
    const Index n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    if (pad < 0 || h <= 2 * pad || w <= 2 * pad) {
        throw std::invalid_argument("random_shift: image " + std::to_string(h) + "x" + std::to_string(w) +
                                    " is too small for padding " + std::to_string(pad));
    }
    if (static_cast<Index>(offsets.size()) != n) throw std::invalid_argument("random_shift: one offset per sample");
    Array out(batch.size());
    const Array& in = batch.data();
    for (Index s = 0; s < n; ++s) {
        const auto [oy, ox] = offsets[static_cast<std::size_t>(s)];
        if (oy < 0 || ox < 0 || oy > 2 * pad || ox > 2 * pad) throw std::invalid_argument("random_shift: offset out of range");
        for (Index ch = 0; ch < c; ++ch) {
            const Index base = (s * c + ch) * h * w;
            for (Index y = 0; y < h; ++y) {
                const Index sy = std::clamp<Index>(y + oy - pad, 0, h - 1);
                for (Index x = 0; x < w; ++x) {
                    const Index sx = std::clamp<Index>(x + ox - pad, 0, w - 1);
                    out[base + y * w + x] = in[base + sy * w + sx];
                }
            }
        }
    }
    return Tensor(batch.shape(), std::move(out));
}

Tensor random_shift(const Tensor& batch, int pad, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 2 * std::max(pad, 0));
    std::vector<std::pair<int, int>> offsets;
    const Index n = batch.rank() ? batch.dim(0) : 0;
    for (Index i = 0; i < n; ++i) {
        const int oy = pick(rng);
        const int ox = pick(rng);
        offsets.emplace_back(oy, ox);
    }
    return shift_with_offsets(batch, pad, offsets);
}

double ExplorationSchedule::value(long step) const {
    if (horizon <= 0 || step >= horizon) return end;
    const double t = std::max(0.0, double(step)) / double(horizon);
    return start + t * (end - start);
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(Index capacity, Index frame_stack, Index height, Index width, Index action_dim)
    : capacity_(capacity), stack_(frame_stack), height_(height), width_(width), action_dim_(action_dim) {
    if (capacity < 2 || frame_stack < 1 || height < 1 || width < 1 || action_dim < 1) {
        throw std::invalid_argument("ReplayBuffer: invalid dimensions");
    }
    frames_.resize(static_cast<std::size_t>(capacity * height * width));
    actions_ = Eigen::ArrayXXd::Zero(action_dim, capacity);
    slots_.resize(static_cast<std::size_t>(capacity));
}

void ReplayBuffer::write_frame(const Eigen::ArrayXd& frame) {
    const Index plane = height_ * width_;
    if (frame.size() != plane) throw std::invalid_argument("ReplayBuffer: frame size mismatch");
    std::uint8_t* dst = frames_.data() + slot_of(written_) * static_cast<std::size_t>(plane);
    for (Index i = 0; i < plane; ++i) {
        dst[i] = static_cast<std::uint8_t>(std::clamp<long>(std::lround(frame[i] * 255.0), 0, 255));
    }
    ++written_;
}

void ReplayBuffer::start_episode(const Eigen::ArrayXd& frame) {
    ++episode_;
    Slot& s = slots_[slot_of(written_)];
    s = Slot{episode_, 0, false, false};
    write_frame(frame);
    open_ = true;
}

void ReplayBuffer::add(const Eigen::VectorXd& action, const Eigen::ArrayXd& next_frame, bool terminal) {
    if (!open_) throw std::logic_error("ReplayBuffer::add before start_episode");
    if (action.size() != action_dim_) throw std::invalid_argument("ReplayBuffer: action size mismatch");
    const std::uint64_t current = written_ - 1;
    Slot& cur = slots_[slot_of(current)];
    cur.has_action = true;
    cur.terminal = terminal;
    actions_.col(static_cast<Index>(slot_of(current))) = action.array();
    const Index step = cur.step + 1;
    slots_[slot_of(written_)] = Slot{episode_, step, false, false};
    write_frame(next_frame);
    if (terminal) open_ = false;
}

Eigen::ArrayXd ReplayBuffer::frame(std::uint64_t index) const {
    if (!retained(index)) throw std::out_of_range("ReplayBuffer: frame no longer retained");
    const Index plane = height_ * width_;
    const std::uint8_t* src = frames_.data() + slot_of(index) * static_cast<std::size_t>(plane);
    Eigen::ArrayXd out(plane);
    for (Index i = 0; i < plane; ++i) out[i] = pixel_level(src[i]);
    return out;
}

Index ReplayBuffer::step_in_episode(std::uint64_t index) const { return slots_[slot_of(index)].step; }

Eigen::ArrayXd ReplayBuffer::observation(std::uint64_t index) const {
    const Index plane = height_ * width_;
    const Index step = step_in_episode(index);
    Eigen::ArrayXd out(stack_ * plane);
    for (Index j = 0; j < stack_; ++j) {
        // Channel j holds the frame (stack-1-j) steps back, repeating the first frame at episode start.
        const Index back = std::min<Index>(stack_ - 1 - j, step);
        out.segment(j * plane, plane) = frame(index - static_cast<std::uint64_t>(back));
    }
    return out;
}

bool ReplayBuffer::valid_start(std::uint64_t index, int n) const {
    if (!retained(index)) return false;
    const Slot& first = slots_[slot_of(index)];
    if (!first.has_action) return false;
    const Index back = std::min<Index>(stack_ - 1, first.step);
    if (index < oldest() + static_cast<std::uint64_t>(back)) return false;
    for (int k = 0; k < n; ++k) {
        const std::uint64_t i = index + static_cast<std::uint64_t>(k);
        if (!retained(i)) return false;
        const Slot& s = slots_[slot_of(i)];
        if (s.episode != first.episode || !s.has_action) return false;
        if (s.terminal) return retained(i + 1);
    }
    return retained(index + static_cast<std::uint64_t>(n));
}

bool ReplayBuffer::can_sample(int n) const {
    for (std::uint64_t i = written_; i > oldest(); --i) {
        if (valid_start(i - 1, n)) return true;
    }
    return false;
}

namespace {

Tensor stack_batch(const std::vector<Eigen::ArrayXd>& items, Shape sample_shape) {
    const Index per = items.empty() ? 0 : items.front().size();
    Array data(static_cast<Index>(items.size()) * per);
    for (std::size_t i = 0; i < items.size(); ++i) data.segment(static_cast<Index>(i) * per, per) = items[i];
    Shape shape{static_cast<Index>(items.size())};
    shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace

NStepBatch ReplayBuffer::sample_nstep(Index batch, int n, double gamma, const PairRewardFn& reward_fn,
                                      std::mt19937_64& rng) const {
    if (n < 1 || batch < 1) throw std::invalid_argument("sample_nstep: need n >= 1 and batch >= 1");
    if (!reward_fn) throw std::invalid_argument("sample_nstep: reward function unavailable");
    if (!can_sample(n)) throw std::logic_error("sample_nstep: insufficient data for an n-step window");

    std::uniform_int_distribution<std::uint64_t> pick(oldest(), written_ - 1);
    std::vector<std::uint64_t> starts;
    starts.reserve(static_cast<std::size_t>(batch));
    while (static_cast<Index>(starts.size()) < batch) {
        const std::uint64_t i = pick(rng);
        if (valid_start(i, n)) starts.push_back(i);
    }

    NStepBatch out;
    std::vector<Eigen::ArrayXd> obs, next_obs, pairs;
    std::vector<int> lengths;
    Eigen::ArrayXXd actions(batch, action_dim_);
    out.discount.resize(batch);
    for (Index b = 0; b < batch; ++b) {
        const std::uint64_t t = starts[static_cast<std::size_t>(b)];
        obs.push_back(observation(t));
        actions.row(b) = actions_.col(static_cast<Index>(slot_of(t))).transpose();
        int len = 0;
        bool terminal = false;
        for (int k = 0; k < n && !terminal; ++k) {
            const std::uint64_t i = t + static_cast<std::uint64_t>(k);
            Eigen::ArrayXd p(2 * stack_ * height_ * width_);
            p << observation(i), observation(i + 1);
            pairs.push_back(std::move(p));
            terminal = slots_[slot_of(i)].terminal;
            ++len;
        }
        lengths.push_back(len);
        next_obs.push_back(observation(t + static_cast<std::uint64_t>(len)));
        out.discount[b] = terminal ? 0.0 : std::pow(gamma, n);
    }
    out.obs = stack_batch(obs, {stack_, height_, width_});
    out.next_obs = stack_batch(next_obs, {stack_, height_, width_});
    Array flat(batch * action_dim_);
    for (Index b = 0; b < batch; ++b) flat.segment(b * action_dim_, action_dim_) = actions.row(b).transpose();
    out.action = Tensor(Shape{batch, action_dim_}, std::move(flat));
    out.pairs = stack_batch(pairs, {2 * stack_, height_, width_});

    const Eigen::ArrayXd rewards = reward_fn(out.pairs);
    if (rewards.size() != static_cast<Index>(pairs.size())) throw std::logic_error("reward function returned wrong count");
    out.returns = Eigen::ArrayXd::Zero(batch);
    Index r = 0;
    for (Index b = 0; b < batch; ++b) {
        double discount = 1.0;
        for (int k = 0; k < lengths[static_cast<std::size_t>(b)]; ++k, ++r) {
            out.returns[b] += discount * rewards[r];
            discount *= gamma;
        }
    }
    return out;
}

Tensor ReplayBuffer::sample_pairs(Index batch, std::mt19937_64& rng) const {
    if (!can_sample(1)) throw std::logic_error("sample_pairs: buffer holds no transition");
    std::uniform_int_distribution<std::uint64_t> pick(oldest(), written_ - 1);
    std::vector<Eigen::ArrayXd> pairs;
    while (static_cast<Index>(pairs.size()) < batch) {
        const std::uint64_t i = pick(rng);
        if (!valid_start(i, 1)) continue;
        Eigen::ArrayXd p(2 * stack_ * height_ * width_);
        p << observation(i), observation(i + 1);
        pairs.push_back(std::move(p));
    }
    return stack_batch(pairs, {2 * stack_, height_, width_});
}

// ---------------------------------------------------------------- agent

void AgentConfig::validate() const {
    if (!(lr > 0.0)) throw std::invalid_argument("agent.lr must be positive");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("agent.gamma must be in (0, 1]");
    if (nstep < 1) throw std::invalid_argument("agent.nstep must be positive");
    if (batch_size < 1) throw std::invalid_argument("agent.batch_size must be positive");
    if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("agent.tau must be in (0, 1]");
    if (feature_dim < 1 || hidden_dim < 1) throw std::invalid_argument("agent feature/hidden sizes must be positive");
    if (exploration_steps < 0) throw std::invalid_argument("agent.exploration_steps must be >= 0");
    if (aug_pad < 0) throw std::invalid_argument("agent.aug_pad must be >= 0");
    encoder_arch.validate();
}

DdpgAgent::DdpgAgent(const AgentConfig& config, Index frame_stack, Index image_size, Index action_dim,
                     std::uint64_t seed)
    : config_(config), action_dim_(action_dim) {
    config_.validate();
    encoder_ = Encoder(config_.encoder_arch, frame_stack, image_size, seed);
    const PolicyDims dims{encoder_.feature_size(), config_.feature_dim, config_.hidden_dim, action_dim};
    actor_ = build_actor(dims, seed + 1);
    critics_ = {build_critic(dims, seed + 2), build_critic(dims, seed + 3)};
    targets_ = {critics_[0].clone(), critics_[1].clone()};
    const AdamConfig adam{config_.lr};
    encoder_opt_ = std::make_shared<Adam>(encoder_.parameters(), adam);
    actor_opt_ = std::make_shared<Adam>(actor_.parameters(), adam);
    std::vector<Tensor> critic_params = critics_[0].parameters();
    for (const Tensor& t : critics_[1].parameters()) critic_params.push_back(t);
    critic_opt_ = std::make_shared<Adam>(critic_params, adam);
}

Eigen::VectorXd DdpgAgent::act(const Tensor& observation, long step, bool explore, std::mt19937_64& rng) const {
    if (explore && step < config_.exploration_steps) {
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        Eigen::VectorXd a(action_dim_);
        for (Index i = 0; i < action_dim_; ++i) a[i] = u(rng);
        return a;
    }
    NoGradGuard no_grad;
    Shape shape{1};
    shape.insert(shape.end(), observation.shape().begin(), observation.shape().end());
    const Tensor mu = actor_.forward(encoder_.forward(reshape(observation, shape)));
    Eigen::VectorXd a = mu.data().matrix();
    if (explore) {
        std::normal_distribution<double> noise(0.0, config_.schedule.value(step));
        for (Index i = 0; i < action_dim_; ++i) a[i] += noise(rng);
    }
    return a.cwiseMax(-1.0).cwiseMin(1.0);
}

DdpgAgent::CriticStep DdpgAgent::update_critic(const Tensor& obs, const Tensor& action, const Eigen::ArrayXd& returns,
                                               const Tensor& next_obs, const Eigen::ArrayXd& discount) {
    const Index n = obs.dim(0);
    if (returns.size() != n || discount.size() != n || action.dim(0) != n || next_obs.dim(0) != n) {
        throw std::invalid_argument("update_critic: batch size mismatch");
    }
    Array target;
    {
        NoGradGuard no_grad;
        const Tensor next_features = encoder_.forward(next_obs);
        const Tensor next_action = actor_.forward(next_features);
        const Array q1 = targets_[0].forward(next_features, next_action).data();
        const Array q2 = targets_[1].forward(next_features, next_action).data();
        target = returns + discount * q1.min(q2);
    }
    const Tensor y(Shape{n, 1}, target);

    encoder_opt_->zero_grad();
    critic_opt_->zero_grad();
    const Tensor features = encoder_.forward(obs);
    const Tensor q1 = critics_[0].forward(features, action);
    const Tensor q2 = critics_[1].forward(features, action);
    Tensor loss = mean(square(q1 - y)) + mean(square(q2 - y));
    loss.backward();
    encoder_opt_->step();
    critic_opt_->step();
    return {loss.item(), q1.data().mean(), features.detach()};
}

double DdpgAgent::update_actor(const Tensor& features) {
    const Tensor f = features.detach();
    actor_opt_->zero_grad();
    const Tensor q = critics_[0].forward(f, actor_.forward(f));
    Tensor loss = neg(mean(q));
    loss.backward();
    actor_opt_->step();
    // The pass also deposited gradients on critic 1; they must not leak into its next step.
    critic_opt_->zero_grad();
    return loss.item();
}

void DdpgAgent::soft_update(double tau) {
    for (int c = 0; c < 2; ++c) {
        const std::vector<Tensor> online = critics_[static_cast<std::size_t>(c)].parameters();
        std::vector<Tensor> target = targets_[static_cast<std::size_t>(c)].parameters();
        for (std::size_t i = 0; i < online.size(); ++i) {
            if (tau == 1.0) {
                target[i].data() = online[i].data();
            } else {
                target[i].data() = tau * online[i].data() + (1.0 - tau) * target[i].data();
            }
        }
    }
}

UpdateStats DdpgAgent::update(const NStepBatch& batch, std::mt19937_64& rng) {
    const Tensor obs = random_shift(batch.obs, config_.aug_pad, rng);
    const Tensor next_obs = random_shift(batch.next_obs, config_.aug_pad, rng);
    const CriticStep critic = update_critic(obs, batch.action, batch.returns, next_obs, batch.discount);
    UpdateStats stats;
    stats.critic_loss = critic.loss;
    stats.mean_q = critic.mean_q;
    stats.actor_loss = update_actor(critic.features);
    soft_update(config_.tau);
    return stats;
}

NamedTensors DdpgAgent::named_parameters() const {
    NamedTensors out = policy_parameters();
    for (int c = 0; c < 2; ++c) {
        for (auto& p : critics_[static_cast<std::size_t>(c)].named_parameters("critic" + std::to_string(c))) out.push_back(p);
        for (auto& p : targets_[static_cast<std::size_t>(c)].named_parameters("target" + std::to_string(c))) out.push_back(p);
    }
    return out;
}

NamedTensors DdpgAgent::policy_parameters() const {
    NamedTensors out = encoder_.named_parameters("encoder");
    for (auto& p : actor_.named_parameters("actor")) out.push_back(p);
    return out;
}

}  // namespace patchail

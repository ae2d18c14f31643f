// SPDX-License-Identifier: Apache-2.0
#include "pasta/dpo_engine.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <json.hpp>
#include <limits>
#include <numeric>
#include <random>

#include "pasta/error.hpp"

namespace pasta {

namespace {

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

const FeatureContext& context_of(const DpoDataset& data, const DpoPair& pair) {
    return data.contexts[pair.context];
}

void require_reference(const DpoConfig& config, const PolicyParams* reference) {
    if (config.use_reference && reference == nullptr) {
        throw Error(ErrorCode::MissingReference, "use_reference is set but no reference policy was given");
    }
}

void require_partitions(const DpoDataset& data, const DpoConfig& config) {
    for (FailureMode m : kAllModes) {
        if (config.weight(m) != 0.0 && data[m].empty()) {
            throw Error(ErrorCode::EmptyPartition,
                        std::string(to_string(m)) + " partition is empty but carries weight " +
                            fmt::format("{}", config.weight(m)));
        }
    }
}

double effective_delta(const PolicyParams& policy, const DpoDataset& data, const DpoPair& pair,
                       const DpoConfig& config, const PolicyParams* reference) {
    double d = delta(policy, data, pair);
    if (config.use_reference) d -= delta(*reference, data, pair);
    return d;
}

// Partition-weighted objective and gradient over per-partition pair subsets.
double weighted_loss(const PolicyParams& policy, const DpoDataset& data, const DpoConfig& config,
                     const PolicyParams* reference,
                     const std::array<std::vector<std::size_t>, 3>& subset,
                     std::vector<double>* grad) {
    double total = 0.0;
    if (grad != nullptr) grad->assign(policy.feature_dim(), 0.0);
    for (FailureMode m : kAllModes) {
        const double w = config.weight(m);
        const auto& idx = subset[index_of(m)];
        if (w == 0.0 || idx.empty()) continue;
        const double scale = w / static_cast<double>(idx.size());
        double sum = 0.0;
        for (std::size_t i : idx) {
            const DpoPair& pair = data[m][i];
            const double d = effective_delta(policy, data, pair, config, reference);
            sum += pair_loss(d, config.lambda_scale);
            if (grad != nullptr) {
                const auto& ctx = context_of(data, pair);
                const auto& fp = ctx.features[pair.chosen];
                const auto& fn = ctx.features[pair.rejected];
                const double coef =
                    -scale * config.lambda_scale * sigmoid(-config.lambda_scale * d);
                for (std::size_t k = 0; k < fp.size(); ++k) (*grad)[k] += coef * (fp[k] - fn[k]);
            }
        }
        total += scale * sum;
    }
    return total;
}

std::array<std::vector<std::size_t>, 3> full_subset(const DpoDataset& data) {
    std::array<std::vector<std::size_t>, 3> s;
    for (FailureMode m : kAllModes) {
        s[index_of(m)].resize(data[m].size());
        std::iota(s[index_of(m)].begin(), s[index_of(m)].end(), std::size_t{0});
    }
    return s;
}

// Uniform double in [0, 1) and standard normals from raw engine output, so
// synthetic data does not depend on the standard library's distributions.
class Draws {
public:
    explicit Draws(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double normal() {
        if (spare_) {
            const double v = *spare_;
            spare_.reset();
            return v;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        constexpr double two_pi = 6.283185307179586476925;
        spare_ = r * std::sin(two_pi * u2);
        return r * std::cos(two_pi * u2);
    }
    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::optional<double> spare_;
};

}  // namespace

// ---------------------------------------------------------------- types

bool PolicyParams::finite() const noexcept {
    return std::all_of(theta.begin(), theta.end(), [](double v) { return std::isfinite(v); });
}

std::string PolicyParams::to_json() const {
    nlohmann::ordered_json j;
    j["feature_dim"] = theta.size();
    j["theta"] = theta;
    return j.dump(2);
}

PolicyParams PolicyParams::from_json(std::string_view text) {
    try {
        const auto j = nlohmann::json::parse(text);
        PolicyParams p(j.at("theta").get<std::vector<double>>());
        if (j.contains("feature_dim") && j.at("feature_dim").get<std::size_t>() != p.feature_dim()) {
            throw Error(ErrorCode::InvalidValue, "feature_dim disagrees with theta length");
        }
        if (!p.finite()) throw Error(ErrorCode::InvalidValue, "theta has non-finite entries");
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::ParseError, std::string("policy params: ") + e.what());
    }
}

std::size_t FeatureContext::index_of(std::string_view response) const {
    const auto it = std::find(responses.begin(), responses.end(), response);
    if (it == responses.end()) {
        throw Error(ErrorCode::UnknownResponse,
                    "response not in context " + context_id + ": " + std::string(response));
    }
    return static_cast<std::size_t>(it - responses.begin());
}

std::size_t DpoDataset::size() const noexcept {
    return partitions[0].size() + partitions[1].size() + partitions[2].size();
}

void DpoDataset::validate() const {
    for (const auto& ctx : contexts) {
        if (ctx.responses.size() < 2 || ctx.features.size() != ctx.responses.size()) {
            throw Error(ErrorCode::InvalidValue,
                        "context " + ctx.context_id + " needs >= 2 responses with features");
        }
        for (const auto& f : ctx.features) {
            if (f.size() != feature_dim) {
                throw Error(ErrorCode::InvalidValue,
                            "context " + ctx.context_id + " has a feature vector of the wrong size");
            }
        }
    }
    for (const auto& part : partitions) {
        for (const auto& p : part) {
            if (p.context >= contexts.size() || p.chosen >= contexts[p.context].responses.size() ||
                p.rejected >= contexts[p.context].responses.size()) {
                throw Error(ErrorCode::InvalidValue, "pair " + p.pair_id + " indexes outside its context");
            }
        }
    }
}

double DpoConfig::weight(FailureMode m) const noexcept {
    switch (m) {
        case FailureMode::Spatial: return alpha;
        case FailureMode::Temporal: return beta_w;
        case FailureMode::Crossframe: return gamma;
    }
    return 0.0;
}

void DpoConfig::validate() const {
    if (!(lambda_scale > 0.0) || !std::isfinite(lambda_scale)) {
        throw Error(ErrorCode::InvalidValue, "lambda must be positive");
    }
    if (alpha < 0.0 || beta_w < 0.0 || gamma < 0.0) {
        throw Error(ErrorCode::InvalidValue, "partition weights must be non-negative");
    }
    if (alpha + beta_w + gamma <= 0.0) {
        throw Error(ErrorCode::InvalidValue, "at least one partition weight must be positive");
    }
    if (learning_rate < 0.0 || !std::isfinite(learning_rate)) {
        throw Error(ErrorCode::InvalidValue, "learning rate must be finite and non-negative");
    }
}

// ---------------------------------------------------------------- math

double sigmoid(double x) noexcept {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus(double x) noexcept {
    return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double logit(const PolicyParams& policy, const FeatureContext& context, std::size_t response) {
    return dot(policy.theta, context.features.at(response)) + context.logit_offset;
}

double log_prob(const PolicyParams& policy, const FeatureContext& context, std::size_t response) {
    if (response >= context.responses.size()) {
        throw Error(ErrorCode::UnknownResponse,
                    "response index " + std::to_string(response) + " outside context " +
                        context.context_id);
    }
    std::vector<double> logits(context.responses.size());
    for (std::size_t i = 0; i < logits.size(); ++i) logits[i] = logit(policy, context, i);
    const double mx = *std::max_element(logits.begin(), logits.end());
    double s = 0.0;
    for (double l : logits) s += std::exp(l - mx);
    return logits[response] - (mx + std::log(s));
}

double log_prob(const PolicyParams& policy, const FeatureContext& context,
                std::string_view response) {
    return log_prob(policy, context, context.index_of(response));
}

double delta(const PolicyParams& policy, const DpoDataset& data, const DpoPair& pair) {
    const auto& ctx = context_of(data, pair);
    return logit(policy, ctx, pair.chosen) - logit(policy, ctx, pair.rejected);
}

double pair_loss(double delta_value, double lambda_scale) noexcept {
    return softplus(-lambda_scale * delta_value);
}

double objective(const PolicyParams& policy, const DpoDataset& data, const DpoConfig& config,
                 const PolicyParams* reference) {
    require_reference(config, reference);
    require_partitions(data, config);
    return weighted_loss(policy, data, config, reference, full_subset(data), nullptr);
}

std::vector<double> gradient(const PolicyParams& policy, const DpoDataset& data,
                             const DpoConfig& config, const PolicyParams* reference) {
    require_reference(config, reference);
    require_partitions(data, config);
    std::vector<double> g;
    weighted_loss(policy, data, config, reference, full_subset(data), &g);
    return g;
}

Rewards rewards(const PolicyParams& policy, const DpoDataset& data, const DpoPair& pair,
                const DpoConfig& config, const PolicyParams* reference) {
    require_reference(config, reference);
    const auto& ctx = context_of(data, pair);
    Rewards r{config.lambda_scale * log_prob(policy, ctx, pair.chosen),
              config.lambda_scale * log_prob(policy, ctx, pair.rejected)};
    if (config.use_reference) {
        r.chosen -= config.lambda_scale * log_prob(*reference, ctx, pair.chosen);
        r.rejected -= config.lambda_scale * log_prob(*reference, ctx, pair.rejected);
    }
    return r;
}

double reward_accuracy(const PolicyParams& policy, const DpoDataset& data, const DpoConfig& config,
                       const PolicyParams* reference) {
    if (data.size() == 0) {
        throw Error(ErrorCode::InvalidValue, "reward accuracy needs at least one pair");
    }
    std::size_t wins = 0;
    for (const auto& part : data.partitions) {
        for (const auto& p : part) {
            const auto r = rewards(policy, data, p, config, reference);
            if (r.chosen > r.rejected) ++wins;
        }
    }
    return static_cast<double>(wins) / static_cast<double>(data.size());
}

TrainMetrics evaluate(std::size_t step, const PolicyParams& policy, const DpoDataset& data,
                      const DpoConfig& config, const PolicyParams* reference) {
    TrainMetrics m;
    m.step = step;
    m.loss = objective(policy, data, config, reference);
    std::size_t wins = 0;
    double chosen = 0.0;
    double rejected = 0.0;
    for (const auto& part : data.partitions) {
        for (const auto& p : part) {
            const auto r = rewards(policy, data, p, config, reference);
            chosen += r.chosen;
            rejected += r.rejected;
            if (r.chosen > r.rejected) ++wins;
        }
    }
    const auto n = static_cast<double>(data.size());
    m.reward_accuracy = static_cast<double>(wins) / n;
    m.chosen_reward = chosen / n;
    m.rejected_reward = rejected / n;
    m.reward_margin = m.chosen_reward - m.rejected_reward;
    return m;
}

TrainResult train(const DpoDataset& data, const DpoConfig& config, const PolicyParams& init) {
    config.validate();
    data.validate();
    if (init.feature_dim() != data.feature_dim) {
        throw Error(ErrorCode::InvalidValue, "initial policy dimension does not match the dataset");
    }
    require_partitions(data, config);
    if (data.size() == 0) {
        throw Error(ErrorCode::InvalidValue, "training needs at least one pair");
    }
    const PolicyParams reference = init;
    const PolicyParams* ref = config.use_reference ? &reference : nullptr;

    TrainResult result;
    result.params = init;
    result.metrics.push_back(evaluate(0, init, data, config, ref));

    std::mt19937_64 rng(config.seed);
    const auto full = full_subset(data);
    std::vector<double> m1(init.feature_dim(), 0.0);
    std::vector<double> m2(init.feature_dim(), 0.0);
    std::vector<double> g;

    PolicyParams theta = init;
    for (std::size_t step = 1; step <= config.steps; ++step) {
        auto subset = full;
        if (config.batch_size > 0) {
            for (auto& idx : subset) {
                std::shuffle(idx.begin(), idx.end(), rng);
                if (idx.size() > config.batch_size) idx.resize(config.batch_size);
                std::sort(idx.begin(), idx.end());
            }
        }
        weighted_loss(theta, data, config, ref, subset, &g);

        PolicyParams next = theta;
        if (config.optimizer == Optimizer::Adam) {
            constexpr double b1 = 0.9;
            constexpr double b2 = 0.999;
            constexpr double eps = 1e-8;
            const double c1 = 1.0 - std::pow(b1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(b2, static_cast<double>(step));
            for (std::size_t k = 0; k < g.size(); ++k) {
                m1[k] = b1 * m1[k] + (1.0 - b1) * g[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * g[k] * g[k];
                next.theta[k] -= config.learning_rate * (m1[k] / c1) / (std::sqrt(m2[k] / c2) + eps);
            }
        } else {
            for (std::size_t k = 0; k < g.size(); ++k) next.theta[k] -= config.learning_rate * g[k];
        }

        if (!next.finite()) {
            result.diverged = true;
            break;
        }
        const TrainMetrics m = evaluate(step, next, data, config, ref);
        if (!std::isfinite(m.loss)) {
            result.diverged = true;
            break;
        }
        theta = std::move(next);
        result.metrics.push_back(m);
    }
    result.params = std::move(theta);
    return result;
}

std::string metrics_csv(std::span<const TrainMetrics> metrics) {
    std::string out = "step,loss,reward_accuracy,chosen_reward,rejected_reward,reward_margin\n";
    for (const auto& m : metrics) {
        out += fmt::format("{},{:.12g},{:.12g},{:.12g},{:.12g},{:.12g}\n", m.step, m.loss,
                           m.reward_accuracy, m.chosen_reward, m.rejected_reward, m.reward_margin);
    }
    return out;
}

GradCheck check_gradient(const PolicyParams& policy, const DpoDataset& data,
                         const DpoConfig& config, double eps, const PolicyParams* reference) {
    const auto analytic = gradient(policy, data, config, reference);
    GradCheck out;
    double scale = 1e-8;
    PolicyParams probe = policy;
    for (std::size_t k = 0; k < analytic.size(); ++k) {
        const double orig = probe.theta[k];
        probe.theta[k] = orig + eps;
        const double up = objective(probe, data, config, reference);
        probe.theta[k] = orig - eps;
        const double down = objective(probe, data, config, reference);
        probe.theta[k] = orig;
        const double numeric = (up - down) / (2.0 * eps);
        out.max_abs_error = std::max(out.max_abs_error, std::abs(numeric - analytic[k]));
        scale = std::max(scale, std::abs(analytic[k]));
    }
    out.max_rel_error = out.max_abs_error / scale;
    return out;
}

// ---------------------------------------------------------------- synthetic data

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec) {
    if (spec.feature_dim < 1) throw Error(ErrorCode::InvalidValue, "feature_dim must be >= 1");
    if (spec.rejected_per_context < 1) {
        throw Error(ErrorCode::InvalidValue, "rejected_per_context must be >= 1");
    }
    for (std::size_t n : spec.pairs_per_mode) {
        if (n < 1) throw Error(ErrorCode::InvalidValue, "every partition needs at least one pair");
    }
    Draws draws(spec.seed);
    const std::size_t d = spec.feature_dim;

    SyntheticDataset out;
    out.data.feature_dim = d;
    out.planted = PolicyParams(d);
    double norm = 0.0;
    while (norm < 1e-6) {
        for (auto& v : out.planted.theta) v = draws.normal();
        norm = std::sqrt(dot(out.planted.theta, out.planted.theta));
    }
    for (auto& v : out.planted.theta) v /= norm;
    const auto& u = out.planted.theta;

    for (FailureMode mode : kAllModes) {
        std::size_t remaining = spec.pairs_per_mode[index_of(mode)];
        for (std::size_t c = 0; remaining > 0; ++c) {
            const std::size_t rejected = std::min(remaining, spec.rejected_per_context);
            remaining -= rejected;

            FeatureContext ctx;
            ctx.context_id = fmt::format("{}-{:04}", to_string(mode), c);
            for (std::size_t r = 0; r <= rejected; ++r) {
                ctx.responses.push_back(r == 0 ? "chosen" : fmt::format("rejected-{}", r));
                std::vector<double> f(d);
                for (auto& v : f) v = draws.normal();
                ctx.features.push_back(std::move(f));
            }
            // Lift the chosen response along u until it clears every rejected
            // projection by the separability margin.
            double best = -std::numeric_limits<double>::infinity();
            for (std::size_t r = 1; r <= rejected; ++r) best = std::max(best, dot(u, ctx.features[r]));
            const double target = best + spec.separability + 0.5 * draws.uniform();
            const double shift = target - dot(u, ctx.features[0]);
            for (std::size_t k = 0; k < d; ++k) ctx.features[0][k] += shift * u[k];

            const std::size_t ci = out.data.contexts.size();
            for (std::size_t r = 1; r <= rejected; ++r) {
                out.data[mode].push_back(
                    DpoPair{ci, 0, r, fmt::format("{}#{}", ctx.context_id, r)});
            }
            out.data.contexts.push_back(std::move(ctx));
        }
    }
    return out;
}

}  // namespace pasta

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "pasta/dpo_engine.hpp"
#include "pasta/error.hpp"
#include "test_support.hpp"

using namespace pasta;
using pasta::testkit::make_candidate;

namespace {

constexpr double kLn2 = std::numbers::ln2;

/// Naive reference: per-pair loss from explicit log-softmax probabilities.
double oracle_objective(const PolicyParams& p, const DpoDataset& d, const DpoConfig& c,
                        const PolicyParams* ref = nullptr) {
    auto logp = [](const PolicyParams& th, const FeatureContext& ctx, std::size_t r) {
        std::vector<double> z;
        for (const auto& f : ctx.features) {
            double s = ctx.logit_offset;
            for (std::size_t k = 0; k < f.size(); ++k) s += th.theta[k] * f[k];
            z.push_back(s);
        }
        double denom = 0.0;
        for (double v : z) denom += std::exp(v);
        return z[r] - std::log(denom);
    };
    const std::array<double, 3> w{c.alpha, c.beta_w, c.gamma};
    double total = 0.0;
    for (std::size_t m = 0; m < 3; ++m) {
        if (d.partitions[m].empty()) continue;
        double sum = 0.0;
        for (const auto& pr : d.partitions[m]) {
            const auto& ctx = d.contexts[pr.context];
            double margin = logp(p, ctx, pr.chosen) - logp(p, ctx, pr.rejected);
            if (ref) margin -= logp(*ref, ctx, pr.chosen) - logp(*ref, ctx, pr.rejected);
            sum += std::log(1.0 + std::exp(-c.lambda_scale * margin));
        }
        total += w[m] * sum / static_cast<double>(d.partitions[m].size());
    }
    return total;
}

std::vector<double> oracle_fd_gradient(const PolicyParams& p, const DpoDataset& d, const DpoConfig& c,
                                       const PolicyParams* ref = nullptr, double h = 1e-6) {
    std::vector<double> g(p.feature_dim());
    for (std::size_t k = 0; k < g.size(); ++k) {
        PolicyParams up = p;
        PolicyParams dn = p;
        up.theta[k] += h;
        dn.theta[k] -= h;
        g[k] = (oracle_objective(up, d, c, ref) - oracle_objective(dn, d, c, ref)) / (2 * h);
    }
    return g;
}

/// One context per partition, two responses with features e1 and 0.
DpoDataset unit_dataset(std::size_t dim = 2) {
    DpoDataset d;
    d.feature_dim = dim;
    for (FailureMode m : kAllModes) {
        FeatureContext ctx;
        ctx.context_id = std::string(to_string(m));
        ctx.responses = {"good", "bad"};
        std::vector<double> e1(dim, 0.0);
        e1[0] = 1.0;
        ctx.features = {e1, std::vector<double>(dim, 0.0)};
        d[m].push_back(DpoPair{d.contexts.size(), 0, 1, ctx.context_id});
        d.contexts.push_back(std::move(ctx));
    }
    return d;
}

PolicyParams random_params(std::size_t dim, std::uint64_t seed, double scale = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    PolicyParams p(dim);
    for (auto& v : p.theta) v = n(rng);
    return p;
}

}  // namespace

TEST(Scalars, ClosedForms) {
    EXPECT_NEAR(softplus(0.0), kLn2, 1e-15);
    EXPECT_NEAR(pair_loss(0.0, 0.1), kLn2, 1e-15);
    // log sigmoid(1) = -softplus(-1)
    EXPECT_NEAR(-pair_loss(10.0, 0.1), -0.313261687518223, 1e-12);
    EXPECT_NEAR(softplus(700.0), 700.0, 1e-9);
    EXPECT_TRUE(std::isfinite(softplus(1000.0)));
    EXPECT_EQ(softplus(-1000.0), 0.0);
    EXPECT_NEAR(sigmoid(0.0), 0.5, 1e-15);
    EXPECT_NEAR(sigmoid(-800.0), 0.0, 1e-300);
    EXPECT_NEAR(sigmoid(800.0), 1.0, 1e-15);
}

TEST(Objective, ZeroPolicyGivesThreeLn2) {
    const auto d = unit_dataset();
    DpoConfig c;
    EXPECT_NEAR(objective(PolicyParams(2), d, c), 3 * kLn2, 1e-12);
    c.alpha = 2.0;
    c.gamma = 0.0;
    EXPECT_NEAR(objective(PolicyParams(2), d, c), 3 * kLn2, 1e-12);
}

TEST(Gradient, ZeroPolicyClosedForm) {
    const auto d = unit_dataset();
    DpoConfig c;
    c.lambda_scale = 1.0;
    c.beta_w = 0.0;
    c.gamma = 0.0;
    const auto g = gradient(PolicyParams(2), d, c);
    EXPECT_NEAR(g[0], -0.5, 1e-15);
    EXPECT_NEAR(g[1], 0.0, 1e-15);
}

TEST(Objective, MatchesNaiveOracle) {
    auto s = make_synthetic_dataset({{7, 5, 9}, 6, 4, 1.0, 3});
    DpoConfig c;
    c.alpha = 0.7;
    c.beta_w = 1.3;
    c.gamma = 0.4;
    c.lambda_scale = 0.5;
    for (std::uint64_t seed : {1u, 2u, 3u}) {
        const auto p = random_params(6, seed);
        EXPECT_NEAR(objective(p, s.data, c), oracle_objective(p, s.data, c), 1e-10);
    }
}

TEST(Gradient, MatchesFiniteDifferenceOracle) {
    auto s = make_synthetic_dataset({{6, 4, 8}, 5, 9, 1.0, 2});
    DpoConfig c;
    c.alpha = 1.5;
    c.beta_w = 0.5;
    c.lambda_scale = 0.3;
    const auto p = random_params(5, 77);
    const auto g = gradient(p, s.data, c);
    const auto fd = oracle_fd_gradient(p, s.data, c);
    for (std::size_t k = 0; k < g.size(); ++k) EXPECT_NEAR(g[k], fd[k], 1e-7) << k;

    c.use_reference = true;
    const auto ref = random_params(5, 78);
    const auto gr = gradient(p, s.data, c, &ref);
    const auto fdr = oracle_fd_gradient(p, s.data, c, &ref);
    for (std::size_t k = 0; k < gr.size(); ++k) EXPECT_NEAR(gr[k], fdr[k], 1e-7) << k;
}

TEST(Gradient, BuiltInCheckAgrees) {
    auto s = make_synthetic_dataset({{20, 20, 20}, 8, 5, 1.0, 3});
    DpoConfig c;
    for (int i = 0; i < 5; ++i) {
        const auto r = check_gradient(random_params(8, 100 + i), s.data, c);
        EXPECT_LT(r.max_rel_error, 1e-6);
    }
}

// A mirrored dataset (every pair plus its swap) is symmetric, so theta = 0 is
// a stationary point and the reward accuracy sits at exactly one half.
TEST(Rewards, MirroredDatasetIsBalanced) {
    auto d = unit_dataset();
    for (FailureMode m : kAllModes) {
        const auto p = d[m][0];
        d[m].push_back(DpoPair{p.context, p.rejected, p.chosen, p.pair_id + "-swap"});
    }
    DpoConfig c;
    const auto g = gradient(PolicyParams(2), d, c);
    EXPECT_NEAR(g[0], 0.0, 1e-15);
    PolicyParams p(std::vector<double>{1.0, 0.0});
    EXPECT_DOUBLE_EQ(reward_accuracy(p, d, c), 0.5);
    EXPECT_DOUBLE_EQ(reward_accuracy(PolicyParams(2), d, c), 0.0);  // ties never count
}

TEST(Rewards, ScaleLogProbabilities) {
    const auto d = unit_dataset();
    DpoConfig c;
    c.lambda_scale = 0.2;
    const PolicyParams p(std::vector<double>{2.0, 0.0});
    const auto r = rewards(p, d, d[FailureMode::Spatial][0], c);
    const double lp_good = 2.0 - std::log(std::exp(2.0) + 1.0);
    const double lp_bad = -std::log(std::exp(2.0) + 1.0);
    EXPECT_NEAR(r.chosen, 0.2 * lp_good, 1e-12);
    EXPECT_NEAR(r.rejected, 0.2 * lp_bad, 1e-12);
    EXPECT_NEAR(r.margin(), 0.4, 1e-12);

    c.use_reference = true;
    const auto rr = rewards(p, d, d[FailureMode::Spatial][0], c, &p);
    EXPECT_NEAR(rr.chosen, 0.0, 1e-15);
    EXPECT_NEAR(rr.rejected, 0.0, 1e-15);
}

TEST(LogProb, NormalizesAndResolvesNames) {
    auto d = unit_dataset(3);
    auto& ctx = d.contexts[0];
    ctx.logit_offset = 123.0;
    const auto p = random_params(3, 5);
    EXPECT_NEAR(std::exp(log_prob(p, ctx, 0)) + std::exp(log_prob(p, ctx, 1)), 1.0, 1e-12);
    EXPECT_EQ(log_prob(p, ctx, "bad"), log_prob(p, ctx, 1));
    try {
        log_prob(p, ctx, "missing");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::UnknownResponse);
    }
    EXPECT_THROW(log_prob(p, ctx, std::size_t{9}), Error);
}

// Property: a per-context logit offset never changes the objective or gradient.
TEST(Invariance, ContextOffsetCancels) {
    auto s = make_synthetic_dataset({{5, 5, 5}, 4, 8, 1.0, 3});
    DpoConfig c;
    const auto p = random_params(4, 9);
    const double base = objective(p, s.data, c);
    const auto g0 = gradient(p, s.data, c);
    std::mt19937_64 rng(2);
    for (auto& ctx : s.data.contexts) ctx.logit_offset = static_cast<double>(rng() % 1000) - 500.0;
    EXPECT_NEAR(objective(p, s.data, c), base, 1e-12);
    const auto g1 = gradient(p, s.data, c);
    for (std::size_t k = 0; k < g0.size(); ++k) EXPECT_NEAR(g0[k], g1[k], 1e-12);
}

// Property: scaling all partition weights scales the objective linearly.
TEST(Invariance, WeightsScaleLinearly) {
    auto s = make_synthetic_dataset({{5, 6, 7}, 4, 3, 1.0, 3});
    DpoConfig c;
    c.alpha = 0.3;
    c.beta_w = 0.9;
    c.gamma = 1.7;
    DpoConfig c2 = c;
    c2.alpha *= 4;
    c2.beta_w *= 4;
    c2.gamma *= 4;
    const auto p = random_params(4, 10);
    EXPECT_NEAR(objective(p, s.data, c2), 4 * objective(p, s.data, c), 1e-12);
}

// Property: duplicating every pair in a partition leaves its mean unchanged.
TEST(Invariance, PartitionMeansIgnoreDuplication) {
    auto s = make_synthetic_dataset({{5, 6, 7}, 4, 3, 1.0, 3});
    DpoConfig c;
    const auto p = random_params(4, 11);
    const double before = objective(p, s.data, c);
    for (auto& part : s.data.partitions) {
        const auto copy = part;
        part.insert(part.end(), copy.begin(), copy.end());
    }
    EXPECT_NEAR(objective(p, s.data, c), before, 1e-12);
}

TEST(Errors, EmptyPartitionAndMissingReference) {
    auto d = unit_dataset();
    d[FailureMode::Temporal].clear();
    DpoConfig c;
    try {
        objective(PolicyParams(2), d, c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::EmptyPartition);
    }
    c.beta_w = 0.0;
    EXPECT_NO_THROW(objective(PolicyParams(2), d, c));
    c.use_reference = true;
    try {
        gradient(PolicyParams(2), d, c);
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::MissingReference);
    }
}

TEST(Errors, ConfigAndDatasetValidation) {
    DpoConfig c;
    c.lambda_scale = 0.0;
    EXPECT_THROW(c.validate(), Error);
    c = {};
    c.alpha = -1.0;
    EXPECT_THROW(c.validate(), Error);
    auto d = unit_dataset();
    d.contexts[0].features[0].push_back(1.0);
    EXPECT_THROW(d.validate(), Error);
    auto d2 = unit_dataset();
    d2[FailureMode::Spatial][0].rejected = 7;
    EXPECT_THROW(d2.validate(), Error);
    EXPECT_THROW(train(unit_dataset(), DpoConfig{}, PolicyParams(5)), Error);
}

TEST(Params, JsonRoundTrip) {
    const auto p = random_params(6, 12);
    EXPECT_EQ(PolicyParams::from_json(p.to_json()), p);
    EXPECT_THROW(PolicyParams::from_json(R"({"feature_dim":3,"theta":[1,2]})"), Error);
    EXPECT_THROW(PolicyParams::from_json("{}"), Error);
}

TEST(Train, ZeroLearningRateKeepsParams) {
    auto s = make_synthetic_dataset({{10, 10, 10}, 4, 1, 1.0, 3});
    DpoConfig c;
    c.learning_rate = 0.0;
    c.steps = 5;
    const auto init = random_params(4, 3);
    const auto r = train(s.data, c, init);
    EXPECT_EQ(r.params, init);
    ASSERT_EQ(r.metrics.size(), 6u);
    for (const auto& m : r.metrics) EXPECT_DOUBLE_EQ(m.loss, r.metrics[0].loss);
}

TEST(Train, LossDecreasesAndAccuracyRises) {
    auto s = make_synthetic_dataset({{100, 100, 100}, 8, 0, 1.0, 3});
    DpoConfig c;
    const auto r = train(s.data, c, PolicyParams(8));
    EXPECT_FALSE(r.diverged);
    ASSERT_EQ(r.metrics.size(), 501u);
    EXPECT_NEAR(r.metrics[0].loss, 3 * kLn2, 1e-12);
    for (std::size_t i = 1; i < r.metrics.size(); ++i) {
        EXPECT_LE(r.metrics[i].loss, r.metrics[i - 1].loss + 1e-12) << i;
    }
    EXPECT_GE(r.metrics.back().reward_accuracy, 0.99);
    EXPECT_GT(r.metrics.back().reward_margin, 0.0);
}

TEST(Train, DeterministicForSeedIncludingMinibatches) {
    auto s = make_synthetic_dataset({{30, 30, 30}, 6, 4, 1.0, 3});
    DpoConfig c;
    c.steps = 40;
    c.batch_size = 8;
    c.seed = 5;
    const auto a = train(s.data, c, PolicyParams(6));
    const auto b = train(s.data, c, PolicyParams(6));
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(metrics_csv(a.metrics), metrics_csv(b.metrics));
    c.seed = 6;
    EXPECT_NE(train(s.data, c, PolicyParams(6)).params, a.params);
}

TEST(Train, AdamAndReferenceModeConverge) {
    auto s = make_synthetic_dataset({{40, 40, 40}, 6, 8, 1.0, 3});
    DpoConfig c;
    c.optimizer = Optimizer::Adam;
    c.learning_rate = 0.05;
    c.steps = 300;
    c.use_reference = true;
    const auto init = random_params(6, 1, 0.1);
    const auto r = train(s.data, c, init);
    EXPECT_FALSE(r.diverged);
    EXPECT_NEAR(r.metrics[0].loss, 3 * kLn2, 1e-12);  // policy equals reference at step 0
    EXPECT_LT(r.metrics.back().loss, r.metrics[0].loss);
    EXPECT_GE(r.metrics.back().reward_accuracy, 0.95);
}

TEST(Train, MetricsCsvShape) {
    std::vector<TrainMetrics> rows{{0, 1.5, 0.25, -1.0, -2.0, 1.0}};
    const auto csv = metrics_csv(rows);
    EXPECT_EQ(csv, "step,loss,reward_accuracy,chosen_reward,rejected_reward,reward_margin\n0,1.5,0.25,-1,-2,1\n");
}

TEST(Synthetic, PlantedDirectionSeparatesEveryPair) {
    for (std::uint64_t seed : {0u, 1u, 42u}) {
        for (double sep : {0.5, 1.0, 3.0}) {
            const auto s = make_synthetic_dataset({{17, 23, 5}, 7, seed, sep, 3});
            EXPECT_NO_THROW(s.data.validate());
            double norm = 0.0;
            for (double v : s.planted.theta) norm += v * v;
            EXPECT_NEAR(norm, 1.0, 1e-12);
            EXPECT_EQ(s.data[FailureMode::Spatial].size(), 17u);
            EXPECT_EQ(s.data[FailureMode::Temporal].size(), 23u);
            EXPECT_EQ(s.data[FailureMode::Crossframe].size(), 5u);
            for (const auto& part : s.data.partitions) {
                for (const auto& p : part) EXPECT_GE(delta(s.planted, s.data, p), sep - 1e-9);
            }
        }
    }
}

TEST(Synthetic, SeedDeterminesData) {
    const auto a = make_synthetic_dataset({{5, 5, 5}, 4, 9, 1.0, 3});
    const auto b = make_synthetic_dataset({{5, 5, 5}, 4, 9, 1.0, 3});
    const auto c = make_synthetic_dataset({{5, 5, 5}, 4, 10, 1.0, 3});
    EXPECT_EQ(a.planted, b.planted);
    EXPECT_EQ(a.data.contexts[0].features, b.data.contexts[0].features);
    EXPECT_NE(a.planted, c.planted);
    EXPECT_THROW(make_synthetic_dataset({{0, 5, 5}, 4, 0, 1.0, 3}), Error);
}

TEST(Featurize, OneContextPerQueryWithUnitFeatures) {
    std::vector<PreferenceRecord> recs;
    for (std::size_t q = 0; q < 3; ++q) {
        for (std::size_t k = 0; k < 3; ++k) recs.push_back({make_candidate("v", q, kAllModes[q], k), ""});
    }
    const auto d = featurize(partition(recs), 16);
    EXPECT_NO_THROW(d.validate());
    EXPECT_EQ(d.contexts.size(), 3u);
    EXPECT_EQ(d.size(), 9u);
    for (const auto& ctx : d.contexts) {
        EXPECT_EQ(ctx.responses.size(), 4u);  // shared preferred + three adversaries
        for (const auto& f : ctx.features) {
            double n = 0.0;
            for (double v : f) n += v * v;
            EXPECT_NEAR(n, 1.0, 1e-12);
        }
    }
    for (const auto& part : d.partitions) {
        for (const auto& p : part) EXPECT_EQ(p.chosen, 0u);
    }
    EXPECT_THROW(featurize(partition(recs), 0), Error);
}

TEST(Featurize, CaseAndPunctuationInsensitive) {
    std::vector<PreferenceRecord> recs{
        {make_candidate("v", 0, FailureMode::Spatial, 0, "The Cup, left!", "cup left the"), ""}};
    const auto d = featurize(partition(recs), 32);
    EXPECT_EQ(d.contexts[0].features[0], d.contexts[0].features[1]);
}

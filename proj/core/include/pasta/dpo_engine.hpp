// SPDX-License-Identifier: Apache-2.0
//
// Weighted three-partition preference optimization over a linear-softmax
// policy: log p(r | c) = theta . phi(c, r) + offset(c) - logsumexp over the
// responses of context c.
#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pasta/core_model.hpp"

namespace pasta {

struct PolicyParams {
    std::vector<double> theta;

    explicit PolicyParams(std::size_t dim = 0) : theta(dim, 0.0) {}
    explicit PolicyParams(std::vector<double> values) : theta(std::move(values)) {}

    std::size_t feature_dim() const noexcept { return theta.size(); }
    bool finite() const noexcept;

    std::string to_json() const;
    static PolicyParams from_json(std::string_view text);

    friend bool operator==(const PolicyParams&, const PolicyParams&) = default;
};

struct FeatureContext {
    std::string context_id;
    std::vector<std::string> responses;
    /// features[i] belongs to responses[i]; every vector has the policy dimension.
    std::vector<std::vector<double>> features;
    /// Added to every logit of this context. Cancels out of every pairwise quantity.
    double logit_offset = 0.0;

    /// Throws Error(UnknownResponse).
    std::size_t index_of(std::string_view response) const;
};

struct DpoPair {
    std::size_t context = 0;
    std::size_t chosen = 0;
    std::size_t rejected = 0;
    std::string pair_id;
};

/// Contexts plus the pairs of each partition, indexed by FailureMode.
struct DpoDataset {
    std::size_t feature_dim = 0;
    std::vector<FeatureContext> contexts;
    std::array<std::vector<DpoPair>, 3> partitions;

    std::vector<DpoPair>& operator[](FailureMode m) { return partitions[index_of(m)]; }
    const std::vector<DpoPair>& operator[](FailureMode m) const {
        return partitions[index_of(m)];
    }
    std::size_t size() const noexcept;
    /// Throws Error(InvalidValue) on dimension mismatches, bad indices or a
    /// context with fewer than two responses.
    void validate() const;
};

enum class Optimizer { GradientDescent, Adam };

struct DpoConfig {
    double lambda_scale = 0.1;
    /// Partition weights for spatial, temporal and crossframe.
    double alpha = 1.0;
    double beta_w = 1.0;
    double gamma = 1.0;
    double learning_rate = 1.0;
    std::size_t steps = 500;
    std::uint64_t seed = 0;
    bool use_reference = false;
    Optimizer optimizer = Optimizer::GradientDescent;
    /// Pairs drawn per partition each step; 0 means full batch.
    std::size_t batch_size = 0;

    double weight(FailureMode m) const noexcept;
    /// Throws Error(InvalidValue).
    void validate() const;
};

double sigmoid(double x) noexcept;
/// log(1 + e^x) without overflow.
double softplus(double x) noexcept;

double logit(const PolicyParams& policy, const FeatureContext& context, std::size_t response);
double log_prob(const PolicyParams& policy, const FeatureContext& context, std::size_t response);
/// Throws Error(UnknownResponse) when `response` is not in the context.
double log_prob(const PolicyParams& policy, const FeatureContext& context,
                std::string_view response);

/// log p(chosen) - log p(rejected); the context normalizer cancels.
double delta(const PolicyParams& policy, const DpoDataset& data, const DpoPair& pair);

/// softplus(-lambda * delta)
double pair_loss(double delta_value, double lambda_scale) noexcept;

/// Weighted sum of per-partition mean pair losses. With use_reference the
/// margin is delta - delta_ref. Throws Error(EmptyPartition) for a nonzero
/// weight on an empty partition and Error(MissingReference) when a reference
/// is required but absent.
double objective(const PolicyParams& policy, const DpoDataset& data, const DpoConfig& config,
                 const PolicyParams* reference = nullptr);
std::vector<double> gradient(const PolicyParams& policy, const DpoDataset& data,
                             const DpoConfig& config, const PolicyParams* reference = nullptr);

struct Rewards {
    double chosen = 0.0;
    double rejected = 0.0;
    double margin() const noexcept { return chosen - rejected; }
};
Rewards rewards(const PolicyParams& policy, const DpoDataset& data, const DpoPair& pair,
                const DpoConfig& config, const PolicyParams* reference = nullptr);

/// Fraction of pairs (all partitions) whose chosen reward strictly exceeds the rejected one.
double reward_accuracy(const PolicyParams& policy, const DpoDataset& data, const DpoConfig& config,
                       const PolicyParams* reference = nullptr);

struct TrainMetrics {
    std::size_t step = 0;
    double loss = 0.0;
    double reward_accuracy = 0.0;
    double chosen_reward = 0.0;
    double rejected_reward = 0.0;
    double reward_margin = 0.0;
};

TrainMetrics evaluate(std::size_t step, const PolicyParams& policy, const DpoDataset& data,
                      const DpoConfig& config, const PolicyParams* reference = nullptr);

struct TrainResult {
    PolicyParams params;
    /// Row 0 is the initial policy, then one row per completed step.
    std::vector<TrainMetrics> metrics;
    bool diverged = false;
};

/// Deterministic given config.seed. When use_reference is set the frozen
/// reference is `init`. Stops at the last finite state if the loss diverges.
TrainResult train(const DpoDataset& data, const DpoConfig& config, const PolicyParams& init);

std::string metrics_csv(std::span<const TrainMetrics> metrics);

struct GradCheck {
    double max_rel_error = 0.0;
    double max_abs_error = 0.0;
};
/// Central differences; relative error is max|analytic - numeric| over
/// max(max|analytic|, 1e-8).
GradCheck check_gradient(const PolicyParams& policy, const DpoDataset& data,
                         const DpoConfig& config, double eps = 1e-5,
                         const PolicyParams* reference = nullptr);

struct SyntheticSpec {
    std::array<std::size_t, 3> pairs_per_mode{100, 100, 100};
    std::size_t feature_dim = 8;
    std::uint64_t seed = 0;
    double separability = 1.0;
    /// Rejected responses per context (each context holds one chosen response).
    std::size_t rejected_per_context = 3;
};

struct SyntheticDataset {
    DpoDataset data;
    /// Unit-norm direction with delta >= separability on every pair.
    PolicyParams planted;
};

SyntheticDataset make_synthetic_dataset(const SyntheticSpec& spec);

/// Hashed bag-of-words features (unit L2 norm) for each response text; one
/// context per (video, query) holding the preferred response and its adversaries.
DpoDataset featurize(const PartitionedDataset& dataset, std::size_t feature_dim);

}  // namespace pasta

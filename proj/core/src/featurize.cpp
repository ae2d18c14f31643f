// SPDX-License-Identifier: Apache-2.0
#include <cctype>
#include <cmath>
#include <map>

#include "pasta/dpo_engine.hpp"
#include "pasta/error.hpp"
#include "pasta/hashing.hpp"

namespace pasta {

namespace {

std::vector<double> bag_of_words(std::string_view text, std::size_t dim) {
    std::vector<double> f(dim, 0.0);
    std::string word;
    auto flush = [&] {
        if (word.empty()) return;
        const std::uint64_t h = hash64(word);
        f[h % dim] += (h >> 63) != 0 ? -1.0 : 1.0;
        word.clear();
    };
    for (char c : text) {
        if (std::isalnum(static_cast<unsigned char>(c))) {
            word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        } else {
            flush();
        }
    }
    flush();
    double norm = 0.0;
    for (double v : f) norm += v * v;
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (double& v : f) v /= norm;
    }
    return f;
}

std::size_t add_response(FeatureContext& ctx, const std::string& text, std::size_t dim) {
    for (std::size_t i = 0; i < ctx.responses.size(); ++i) {
        if (ctx.responses[i] == text) return i;
    }
    ctx.responses.push_back(text);
    ctx.features.push_back(bag_of_words(text, dim));
    return ctx.responses.size() - 1;
}

}  // namespace

DpoDataset featurize(const PartitionedDataset& dataset, std::size_t feature_dim) {
    if (feature_dim < 1) throw Error(ErrorCode::InvalidValue, "feature_dim must be >= 1");
    DpoDataset out;
    out.feature_dim = feature_dim;
    std::map<std::pair<std::string, std::size_t>, std::size_t> context_index;
    for (FailureMode mode : kAllModes) {
        for (const auto& rec : dataset[mode]) {
            const auto& pair = rec.pair;
            const auto key = std::make_pair(pair.video.video_id, pair.query.query_index);
            auto [it, inserted] = context_index.try_emplace(key, out.contexts.size());
            if (inserted) {
                FeatureContext ctx;
                ctx.context_id = pair.video.video_id + "#" + std::to_string(pair.query.query_index);
                out.contexts.push_back(std::move(ctx));
            }
            FeatureContext& ctx = out.contexts[it->second];
            const std::size_t chosen = add_response(ctx, pair.preferred.text(), feature_dim);
            const std::size_t rejected = add_response(ctx, pair.adversarial.text(), feature_dim);
            out[mode].push_back(DpoPair{it->second, chosen, rejected, rec.pair_id()});
        }
    }
    return out;
}

}  // namespace pasta

// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <json.hpp>
#include <map>
#include <random>

#include "pasta/error.hpp"
#include "pasta/prompt_protocol.hpp"
#include "pasta/verifier.hpp"
#include "test_support.hpp"

using namespace pasta;
using pasta::testkit::make_candidate;

namespace {

std::vector<CandidatePair> grid(std::size_t queries = 4) {
    std::vector<CandidatePair> out;
    for (std::size_t q = 0; q < queries; ++q) {
        for (std::size_t k = 0; k < 3; ++k) out.push_back(make_candidate("vid", q, kAllModes[q % 3], k));
    }
    return out;
}

/// Judge that answers each filter prompt from a table keyed by adversary text.
struct ScriptedJudge {
    MockBackend backend{BackendConfig::mock(0)};
    std::map<std::string, std::string> replies;  // adversary text -> judge output
    std::string fallback = "Looks fine.\nRETAIN";

    ScriptedJudge() {
        backend.set_responder([this](const ChatRequest& r) -> std::optional<std::string> {
            for (const auto& [adv, reply] : replies) {
                if (r.user_text.find("1. " + adv) != std::string::npos) return reply;
            }
            return fallback;
        });
    }
};

ResponseRecord fresh_adversary(const std::string& text) {
    return ResponseRecord(text, testkit::sparse_spec(), ResponseRole::Adversarial, "mock:seed=0");
}

std::size_t total_discarded(const FilterResult& r) {
    std::size_t n = 0;
    for (const auto& [_, c] : r.stats.discarded_by_reason) n += c;
    return n;
}

}  // namespace

TEST(Verdict, ParsesFinalLine) {
    EXPECT_TRUE(parse_verdict("reasoning\nRETAIN").retain);
    EXPECT_TRUE(parse_verdict("RETAIN\n\n  ").retain);
    const auto d = parse_verdict("bad\nDISCARD:NO_CLEAR_CONTRADICTION");
    EXPECT_FALSE(d.retain);
    EXPECT_EQ(d.reason, DiscardReason::NoClearContradiction);
    EXPECT_EQ(d.judge_raw, "bad\nDISCARD:NO_CLEAR_CONTRADICTION");
    for (const char* junk : {"", "retain", "RETAIN please", "DISCARD:", "DISCARD:MADE_UP", "RETAIN\nmore"}) {
        const auto v = parse_verdict(junk);
        EXPECT_FALSE(v.retain) << junk;
        EXPECT_EQ(v.reason, DiscardReason::JudgeUnparseable) << junk;
    }
}

TEST(Verdict, ReasonNamesRoundTrip) {
    for (DiscardReason r : kAllDiscardReasons) EXPECT_EQ(parse_discard_reason(to_string(r)), r);
    EXPECT_FALSE(parse_discard_reason("NOPE").has_value());
    EXPECT_FALSE(adversary_side(DiscardReason::PreferredInaccurate));
    EXPECT_FALSE(adversary_side(DiscardReason::JudgeUnparseable));
    EXPECT_TRUE(adversary_side(DiscardReason::ModeMistargeted));
}

TEST(FilterRequest, FillsEverySlot) {
    const auto prompts = testkit::prompts();
    const auto pair = make_candidate("v", 0, FailureMode::Temporal, 1);
    const auto r = filter_request(prompts, pair);
    EXPECT_NE(r.user_text.find(pair.query.query_text), std::string::npos);
    EXPECT_NE(r.user_text.find(pair.preferred.text()), std::string::npos);
    EXPECT_NE(r.user_text.find("1. " + pair.adversarial.text()), std::string::npos);
    EXPECT_NE(r.user_text.find("Temporal Incoherence"), std::string::npos);
    EXPECT_EQ(r.temperature, 0.0);
    EXPECT_TRUE(r.frames.empty());
}

TEST(MockJudge, DiscardsNearCopies) {
    const auto prompts = testkit::prompts();
    MockBackend judge(BackendConfig::mock(0));
    const auto copy = make_candidate("v", 0, FailureMode::Spatial, 0, "The red cup sits left of the lamp.",
                                     "The red cup sits left of the lamp!");
    const auto distinct = make_candidate("v", 0, FailureMode::Spatial, 1, "The red cup sits left of the lamp.",
                                         "Everything is fully visible and nothing overlaps.");
    const auto v1 = verify_pair(copy, judge, prompts);
    EXPECT_FALSE(v1.retain);
    EXPECT_EQ(v1.reason, DiscardReason::AdversaryTooSimilar);
    EXPECT_TRUE(verify_pair(distinct, judge, prompts).retain);
}

TEST(Filter, BackendFailureIsUnparseable) {
    const auto prompts = testkit::prompts();
    auto cfg = BackendConfig::mock(0);
    cfg.max_retries = 0;
    MockBackend judge(cfg);
    const auto pair = make_candidate("v", 0, FailureMode::Spatial, 0);
    judge.poison(prompt_key(filter_request(prompts, pair)));
    const auto v = verify_pair(pair, judge, prompts);
    EXPECT_FALSE(v.retain);
    EXPECT_EQ(v.reason, DiscardReason::JudgeUnparseable);
}

TEST(Filter, EmptyInputIsAnError) {
    const auto prompts = testkit::prompts();
    MockBackend judge;
    EXPECT_THROW(filter_dataset({}, judge, prompts), Error);
}

TEST(Filter, PreferredInaccurateDiscardsWholeGroup) {
    const auto prompts = testkit::prompts();
    const auto pairs = grid();
    ScriptedJudge judge;
    judge.replies[pairs[4].adversarial.text()] = "wrong\nDISCARD:PREFERRED_INACCURATE";  // query 1, k=1
    const auto r = filter_dataset(pairs, judge.backend, prompts);
    EXPECT_EQ(r.stats.retained, 9u);
    EXPECT_EQ(r.stats.discarded_by_reason.at("PREFERRED_INACCURATE"), 3u);
    for (const auto& rej : r.rejects) EXPECT_EQ(rej.pair.query.query_index, 1u);
    for (const auto& rec : r.retained) EXPECT_NE(rec.pair.query.query_index, 1u);
}

TEST(Filter, OutputKeepsInputOrderAndNotes) {
    const auto prompts = testkit::prompts();
    const auto pairs = grid();
    ScriptedJudge judge;
    judge.fallback = "The adversary contradicts the frames.\nRETAIN";
    judge.replies[pairs[2].adversarial.text()] = "DISCARD:NO_CLEAR_CONTRADICTION";
    const auto r = filter_dataset(pairs, judge.backend, prompts, FilterPolicy{0, {}});
    ASSERT_EQ(r.retained.size(), 11u);
    EXPECT_EQ(r.retained[0].pair, pairs[0]);
    EXPECT_EQ(r.retained[2].pair, pairs[3]);
    EXPECT_EQ(r.retained[0].verifier_note, "The adversary contradicts the frames.");
    const auto j = nlohmann::json::parse(serialize(r.rejects[0]));
    EXPECT_EQ(j["verdict"], "discard");
    EXPECT_EQ(j["reason"], "NO_CLEAR_CONTRADICTION");
    EXPECT_EQ(j["regenerations"], 0);
}

TEST(Filter, RegenerationRescuesAdversarySideDiscards) {
    const auto prompts = testkit::prompts();
    const auto pairs = grid(1);
    ScriptedJudge judge;
    judge.replies[pairs[0].adversarial.text()] = "DISCARD:ADVERSARY_TOO_SIMILAR";
    judge.replies[pairs[1].adversarial.text()] = "DISCARD:JUDGE_SAID_WHAT";  // unparseable: never regenerated
    std::vector<std::size_t> calls;
    FilterPolicy policy;
    policy.max_regen = 1;
    policy.regenerate = [&](const CandidatePair& p, std::size_t attempt) -> std::optional<ResponseRecord> {
        calls.push_back(p.adversary_index);
        EXPECT_EQ(attempt, 1u);
        return fresh_adversary("A completely new contradiction #" + std::to_string(p.adversary_index));
    };
    const auto r = filter_dataset(pairs, judge.backend, prompts, policy);
    EXPECT_EQ(calls, (std::vector<std::size_t>{0}));
    EXPECT_EQ(r.stats.regenerations, 1u);
    EXPECT_EQ(r.stats.retained, 2u);
    EXPECT_EQ(r.retained[0].pair.adversarial.text(), "A completely new contradiction #0");
    EXPECT_EQ(r.stats.discarded_by_reason.at("JUDGE_UNPARSEABLE"), 1u);
}

TEST(Filter, RegenerationIsBounded) {
    const auto prompts = testkit::prompts();
    const auto pairs = grid(1);
    ScriptedJudge judge;
    judge.fallback = "DISCARD:MODE_MISTARGETED";
    for (std::size_t bound : {0u, 1u, 3u}) {
        std::size_t calls = 0;
        FilterPolicy policy;
        policy.max_regen = bound;
        policy.regenerate = [&](const CandidatePair& p, std::size_t attempt) -> std::optional<ResponseRecord> {
            ++calls;
            return fresh_adversary("retry " + std::to_string(p.adversary_index) + "/" + std::to_string(attempt));
        };
        const auto r = filter_dataset(pairs, judge.backend, prompts, policy);
        EXPECT_EQ(calls, 3 * bound);
        EXPECT_EQ(r.stats.retained, 0u);
        for (const auto& rej : r.rejects) EXPECT_EQ(rej.regenerations, bound);
    }
}

// Property: for random scripted verdicts, every candidate is either retained or
// discarded exactly once and the stats agree with the lists.
TEST(Filter, PropertyConservation) {
    const auto prompts = testkit::prompts();
    const std::array<std::string, 7> outputs = {
        "RETAIN", "RETAIN", "RETAIN", "DISCARD:ADVERSARY_TOO_SIMILAR", "DISCARD:NO_CLEAR_CONTRADICTION",
        "DISCARD:PREFERRED_INACCURATE", "gibberish"};
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 40; ++trial) {
        const auto pairs = grid(2 + rng() % 6);
        ScriptedJudge judge;
        for (const auto& p : pairs) judge.replies[p.adversarial.text()] = outputs[rng() % outputs.size()];
        const auto r = filter_dataset(pairs, judge.backend, prompts, FilterPolicy{0, {}});
        EXPECT_EQ(r.stats.candidates, pairs.size());
        EXPECT_EQ(r.retained.size() + r.rejects.size(), pairs.size());
        EXPECT_EQ(r.stats.retained, r.retained.size());
        EXPECT_EQ(total_discarded(r), r.rejects.size());
        EXPECT_EQ(r.stats.discarded(), r.rejects.size());
        std::set<std::string> ids;
        for (const auto& x : r.retained) ids.insert(x.pair_id());
        for (const auto& x : r.rejects) ids.insert(x.pair.pair_id());
        EXPECT_EQ(ids.size(), pairs.size());
        // No retained pair shares a group with a preferred-inaccurate verdict.
        for (const auto& rec : r.retained) {
            for (const auto& rej : r.rejects) {
                if (rej.verdict.reason == DiscardReason::PreferredInaccurate) {
                    EXPECT_NE(rec.pair.query.query_index, rej.pair.query.query_index);
                }
            }
        }
    }
}

// Property: re-filtering the retained set with the same judge keeps everything.
TEST(Filter, PropertyIdempotent) {
    const auto prompts = testkit::prompts();
    const auto pairs = grid(6);
    ScriptedJudge judge;
    judge.replies[pairs[1].adversarial.text()] = "DISCARD:NO_CLEAR_CONTRADICTION";
    judge.replies[pairs[7].adversarial.text()] = "DISCARD:PREFERRED_INACCURATE";
    const auto first = filter_dataset(pairs, judge.backend, prompts, FilterPolicy{0, {}});
    std::vector<CandidatePair> kept;
    for (const auto& r : first.retained) kept.push_back(r.pair);
    const auto second = filter_dataset(kept, judge.backend, prompts, FilterPolicy{0, {}});
    EXPECT_EQ(second.retained.size(), kept.size());
}

// Property: a judge that discards a superset of pairs never retains more.
TEST(Filter, PropertyStricterJudgeRetainsNoMore) {
    const auto prompts = testkit::prompts();
    std::mt19937_64 rng(19);
    for (int trial = 0; trial < 20; ++trial) {
        const auto pairs = grid(5);
        ScriptedJudge lenient;
        ScriptedJudge strict;
        for (const auto& p : pairs) {
            const auto roll = rng() % 10;
            if (roll < 2) {
                lenient.replies[p.adversarial.text()] = "DISCARD:NO_CLEAR_CONTRADICTION";
                strict.replies[p.adversarial.text()] = "DISCARD:NO_CLEAR_CONTRADICTION";
            } else if (roll < 5) {
                strict.replies[p.adversarial.text()] = "DISCARD:MODE_MISTARGETED";
            }
        }
        const auto a = filter_dataset(pairs, lenient.backend, prompts, FilterPolicy{0, {}});
        const auto b = filter_dataset(pairs, strict.backend, prompts, FilterPolicy{0, {}});
        EXPECT_LE(b.retained.size(), a.retained.size());
    }
}

TEST(Stats, JsonListsEveryReason) {
    RetentionStats s;
    s.candidates = 4;
    s.retained = 3;
    s.discarded_by_reason["MODE_MISTARGETED"] = 1;
    const auto j = nlohmann::json::parse(s.to_json());
    EXPECT_EQ(j["discarded_by_reason"].size(), 5u);
    EXPECT_EQ(j["discarded_by_reason"]["MODE_MISTARGETED"], 1);
    EXPECT_DOUBLE_EQ(j["retention_rate"].get<double>(), 0.75);
    EXPECT_EQ(RetentionStats{}.retention_rate(), 0.0);
}

TEST(Audit, ParsesJudgment) {
    const auto a = parse_audit("Judgment: Yes\nFailure Mode: Spatial Misalignment\nReasoning: ok");
    EXPECT_TRUE(a.parsed);
    EXPECT_TRUE(a.yes);
    EXPECT_EQ(a.named_mode, FailureMode::Spatial);
    const auto b = parse_audit("Judgment: [No]\nFailure Mode: [Temporal Incoherence]");
    EXPECT_TRUE(b.parsed);
    EXPECT_FALSE(b.yes);
    EXPECT_EQ(b.named_mode, FailureMode::Temporal);
    EXPECT_FALSE(parse_audit("Maybe?").parsed);
    EXPECT_FALSE(parse_audit("Judgment: perhaps").parsed);
}

TEST(Audit, RequestHidesIntendedMode) {
    const auto prompts = testkit::prompts();
    const PreferenceRecord rec{make_candidate("v", 0, FailureMode::Crossframe, 0), ""};
    const auto r = audit_request(prompts, rec);
    EXPECT_NE(r.user_text.find(kNeutralClaim), std::string::npos);
    EXPECT_NE(r.user_text.find(rec.pair.adversarial.text()), std::string::npos);
}

TEST(Audit, CountsYesWithMatchingModeOnly) {
    const auto prompts = testkit::prompts();
    std::vector<PreferenceRecord> sample;
    for (std::size_t q = 0; q < 4; ++q) sample.push_back({make_candidate("v", q, FailureMode::Spatial, 0), ""});
    for (std::size_t q = 4; q < 6; ++q) sample.push_back({make_candidate("v", q, FailureMode::Temporal, 0), ""});

    MockBackend judge;
    judge.set_responder([&](const ChatRequest& r) -> std::optional<std::string> {
        if (r.user_text.find(sample[0].pair.adversarial.text()) != std::string::npos) {
            return "Judgment: Yes\nFailure Mode: Spatial Misalignment";
        }
        if (r.user_text.find(sample[1].pair.adversarial.text()) != std::string::npos) {
            return "Judgment: Yes\nFailure Mode: Temporal Incoherence";  // wrong mode
        }
        if (r.user_text.find(sample[2].pair.adversarial.text()) != std::string::npos) {
            return "no idea";  // unparseable
        }
        if (r.user_text.find(sample[3].pair.adversarial.text()) != std::string::npos) {
            return "Judgment: No\nFailure Mode: Spatial Misalignment";
        }
        return "Judgment: Yes\nFailure Mode: Temporal Incoherence";
    });
    const auto report = targeting_accuracy(sample, judge, prompts);
    ASSERT_TRUE(report.by_mode[0].has_value());
    EXPECT_EQ(report.by_mode[0]->total, 4u);
    EXPECT_EQ(report.by_mode[0]->yes, 1u);
    EXPECT_EQ(report.by_mode[0]->unparseable, 1u);
    EXPECT_DOUBLE_EQ(report.by_mode[1]->fraction(), 1.0);
    EXPECT_FALSE(report.by_mode[2].has_value());
    EXPECT_DOUBLE_EQ(report.average(), (0.25 + 1.0) / 2.0);
    const auto text = report.to_text();
    EXPECT_NE(text.find("25.0"), std::string::npos);
    EXPECT_NE(text.find("100.0"), std::string::npos);
}

TEST(Audit, MockJudgeTargetsGeneratedAdversaries) {
    const auto prompts = testkit::prompts();
    MockBackend judge;
    std::vector<PreferenceRecord> sample{
        {make_candidate("v", 0, FailureMode::Spatial, 0, "", "The cup is fully visible, nothing overlaps."), ""},
        {make_candidate("v", 1, FailureMode::Temporal, 0, "", "Everything happens all at once."), ""},
    };
    const auto report = targeting_accuracy(sample, judge, prompts);
    EXPECT_DOUBLE_EQ(report.by_mode[0]->fraction(), 1.0);
    EXPECT_DOUBLE_EQ(report.by_mode[1]->fraction(), 1.0);
}

// Copyright (C) 2026 OPG Authors
// SPDX-License-Identifier: Apache-2.0
//

#include <gtest/gtest.h>

#include <cmath>

#include "support/fixtures.hpp"
#include "opg/eval.hpp"

using opg::Box;
using opg::Detection;

namespace {

const Box kGt = Box::make(0, 0, 10, 10);

std::map<std::string, std::vector<Box>> one_gt() { return {{"a", {kGt}}}; }

}  // namespace

TEST(AveragePrecision, SinglePerfectDetection) {
    const std::vector<Detection> d{{"a", 0, kGt, 0.9}};
    EXPECT_DOUBLE_EQ(*opg::average_precision(d, one_gt()), 1.0);
}

TEST(AveragePrecision, FalsePositiveRankedFirstHalvesAp) {
    const std::vector<Detection> d{{"a", 0, Box::make(50, 50, 60, 60), 0.9}, {"a", 0, kGt, 0.5}};
    EXPECT_DOUBLE_EQ(*opg::average_precision(d, one_gt()), 0.5);
}

TEST(AveragePrecision, DuplicateIsFalsePositive) {
    const std::vector<Detection> d{{"a", 0, kGt, 0.9}, {"a", 0, kGt, 0.8}};
    EXPECT_DOUBLE_EQ(*opg::average_precision(d, one_gt()), 1.0);
    const std::map<std::string, std::vector<Box>> two{{"a", {kGt, Box::make(50, 50, 60, 60)}}};
    EXPECT_DOUBLE_EQ(*opg::average_precision(d, two), 0.5);  // recall stalls at 1/2
}

TEST(AveragePrecision, ThresholdIsInclusive) {
    const std::vector<Detection> d{{"a", 0, Box::make(0, 0, 5, 10), 0.9}};  // IoU exactly 0.5
    EXPECT_DOUBLE_EQ(*opg::average_precision(d, one_gt()), 1.0);
}

TEST(AveragePrecision, UndefinedWithoutGroundTruth) {
    const std::vector<Detection> d{{"a", 0, kGt, 0.9}};
    EXPECT_FALSE(opg::average_precision(d, {{"a", {}}}).has_value());
    EXPECT_FALSE(opg::average_precision(d, {}).has_value());
}

TEST(AveragePrecision, NoDetectionsIsZero) {
    EXPECT_DOUBLE_EQ(*opg::average_precision(std::vector<Detection>{}, one_gt()), 0.0);
}

TEST(AveragePrecision, Voc07HandValue) {
    // Hits at ranks 1 and 3 of two GTs: P = 1, 1/2, 2/3; R = 1/2, 1/2, 1.
    const std::map<std::string, std::vector<Box>> gt{{"a", {kGt}}, {"b", {kGt}}};
    const std::vector<Detection> d{{"a", 0, kGt, 0.9}, {"a", 0, Box::make(50, 50, 60, 60), 0.8}, {"b", 0, kGt, 0.7}};
    EXPECT_NEAR(*opg::average_precision(d, gt, 0.5, opg::ApMode::AllPoints), 0.5 + 0.5 * 2.0 / 3.0, 1e-15);
    EXPECT_NEAR(*opg::average_precision(d, gt, 0.5, opg::ApMode::Voc07), (6 * 1.0 + 5 * 2.0 / 3.0) / 11.0, 1e-15);
}

TEST(AveragePrecision, RankingOnly) {
    auto rng = opg::make_rng(1, "monotone");
    for (int t = 0; t < 100; ++t) {
        auto e = fixtures::random_eval_case(rng);
        std::map<std::string, std::vector<Box>> gt;
        for (const auto& img : e.gt)
            for (const auto& o : img.objects) gt[img.image_id].push_back(o.box);
        const auto a = opg::average_precision(e.dets, gt);
        for (auto& d : e.dets) d.confidence = std::exp(3.0 * d.confidence) - 7.0;
        EXPECT_DOUBLE_EQ(*a, *opg::average_precision(e.dets, gt));
    }
}

TEST(AveragePrecision, LowFalsePositiveNeverHelps) {
    auto rng = opg::make_rng(2, "lowfp");
    for (int t = 0; t < 100; ++t) {
        auto e = fixtures::random_eval_case(rng);
        std::map<std::string, std::vector<Box>> gt;
        for (const auto& img : e.gt)
            for (const auto& o : img.objects) gt[img.image_id].push_back(o.box);
        const auto a = *opg::average_precision(e.dets, gt);
        e.dets.push_back({e.gt.front().image_id, 0, Box::make(200, 200, 210, 210), -1.0});
        EXPECT_LE(*opg::average_precision(e.dets, gt), a + 1e-15);
    }
}

TEST(AveragePrecision, MatchesExhaustiveOracle) {
    auto rng = opg::make_rng(3, "oracle");
    for (int t = 0; t < 300; ++t) {
        const auto e = fixtures::random_eval_case(rng);
        EXPECT_EQ(fixtures::compare_eval(e, opg::ApMode::AllPoints), "") << "case " << t;
        EXPECT_EQ(fixtures::compare_eval(e, opg::ApMode::Voc07), "") << "case " << t;
    }
}

TEST(Corloc, CountingExamples) {
    const std::vector<opg::GroundTruthImage> gt{{"a", {{0, kGt}}}, {"b", {{0, kGt}}}, {"c", {{0, kGt}}},
                                                {"d", {{1, kGt}}}};
    std::vector<opg::CorlocCandidate> cands{{"a", 0, kGt}, {"b", 0, kGt}, {"c", 0, kGt}, {"d", 1, kGt}};
    EXPECT_DOUBLE_EQ(opg::corloc(cands, gt), 1.0);
    cands[3].box = Box::make(50, 50, 60, 60);
    EXPECT_DOUBLE_EQ(opg::corloc(cands, gt), 0.75);
    cands[2].box.reset();
    EXPECT_DOUBLE_EQ(opg::corloc(cands, gt), 0.5);
    for (auto& c : cands) c.box = Box::make(50, 50, 60, 60);
    EXPECT_DOUBLE_EQ(opg::corloc(cands, gt), 0.0);
}

TEST(Corloc, TopCandidatePerPresentClass) {
    const std::vector<opg::GroundTruthImage> gt{{"a", {{0, kGt}, {0, Box::make(20, 20, 30, 30)}, {2, kGt}}}};
    const std::vector<Detection> d{{"a", 0, kGt, 0.4}, {"a", 0, Box::make(50, 50, 60, 60), 0.6}, {"a", 1, kGt, 0.9}};
    const auto c = opg::top_candidates(d, gt);
    ASSERT_EQ(c.size(), 2u);  // classes 0 and 2
    EXPECT_EQ(c[0].class_id, 0);
    EXPECT_EQ(*c[0].box, Box::make(50, 50, 60, 60));
    EXPECT_EQ(c[1].class_id, 2);
    EXPECT_FALSE(c[1].box.has_value());
}

TEST(Evaluate, EmptyAndPerfect) {
    const std::vector<opg::GroundTruthImage> gt{{"a", {{0, kGt}}}, {"b", {{1, Box::make(5, 5, 25, 25)}}}};
    auto rep = opg::evaluate({}, gt, 2);
    EXPECT_DOUBLE_EQ(rep.map, 0.0);
    EXPECT_DOUBLE_EQ(rep.corloc, 0.0);

    const std::vector<Detection> perfect{{"a", 0, kGt, 0.9}, {"b", 1, Box::make(5, 5, 25, 25), 0.8}};
    rep = opg::evaluate(perfect, gt, 3);
    EXPECT_DOUBLE_EQ(rep.map, 1.0);
    EXPECT_DOUBLE_EQ(rep.corloc, 1.0);
    EXPECT_EQ(rep.undefined_classes, std::vector<int>{2});
    EXPECT_EQ(rep.per_class_ap.size(), 2u);
}

TEST(Evaluate, MapIsMeanOfDefinedClasses) {
    auto rng = opg::make_rng(4, "mean");
    for (int t = 0; t < 100; ++t) {
        const auto e = fixtures::random_eval_case(rng);
        const auto rep = opg::evaluate(e.dets, e.gt, 2);
        double s = 0.0;
        for (const auto& [c, ap] : rep.per_class_ap) s += ap;
        if (!rep.per_class_ap.empty()) {
            EXPECT_NEAR(rep.map, s / static_cast<double>(rep.per_class_ap.size()), 1e-15);
        }
        EXPECT_GE(rep.map, 0.0);
        EXPECT_LE(rep.map, 1.0);
        EXPECT_GE(rep.corloc, 0.0);
        EXPECT_LE(rep.corloc, 1.0);
    }
}

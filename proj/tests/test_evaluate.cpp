#include <cmath>

#include "doctest.h"
#include "json.hpp"

#include "deepnoc/error.hpp"
#include "deepnoc/evaluate.hpp"
#include "test_util.hpp"

using namespace deepnoc;

namespace {

// 10-class regression fixture: simulated-test-set confusion counts,
// rows = predicted NoC, columns = known NoC.
constexpr long kFixture10[kMaxNoc][kMaxNoc] = {
    {983, 0, 0, 0, 0, 0, 0, 0, 0, 0},
    {2, 1020, 1, 0, 0, 0, 0, 0, 0, 0},
    {0, 41, 948, 13, 0, 0, 0, 0, 0, 0},
    {0, 0, 149, 811, 41, 0, 0, 0, 0, 0},
    {0, 0, 3, 198, 704, 94, 1, 0, 0, 0},
    {0, 0, 0, 10, 219, 622, 113, 2, 0, 0},
    {0, 0, 0, 0, 21, 272, 489, 206, 8, 0},
    {0, 0, 0, 0, 1, 34, 243, 545, 184, 38},
    {0, 0, 0, 0, 0, 2, 40, 298, 367, 285},
    {0, 0, 0, 0, 0, 0, 4, 91, 249, 648},
};

// 5-class regression fixture embedded into the 10-class matrix.
constexpr long kFixture5[5][5] = {
    {34, 0, 0, 0, 0},
    {0, 88, 2, 1, 0},
    {0, 0, 69, 2, 1},
    {0, 0, 6, 82, 16},
    {0, 0, 2, 8, 61},
};

ConfusionMatrix load_fixture10() {
    ConfusionMatrix m;
    for (int p = 0; p < kMaxNoc; ++p)
        for (int t = 0; t < kMaxNoc; ++t)
            m.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)] = kFixture10[p][t];
    return m;
}

ConfusionMatrix load_fixture5() {
    ConfusionMatrix m;
    for (int p = 0; p < 5; ++p)
        for (int t = 0; t < 5; ++t)
            m.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)] = kFixture5[p][t];
    return m;
}

} // namespace

TEST_CASE("10-class fixture reproduces the expected overall accuracy and marginals") {
    const ConfusionMatrix m = load_fixture10();
    CHECK(m.total() == 10000);
    CHECK(m.overall_accuracy() == doctest::Approx(0.7137).epsilon(1e-6));

    const long row_totals[kMaxNoc] = {983, 1023, 1002, 1001, 1000, 966, 996, 1045, 992, 992};
    const long col_totals[kMaxNoc] = {985, 1061, 1101, 1032, 986, 1024, 890, 1142, 808, 971};
    for (int k = 1; k <= kMaxNoc; ++k) {
        CHECK(m.row_total(k) == row_totals[k - 1]);
        CHECK(m.column_total(k) == col_totals[k - 1]);
    }
}

TEST_CASE("5-class fixture reproduces the per-class metrics") {
    const ConfusionMatrix m = load_fixture5();
    CHECK(m.total() == 372);
    CHECK(m.overall_accuracy() == doctest::Approx(334.0 / 372.0).epsilon(1e-9));

    const ClassMetrics result = metrics(m);
    const double accuracy[5] = {1.000, 0.992, 0.965, 0.911, 0.927};
    const double f1[5] = {1.000, 0.983, 0.914, 0.832, 0.819};
    for (int k = 0; k < 5; ++k) {
        CHECK(result.per_class[static_cast<std::size_t>(k)].accuracy ==
              doctest::Approx(accuracy[k]).epsilon(0.001));
        CHECK(result.per_class[static_cast<std::size_t>(k)].f1 ==
              doctest::Approx(f1[k]).epsilon(0.001));
    }
}

TEST_CASE("a perfect confusion matrix has unit metrics") {
    std::vector<int> preds, truths;
    for (int k = 1; k <= kMaxNoc; ++k) {
        for (int i = 0; i < 5; ++i) {
            preds.push_back(k);
            truths.push_back(k);
        }
    }
    const ConfusionMatrix m = confusion(preds, truths);
    CHECK(m.overall_accuracy() == 1.0);
    const ClassMetrics result = metrics(m);
    for (const ClassMetricsRow& row : result.per_class) {
        CHECK(row.accuracy == 1.0);
        CHECK(row.precision == 1.0);
        CHECK(row.recall == 1.0);
        CHECK(row.f1 == 1.0);
    }
}

TEST_CASE("F1 is invariant under matrix transposition") {
    Rng rng(77);
    ConfusionMatrix m;
    for (auto& row : m.counts)
        for (long& c : row) c = rng.uniform_int(0, 30);
    ConfusionMatrix mt;
    for (int p = 0; p < kMaxNoc; ++p)
        for (int t = 0; t < kMaxNoc; ++t)
            mt.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)] =
                m.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
    const ClassMetrics a = metrics(m);
    const ClassMetrics b = metrics(mt);
    for (int k = 0; k < kMaxNoc; ++k) {
        CHECK(a.per_class[static_cast<std::size_t>(k)].f1 ==
              doctest::Approx(b.per_class[static_cast<std::size_t>(k)].f1).epsilon(1e-12));
        CHECK(a.per_class[static_cast<std::size_t>(k)].precision ==
              doctest::Approx(b.per_class[static_cast<std::size_t>(k)].recall).epsilon(1e-12));
    }
}

TEST_CASE("confusion rejects mismatched inputs") {
    CHECK_THROWS_AS(confusion({1, 2}, {1}), DataError);
    CHECK_THROWS_AS(confusion({11}, {1}), DataError);
    CHECK_THROWS_AS(metrics(ConfusionMatrix{}), DataError);
}

TEST_CASE("prediction breaks ties toward the lower NoC") {
    // Verified through the sweep machinery, which shares the argmax rule.
    std::vector<std::array<double, kMaxNoc>> probs(1);
    probs[0] = {0.0, 0.0, 0.0, 0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.0};
    const ThresholdCurve curve = threshold_sweep(probs, {4}, {0.1});
    CHECK(curve.points[0].classified == 1);
    CHECK(curve.points[0].accuracy == 1.0); // counted correct only if class 4 won the tie
}

TEST_CASE("threshold sweep endpoints and degenerate cases") {
    std::vector<std::array<double, kMaxNoc>> probs;
    std::vector<int> truths;
    // Confident and correct.
    for (int i = 0; i < 8; ++i) {
        std::array<double, kMaxNoc> p{};
        p[1] = 0.99;
        p[0] = 0.01;
        probs.push_back(p);
        truths.push_back(2);
    }
    // Diffident and wrong.
    for (int i = 0; i < 4; ++i) {
        std::array<double, kMaxNoc> p{};
        p[2] = 0.4;
        p[3] = 0.35;
        p[4] = 0.25;
        probs.push_back(p);
        truths.push_back(5);
    }

    SUBCASE("zero threshold classifies everything") {
        const ThresholdCurve curve = threshold_sweep(probs, truths, {0.0});
        CHECK(curve.points[0].proportion == 1.0);
        CHECK(curve.points[0].accuracy == doctest::Approx(8.0 / 12.0));
    }
    SUBCASE("threshold above the global maximum classifies nothing") {
        const ThresholdCurve curve = threshold_sweep(probs, truths, {0.995});
        CHECK(curve.points[0].classified == 0);
        CHECK_FALSE(curve.points[0].has_accuracy);
        CHECK(std::isnan(curve.points[0].accuracy));
    }
    SUBCASE("confident-correct fixture: accuracy rises while coverage falls") {
        const ThresholdCurve curve = threshold_sweep(probs, truths, {0.1, 0.5, 0.9});
        REQUIRE(curve.points.size() == 3);
        CHECK(curve.points[0].accuracy < curve.points[2].accuracy);
        CHECK(curve.points[0].proportion > curve.points[2].proportion);
        CHECK(curve.points[2].accuracy == 1.0);
    }
    SUBCASE("proportion classified is non-increasing on any input") {
        Rng rng(5);
        std::vector<std::array<double, kMaxNoc>> random_probs(200);
        std::vector<int> random_truths(200);
        for (int i = 0; i < 200; ++i) {
            double sum = 0.0;
            for (double& v : random_probs[static_cast<std::size_t>(i)]) {
                v = rng.uniform();
                sum += v;
            }
            for (double& v : random_probs[static_cast<std::size_t>(i)]) v /= sum;
            random_truths[static_cast<std::size_t>(i)] = 1 + static_cast<int>(rng.uniform_int(0, 9));
        }
        const ThresholdCurve curve =
            threshold_sweep(random_probs, random_truths, default_threshold_grid());
        for (std::size_t i = 1; i < curve.points.size(); ++i) {
            CHECK(curve.points[i].proportion <= curve.points[i - 1].proportion);
        }
    }
}

TEST_CASE("MAC counts plp-passing peaks and ceils") {
    SimulatedProfile profile;
    profile.noc = 2;
    profile.donor_templates_rfu = {100.0, 50.0};
    profile.donor_proportions = {2.0 / 3.0, 1.0 / 3.0};

    SUBCASE("three counted alleles give two contributors") {
        for (int i = 0; i < 3; ++i)
            profile.peaks.push_back(
                testutil::make_peak(4, 10.0 + i, 100.0, 50.0, 50.0, 0.0, 0.0, {1, 0}, 0.9));
        profile.peaks.push_back(
            testutil::make_peak(4, 15.0, 120.0, 50.0, 0.0, 0.0, 50.0, {0, 0}, 0.2));
        CHECK(mac_estimate(profile) == 2);
    }
    SUBCASE("five counted alleles give three") {
        for (int i = 0; i < 5; ++i)
            profile.peaks.push_back(
                testutil::make_peak(7, 8.0 + i, 90.0, 40.0, 40.0, 0.0, 0.0, {1, 0}, 0.8));
        CHECK(mac_estimate(profile) == 3);
    }
    SUBCASE("an empty profile floors at one") {
        CHECK(mac_estimate(profile) == 1);
    }
}

TEST_CASE("MAC agrees with a brute-force recount on simulated data") {
    const KitConfig& kit = default_kit();
    SimParams params;
    params.seed = 321;
    const std::vector<SimulatedProfile> profiles = simulate_profiles(kit, params, 200);
    for (const SimulatedProfile& profile : profiles) {
        // Independent recount straight off the peak list.
        int best = 0;
        for (int locus = 0; locus < kNumLoci; ++locus) {
            int count = 0;
            for (const SimulatedPeak& p : profile.peaks) {
                if (p.locus == locus && p.plp >= 0.5) ++count;
            }
            best = std::max(best, count);
        }
        const int oracle = std::max(1, static_cast<int>(std::ceil(best / 2.0)));
        CHECK(mac_estimate(profile) == oracle);
    }
}

TEST_CASE("evaluation report JSON is well-formed") {
    EvalReport report;
    report.matrix = load_fixture5();
    report.per_class = metrics(report.matrix);
    report.overall_accuracy = report.matrix.overall_accuracy();
    std::vector<std::array<double, kMaxNoc>> probs(3);
    probs[0][0] = 1.0;
    probs[1][1] = 1.0;
    probs[2][2] = 1.0;
    report.curve = threshold_sweep(probs, {1, 2, 4}, default_threshold_grid());

    const std::string text = eval_report_json(report);
    const nlohmann::json doc = nlohmann::json::parse(text);
    CHECK(doc.contains("confusion"));
    CHECK(doc.contains("overall_accuracy"));
    CHECK(doc.contains("per_class"));
    CHECK(doc.contains("threshold_curve"));
    CHECK(doc["confusion"].size() == kMaxNoc);
    CHECK(doc["overall_accuracy"].get<double>() == doctest::Approx(334.0 / 372.0).epsilon(1e-5));

    const std::string text_matrix = format_confusion_text(report.matrix);
    CHECK(text_matrix.find("known NoC") != std::string::npos);
    CHECK(text_matrix.find("372") != std::string::npos);
}

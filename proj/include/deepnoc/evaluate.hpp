#pragma once

// NoC prediction, confusion matrices, per-class metrics, abstention sweeps
// and the maximum-allele-count baseline.

#include <array>
#include <string>
#include <vector>

#include "deepnoc/model.hpp"
#include "deepnoc/simulate.hpp"
#include "deepnoc/trainer.hpp"

namespace deepnoc {

struct Prediction {
    int noc = 0; // 1..10, argmax with ties toward the lower NoC
    std::array<double, kMaxNoc> probs{};
};

Prediction predict_noc(const DeepNoCModel<float>& model, const EncodedProfile& enc);
Prediction predict_noc(const DeepNoCModel<float>& model, const ProfileTensor& tensor);

// Rows are predicted NoC, columns are known NoC.
struct ConfusionMatrix {
    std::array<std::array<long, kMaxNoc>, kMaxNoc> counts{};

    long total() const;
    long row_total(int predicted_class) const;    // class is 1..10
    long column_total(int known_class) const;
    double overall_accuracy() const; // trace / total
};

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& truths);

struct ClassMetricsRow {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct ClassMetrics {
    std::array<ClassMetricsRow, kMaxNoc> per_class{};
};

// precision = TP/row total, recall = TP/column total,
// accuracy = 1 - (FP+FN)/total, F1 = harmonic mean (0 when both are 0).
ClassMetrics metrics(const ConfusionMatrix& matrix);

struct ThresholdPoint {
    double threshold = 0.0;
    double accuracy = 0.0;    // among classified profiles; NaN when none
    double proportion = 0.0;  // fraction of profiles classified
    long classified = 0;
    bool has_accuracy = false;
};

struct ThresholdCurve {
    std::vector<ThresholdPoint> points;
};

// 0.10..0.90 in steps of 0.05, then 0.95, 0.975, 0.99, 0.995, 0.999.
std::vector<double> default_threshold_grid();

ThresholdCurve threshold_sweep(const std::vector<std::array<double, kMaxNoc>>& probs,
                               const std::vector<int>& truths,
                               const std::vector<double>& thresholds);

// Maximum allele count baseline: peaks with plp >= cutoff count; the busiest
// locus determines NoC = max(1, ceil(count / 2)).
int mac_estimate(const SimulatedProfile& profile, double plp_cutoff = 0.5);

struct EvalReport {
    ConfusionMatrix matrix;
    ClassMetrics per_class;
    ThresholdCurve curve;
    double overall_accuracy = 0.0;
};

EvalReport evaluate(const DeepNoCModel<float>& model, const EncodedDataset& dataset,
                    const std::vector<int>& truths, const std::vector<double>& thresholds,
                    int threads = 0);

std::string eval_report_json(const EvalReport& report);

// Plain-text confusion matrix, predicted NoC as rows with marginal totals.
std::string format_confusion_text(const ConfusionMatrix& matrix);

} // namespace deepnoc

#include "deepnoc/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <omp.h>

#include "deepnoc/error.hpp"

namespace deepnoc {

namespace {

template <class Probs>
int argmax_lowest(const Probs& probs) {
    int best = 0;
    for (int i = 1; i < kMaxNoc; ++i) {
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

} // namespace

Prediction predict_noc(const DeepNoCModel<float>& model, const EncodedProfile& enc) {
    typename DeepNoCModel<float>::Workspace ws;
    const ModelOutputs<float> out = model.forward(enc, ws);
    Prediction pred;
    for (int i = 0; i < kMaxNoc; ++i)
        pred.probs[static_cast<std::size_t>(i)] = static_cast<double>(out.noc[static_cast<std::size_t>(i)]);
    pred.noc = argmax_lowest(pred.probs) + 1;
    return pred;
}

Prediction predict_noc(const DeepNoCModel<float>& model, const ProfileTensor& tensor) {
    typename DeepNoCModel<float>::Workspace ws;
    const ModelOutputs<float> out = model.forward(tensor, ws);
    Prediction pred;
    for (int i = 0; i < kMaxNoc; ++i)
        pred.probs[static_cast<std::size_t>(i)] = static_cast<double>(out.noc[static_cast<std::size_t>(i)]);
    pred.noc = argmax_lowest(pred.probs) + 1;
    return pred;
}

long ConfusionMatrix::total() const {
    long sum = 0;
    for (const auto& row : counts)
        for (long c : row) sum += c;
    return sum;
}

long ConfusionMatrix::row_total(int predicted_class) const {
    long sum = 0;
    for (long c : counts[static_cast<std::size_t>(predicted_class - 1)]) sum += c;
    return sum;
}

long ConfusionMatrix::column_total(int known_class) const {
    long sum = 0;
    for (const auto& row : counts) sum += row[static_cast<std::size_t>(known_class - 1)];
    return sum;
}

double ConfusionMatrix::overall_accuracy() const {
    const long n = total();
    if (n == 0) return 0.0;
    long trace = 0;
    for (int i = 0; i < kMaxNoc; ++i) trace += counts[static_cast<std::size_t>(i)][static_cast<std::size_t>(i)];
    return static_cast<double>(trace) / static_cast<double>(n);
}

ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& truths) {
    if (predictions.size() != truths.size())
        throw DataError("confusion: predictions and truths differ in length");
    ConfusionMatrix matrix;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        const int p = predictions[i];
        const int t = truths[i];
        if (p < 1 || p > kMaxNoc || t < 1 || t > kMaxNoc)
            throw DataError("confusion: NoC out of range at record " + std::to_string(i));
        matrix.counts[static_cast<std::size_t>(p - 1)][static_cast<std::size_t>(t - 1)] += 1;
    }
    return matrix;
}

ClassMetrics metrics(const ConfusionMatrix& matrix) {
    const long n = matrix.total();
    if (n == 0) throw DataError("metrics: empty confusion matrix");
    ClassMetrics result;
    for (int k = 1; k <= kMaxNoc; ++k) {
        const long tp = matrix.counts[static_cast<std::size_t>(k - 1)][static_cast<std::size_t>(k - 1)];
        const long row = matrix.row_total(k);
        const long col = matrix.column_total(k);
        const long fp = row - tp;
        const long fn = col - tp;
        ClassMetricsRow& m = result.per_class[static_cast<std::size_t>(k - 1)];
        m.precision = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
        m.recall = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
        m.accuracy = 1.0 - static_cast<double>(fp + fn) / static_cast<double>(n);
        m.f1 = (m.precision + m.recall) > 0.0
                   ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                   : 0.0;
    }
    return result;
}

std::vector<double> default_threshold_grid() {
    std::vector<double> grid;
    for (int i = 2; i <= 18; ++i) grid.push_back(0.05 * i); // 0.10 .. 0.90
    grid.push_back(0.95);
    grid.push_back(0.975);
    grid.push_back(0.99);
    grid.push_back(0.995);
    grid.push_back(0.999);
    return grid;
}

ThresholdCurve threshold_sweep(const std::vector<std::array<double, kMaxNoc>>& probs,
                               const std::vector<int>& truths,
                               const std::vector<double>& thresholds) {
    if (probs.size() != truths.size())
        throw DataError("threshold_sweep: probs and truths differ in length");
    ThresholdCurve curve;
    for (const double t : thresholds) {
        ThresholdPoint point;
        point.threshold = t;
        long correct = 0;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            const int cls = argmax_lowest(probs[i]);
            if (probs[i][static_cast<std::size_t>(cls)] < t) continue;
            point.classified += 1;
            if (cls + 1 == truths[i]) ++correct;
        }
        point.proportion = probs.empty() ? 0.0
                                         : static_cast<double>(point.classified) /
                                               static_cast<double>(probs.size());
        if (point.classified > 0) {
            point.accuracy = static_cast<double>(correct) / static_cast<double>(point.classified);
            point.has_accuracy = true;
        } else {
            point.accuracy = std::numeric_limits<double>::quiet_NaN();
            point.has_accuracy = false;
        }
        curve.points.push_back(point);
    }
    return curve;
}

int mac_estimate(const SimulatedProfile& profile, double plp_cutoff) {
    std::array<int, kNumLoci> counts{};
    for (const SimulatedPeak& p : profile.peaks) {
        if (p.plp >= plp_cutoff) counts[static_cast<std::size_t>(p.locus)] += 1;
    }
    int max_count = 0;
    for (int c : counts) max_count = std::max(max_count, c);
    return std::max(1, (max_count + 1) / 2);
}

EvalReport evaluate(const DeepNoCModel<float>& model, const EncodedDataset& dataset,
                    const std::vector<int>& truths, const std::vector<double>& thresholds,
                    int threads) {
    if (dataset.size() != truths.size())
        throw DataError("evaluate: dataset and truths differ in length");
    const std::size_t n = dataset.size();
    std::vector<std::array<double, kMaxNoc>> probs(n);
    std::vector<int> preds(n);
    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel num_threads(nthreads)
    {
        typename DeepNoCModel<float>::Workspace ws;
        EncodedProfile enc;
#pragma omp for schedule(dynamic, 8)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
            dataset.get(static_cast<std::size_t>(i), enc);
            const ModelOutputs<float> out = model.forward(enc, ws);
            for (int j = 0; j < kMaxNoc; ++j)
                probs[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
                    static_cast<double>(out.noc[static_cast<std::size_t>(j)]);
            preds[static_cast<std::size_t>(i)] =
                argmax_lowest(probs[static_cast<std::size_t>(i)]) + 1;
        }
    }
    EvalReport report;
    report.matrix = confusion(preds, truths);
    report.per_class = metrics(report.matrix);
    report.curve = threshold_sweep(probs, truths, thresholds);
    report.overall_accuracy = report.matrix.overall_accuracy();
    return report;
}

std::string eval_report_json(const EvalReport& report) {
    std::ostringstream out;
    out << "{\n  \"confusion\": [\n";
    for (int p = 0; p < kMaxNoc; ++p) {
        out << "    [";
        for (int t = 0; t < kMaxNoc; ++t) {
            out << (t ? ", " : "")
                << report.matrix.counts[static_cast<std::size_t>(p)][static_cast<std::size_t>(t)];
        }
        out << "]" << (p + 1 < kMaxNoc ? "," : "") << "\n";
    }
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", report.overall_accuracy);
    out << "  ],\n  \"overall_accuracy\": " << buf << ",\n  \"per_class\": {\n";
    for (int k = 1; k <= kMaxNoc; ++k) {
        const ClassMetricsRow& m = report.per_class.per_class[static_cast<std::size_t>(k - 1)];
        std::snprintf(buf, sizeof(buf),
                      "{\"accuracy\": %.6f, \"precision\": %.6f, \"recall\": %.6f, \"f1\": %.6f}",
                      m.accuracy, m.precision, m.recall, m.f1);
        out << "    \"" << k << "\": " << buf << (k < kMaxNoc ? "," : "") << "\n";
    }
    out << "  },\n  \"threshold_curve\": [\n";
    for (std::size_t i = 0; i < report.curve.points.size(); ++i) {
        const ThresholdPoint& p = report.curve.points[i];
        out << "    {\"threshold\": " << p.threshold << ", \"proportion_classified\": "
            << p.proportion << ", \"classified\": " << p.classified << ", \"accuracy\": ";
        if (p.has_accuracy) {
            std::snprintf(buf, sizeof(buf), "%.6f", p.accuracy);
            out << buf;
        } else {
            out << "null";
        }
        out << ", \"defined\": " << (p.has_accuracy ? "true" : "false") << "}"
            << (i + 1 < report.curve.points.size() ? "," : "") << "\n";
    }
    out << "  ]\n}\n";
    return out.str();
}

std::string format_confusion_text(const ConfusionMatrix& matrix) {
    std::ostringstream out;
    out << "           known NoC\n";
    out << "pred ";
    for (int t = 1; t <= kMaxNoc; ++t) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%7d", t);
        out << buf;
    }
    out << "    Total\n";
    for (int p = 1; p <= kMaxNoc; ++p) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%4d ", p);
        out << buf;
        for (int t = 1; t <= kMaxNoc; ++t) {
            std::snprintf(buf, sizeof(buf), "%7ld",
                          matrix.counts[static_cast<std::size_t>(p - 1)][static_cast<std::size_t>(t - 1)]);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), "%9ld", matrix.row_total(p));
        out << buf << "\n";
    }
    out << "Tot  ";
    for (int t = 1; t <= kMaxNoc; ++t) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%7ld", matrix.column_total(t));
        out << buf;
    }
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%9ld", matrix.total());
    out << buf << "\n";
    return out.str();
}

} // namespace deepnoc

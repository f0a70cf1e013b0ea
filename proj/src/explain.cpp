#include "deepnoc/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "deepnoc/error.hpp"

namespace deepnoc {

std::vector<const SimulatedPeak*> capture_order(const SimulatedProfile& profile) {
    std::array<std::vector<const SimulatedPeak*>, kNumLoci> by_locus;
    for (const SimulatedPeak& p : profile.peaks) {
        by_locus[static_cast<std::size_t>(p.locus)].push_back(&p);
    }
    std::vector<const SimulatedPeak*> order;
    order.reserve(profile.peaks.size());
    for (auto& peaks : by_locus) {
        std::stable_sort(peaks.begin(), peaks.end(),
                         [](const SimulatedPeak* a, const SimulatedPeak* b) {
                             if (a->size_bp != b->size_bp) return a->size_bp < b->size_bp;
                             return a->height_rfu > b->height_rfu;
                         });
        const std::size_t captured = std::min<std::size_t>(peaks.size(), kMaxPeaksPerLocus);
        for (std::size_t i = 0; i < captured; ++i) order.push_back(peaks[i]);
    }
    return order;
}

namespace {

// Shared number formatting for the SVG and its JSON mirror: two decimals,
// trailing zeros trimmed. Every value printed into the SVG is recorded so the
// JSON can list it verbatim.
class NumberSink {
public:
    std::string fmt(double v) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.2f", v);
        std::string s(buf);
        while (!s.empty() && s.back() == '0') s.pop_back();
        if (!s.empty() && s.back() == '.') s.pop_back();
        if (s == "-0") s = "0";
        numbers_.insert(s);
        return s;
    }

    const std::set<std::string>& numbers() const { return numbers_; }

private:
    std::set<std::string> numbers_;
};

struct Geometry {
    static constexpr double kWidth = 1240.0;
    static constexpr double kHeight = 830.0;
    static constexpr double kDyeRow = 130.0;
    static constexpr double kTop = 20.0;
    static constexpr double kPeakScale = 80.0; // pixel height of the tallest peak
    static constexpr double kPanelX = 930.0;

    static double size_to_x(double size_bp) { return 40.0 + (size_bp - 40.0) * 2.0; }
    static double baseline_y(int dye) { return kTop + dye * kDyeRow + 80.0; }
};

std::string xml_escape(const std::string& s) {
    std::string out;
    for (const char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

} // namespace

ReportPaths render_report(const SimulatedProfile& profile, const KitConfig& kit,
                          const EncodedProfile& enc, const ModelOutputs<float>& outputs,
                          const std::string& out_svg, const std::string& out_json) {
    const std::vector<const SimulatedPeak*> peaks = capture_order(profile);
    if (static_cast<int>(peaks.size()) != enc.active_rows() ||
        outputs.peak_prop.size() != peaks.size())
        throw DataError("render_report: outputs do not match the encoded profile shape");

    double max_height = 0.0;
    for (const SimulatedPeak* p : peaks) max_height = std::max(max_height, p->height_rfu);
    if (max_height <= 0.0) max_height = 1.0;

    const int predicted = [&] {
        int best = 0;
        for (int i = 1; i < kMaxNoc; ++i) {
            if (outputs.noc[static_cast<std::size_t>(i)] > outputs.noc[static_cast<std::size_t>(best)])
                best = i;
        }
        return best + 1;
    }();

    // Dense views for per-locus outputs.
    const DenseOutputs dense = expand_outputs(outputs, enc);

    NumberSink sink;
    std::ostringstream svg;
    std::ostringstream json;

    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\""
        << sink.fmt(Geometry::kWidth) << "\" height=\"" << sink.fmt(Geometry::kHeight)
        << "\" viewBox=\"0 0 " << sink.fmt(Geometry::kWidth) << " " << sink.fmt(Geometry::kHeight)
        << "\">\n";
    svg << "<rect x=\"" << sink.fmt(0) << "\" y=\"" << sink.fmt(0) << "\" width=\""
        << sink.fmt(Geometry::kWidth) << "\" height=\"" << sink.fmt(Geometry::kHeight)
        << "\" fill=\"#ffffff\"/>\n";

    json << "{\n\"predicted_noc\": " << predicted << ",\n\"noc\": " << profile.noc << ",\n";
    json << "\"canvas\": {\"width\": " << sink.fmt(Geometry::kWidth)
         << ", \"height\": " << sink.fmt(Geometry::kHeight) << "},\n";
    json << "\"loci\": [\n";

    std::size_t row = 0;
    for (int locus = 0; locus < kNumLoci; ++locus) {
        const LocusDef& def = kit.loci[static_cast<std::size_t>(locus)];
        const int dye = static_cast<int>(def.dye);
        const double base_y = Geometry::baseline_y(dye);
        const double x0 = Geometry::size_to_x(allele_size_unchecked(kit, locus, def.allele_min)) - 8.0;
        const double x1 = Geometry::size_to_x(allele_size_unchecked(kit, locus, def.allele_max)) + 8.0;

        svg << "<g class=\"locus\" id=\"locus-" << xml_escape(def.name) << "\">\n";
        const std::string sx0 = sink.fmt(x0);
        const std::string sx1 = sink.fmt(x1);
        const std::string sw = sink.fmt(x1 - x0);
        const std::string sy = sink.fmt(base_y - Geometry::kPeakScale - 4.0);
        const std::string sh = sink.fmt(Geometry::kPeakScale + 44.0);
        svg << "<rect class=\"locus-box\" x=\"" << sx0 << "\" y=\"" << sy << "\" width=\"" << sw
            << "\" height=\"" << sh << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
        svg << "<text x=\"" << sx0 << "\" y=\"" << sink.fmt(base_y - Geometry::kPeakScale - 8.0)
            << "\" font-size=\"" << sink.fmt(9) << "\" fill=\"#444444\">" << xml_escape(def.name)
            << "</text>\n";

        json << "{\"name\": \"" << def.name << "\", \"locus\": " << locus << ", \"dye\": \""
             << dye_name(def.dye) << "\", \"box\": {\"x\": " << sx0 << ", \"y\": " << sy
             << ", \"width\": " << sw << ", \"height\": " << sh << "},\n";

        // Locus allele-count distribution: 20 thin bars under the baseline.
        json << " \"count_probs\": [";
        for (int c = 0; c < kLocusCountClasses; ++c) {
            const double p = dense.locus_count[static_cast<std::size_t>(locus) * kLocusCountClasses +
                                               static_cast<std::size_t>(c)];
            json << (c ? ", " : "") << sink.fmt(p);
        }
        json << "],\n \"count_bars\": [";
        for (int c = 0; c < kLocusCountClasses; ++c) {
            const double p = dense.locus_count[static_cast<std::size_t>(locus) * kLocusCountClasses +
                                               static_cast<std::size_t>(c)];
            const double bx = x0 + 2.0 + c * 3.0;
            const double bh = p * 18.0;
            const std::string sbx = sink.fmt(bx);
            const std::string sbh = sink.fmt(bh);
            const std::string sby = sink.fmt(base_y + 22.0 - bh);
            svg << "<rect class=\"count-bar\" x=\"" << sbx << "\" y=\"" << sby << "\" width=\""
                << sink.fmt(2.4) << "\" height=\"" << sbh << "\" fill=\"#666666\"/>\n";
            json << (c ? ", " : "") << "{\"x\": " << sbx << ", \"y\": " << sby
                 << ", \"height\": " << sbh << "}";
        }
        json << "],\n";

        // Locus mixture strip: 10 cells shaded by proportion.
        json << " \"mixture\": [";
        for (int d = 0; d < kMaxNoc; ++d) {
            const double p = dense.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)];
            json << (d ? ", " : "") << sink.fmt(p);
        }
        json << "],\n \"mixture_cells\": [";
        for (int d = 0; d < kMaxNoc; ++d) {
            const double p = dense.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)];
            const double cx = x0 + 2.0 + d * 6.0;
            const double ch = p * 12.0;
            const std::string scx = sink.fmt(cx);
            const std::string sch = sink.fmt(ch);
            const std::string scy = sink.fmt(base_y + 38.0 - ch);
            svg << "<rect class=\"mixture-cell\" x=\"" << scx << "\" y=\"" << scy << "\" width=\""
                << sink.fmt(5) << "\" height=\"" << sch << "\" fill=\"#2b8cbe\"/>\n";
            json << (d ? ", " : "") << "{\"x\": " << scx << ", \"y\": " << scy
                 << ", \"height\": " << sch << "}";
        }
        json << "],\n \"peaks\": [";

        bool first_peak = true;
        while (row < peaks.size() && peaks[row]->locus == locus) {
            const SimulatedPeak& p = *peaks[row];
            const double prop = outputs.peak_prop.empty()
                                    ? 0.0
                                    : static_cast<double>(outputs.peak_prop[row]);
            const double x = Geometry::size_to_x(p.size_bp);
            const double drawn_h = Geometry::kPeakScale * p.height_rfu / max_height;
            const double plp_h = Geometry::kPeakScale * p.plp;
            const double tick_y = base_y - drawn_h * prop;

            const std::string sx = sink.fmt(x);
            const std::string sdh = sink.fmt(drawn_h);
            const std::string speak_y = sink.fmt(base_y - drawn_h);
            const std::string splp_y = sink.fmt(base_y - plp_h);
            const std::string splp_h = sink.fmt(plp_h);
            const std::string stick = sink.fmt(tick_y);
            const std::string sbase = sink.fmt(base_y);

            svg << "<rect class=\"plp-bar\" x=\"" << sink.fmt(x - 2.5) << "\" y=\"" << splp_y
                << "\" width=\"" << sink.fmt(5) << "\" height=\"" << splp_h
                << "\" fill=\"#d9d9d9\"/>\n";
            svg << "<line class=\"peak\" x1=\"" << sx << "\" y1=\"" << sbase << "\" x2=\"" << sx
                << "\" y2=\"" << speak_y << "\" stroke=\"" << dye_hex_color(def.dye)
                << "\" stroke-width=\"" << sink.fmt(2) << "\"/>\n";
            svg << "<line class=\"prop-tick\" x1=\"" << sink.fmt(x - 4.0) << "\" y1=\"" << stick
                << "\" x2=\"" << sink.fmt(x + 4.0) << "\" y2=\"" << stick
                << "\" stroke=\"#d7191c\" stroke-width=\"" << sink.fmt(1.5) << "\"/>\n";

            if (!first_peak) json << ",";
            first_peak = false;
            json << "\n  {\"allele\": " << sink.fmt(p.allele) << ", \"size_bp\": "
                 << sink.fmt(p.size_bp) << ", \"height_rfu\": " << sink.fmt(p.height_rfu)
                 << ", \"plp\": " << sink.fmt(p.plp) << ", \"prop_allelic\": " << sink.fmt(prop)
                 << ", \"x\": " << sx << ", \"baseline_y\": " << sbase << ", \"drawn_height\": "
                 << sdh << ", \"tick_y\": " << stick << ", \"plp_bar_height\": " << splp_h
                 << ", \"count_probs\": [";
            for (int c = 0; c < kPeakCountClasses; ++c) {
                char buf[32];
                std::snprintf(buf, sizeof(buf), "%.6f",
                              outputs.peak_count.empty()
                                  ? 0.0
                                  : static_cast<double>(
                                        outputs.peak_count[row * kPeakCountClasses +
                                                           static_cast<std::size_t>(c)]));
                json << (c ? ", " : "") << buf;
            }
            json << "]}";
            ++row;
        }
        json << "]}" << (locus + 1 < kNumLoci ? ",\n" : "\n");
        svg << "</g>\n";
    }

    // Profile panel: mixture proportions and NoC probabilities.
    svg << "<g class=\"profile-panel\">\n";
    json << "],\n\"profile\": {\"mixture\": [";
    for (int d = 0; d < kMaxNoc; ++d) {
        json << (d ? ", " : "")
             << sink.fmt(static_cast<double>(outputs.profile_mixture[static_cast<std::size_t>(d)]));
    }
    json << "],\n \"mixture_bars\": [";
    for (int d = 0; d < kMaxNoc; ++d) {
        const double p = static_cast<double>(outputs.profile_mixture[static_cast<std::size_t>(d)]);
        const double by = Geometry::kTop + 30.0 + d * 16.0;
        const double bw = p * 260.0;
        const std::string sby = sink.fmt(by);
        const std::string sbw = sink.fmt(bw);
        const std::string sbx = sink.fmt(Geometry::kPanelX);
        svg << "<rect class=\"profile-mix-bar\" x=\"" << sbx << "\" y=\"" << sby << "\" width=\""
            << sbw << "\" height=\"" << sink.fmt(10) << "\" fill=\"#2b8cbe\"/>\n";
        json << (d ? ", " : "") << "{\"x\": " << sbx << ", \"y\": " << sby << ", \"width\": " << sbw
             << "}";
    }
    svg << "<text x=\"" << sink.fmt(Geometry::kPanelX) << "\" y=\"" << sink.fmt(Geometry::kTop + 16.0)
        << "\" font-size=\"" << sink.fmt(12) << "\" fill=\"#000000\">mixture proportions</text>\n";

    json << "],\n \"noc_probs\": [";
    for (int d = 0; d < kMaxNoc; ++d) {
        json << (d ? ", " : "") << sink.fmt(static_cast<double>(outputs.noc[static_cast<std::size_t>(d)]));
    }
    json << "],\n \"noc_bars\": [";
    const double noc_base = Geometry::kTop + 360.0;
    for (int d = 0; d < kMaxNoc; ++d) {
        const double p = static_cast<double>(outputs.noc[static_cast<std::size_t>(d)]);
        const double bh = p * 140.0;
        const double bx = Geometry::kPanelX + d * 26.0;
        const bool selected = (d + 1 == predicted);
        const std::string sbx = sink.fmt(bx);
        const std::string sbh = sink.fmt(bh);
        const std::string sby = sink.fmt(noc_base - bh);
        svg << "<rect class=\"noc-bar" << (selected ? " noc-selected" : "") << "\" x=\"" << sbx
            << "\" y=\"" << sby << "\" width=\"" << sink.fmt(20) << "\" height=\"" << sbh
            << "\" fill=\"" << (selected ? "#d7191c" : "#999999") << "\"/>\n";
        svg << "<text x=\"" << sbx << "\" y=\"" << sink.fmt(noc_base + 14.0) << "\" font-size=\""
            << sink.fmt(11) << "\" fill=\"#000000\">" << sink.fmt(d + 1) << "</text>\n";
        json << (d ? ", " : "") << "{\"x\": " << sbx << ", \"y\": " << sby << ", \"height\": " << sbh
             << ", \"selected\": " << (selected ? "true" : "false") << "}";
    }
    svg << "<text x=\"" << sink.fmt(Geometry::kPanelX) << "\" y=\"" << sink.fmt(noc_base - 160.0)
        << "\" font-size=\"" << sink.fmt(12)
        << "\" fill=\"#000000\">NoC probabilities</text>\n";
    svg << "</g>\n</svg>\n";

    json << "]},\n\"svg_numbers\": [";
    bool first = true;
    for (const std::string& s : sink.numbers()) {
        json << (first ? "" : ", ") << s;
        first = false;
    }
    json << "]\n}\n";

    std::ofstream svg_file(out_svg, std::ios::binary);
    if (!svg_file) throw DataError("cannot write SVG: " + out_svg);
    svg_file << svg.str();
    if (!svg_file) throw DataError("I/O failure writing SVG: " + out_svg);

    std::ofstream json_file(out_json, std::ios::binary);
    if (!json_file) throw DataError("cannot write report JSON: " + out_json);
    json_file << json.str();
    if (!json_file) throw DataError("I/O failure writing report JSON: " + out_json);

    return {out_svg, out_json};
}

} // namespace deepnoc

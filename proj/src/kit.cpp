#include "deepnoc/kit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "deepnoc/error.hpp"
#include "json.hpp"

namespace deepnoc {

namespace {

constexpr const char* kDyeNames[kNumDyes] = {"blue", "green", "yellow",
                                             "red",  "purple", "orange"};
constexpr const char* kDyeColors[kNumDyes] = {"#1f4fd8", "#1a9641", "#b8a000",
                                              "#d7191c", "#7b3294", "#e66101"};

std::string format_frequency(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

} // namespace

const char* dye_name(Dye dye) { return kDyeNames[static_cast<int>(dye)]; }
const char* dye_hex_color(Dye dye) { return kDyeColors[static_cast<int>(dye)]; }

Dye dye_from_name(const std::string& name) {
    for (int i = 0; i < kNumDyes; ++i) {
        if (name == kDyeNames[i]) return static_cast<Dye>(i);
    }
    throw DataError("unknown dye name: '" + name + "'");
}

std::string designation_to_string(double allele) {
    const int key = designation_key(allele);
    if (key % 10 == 0) return std::to_string(key / 10);
    return std::to_string(key / 10) + "." + std::to_string(key % 10);
}

double allele_size_unchecked(const KitConfig& kit, int locus, double allele) {
    const LocusDef& def = kit.loci[static_cast<std::size_t>(locus)];
    const double whole = std::floor(allele);
    const double digits = std::round((allele - whole) * 10.0);
    return def.size_offset_bp + whole * def.repeat_unit_bp + digits;
}

double allele_size(const KitConfig& kit, int locus, double allele) {
    const LocusDef& def = kit.loci[static_cast<std::size_t>(locus)];
    if (allele < def.allele_min || allele > def.allele_max) {
        throw DataError("allele " + designation_to_string(allele) +
                        " out of range [" + designation_to_string(def.allele_min) + ", " +
                        designation_to_string(def.allele_max) + "] at locus " + def.name);
    }
    return allele_size_unchecked(kit, locus, allele);
}

double allele_frequency(const KitConfig& kit, int locus, double allele) {
    const auto it = kit.frequencies.entries.find(AlleleFrequencyTable::key(locus, allele));
    if (it != kit.frequencies.entries.end()) return it->second;
    return kit.frequencies.minimum_frequency;
}

double designation_from_size(const KitConfig& kit, int locus, double size_bp) {
    const LocusDef& def = kit.loci[static_cast<std::size_t>(locus)];
    const double raw = size_bp - def.size_offset_bp;
    double repeats = std::floor(raw / def.repeat_unit_bp);
    double digits = std::round(raw - repeats * def.repeat_unit_bp);
    if (digits >= def.repeat_unit_bp) {
        repeats += 1.0;
        digits = 0.0;
    }
    double designation = repeats + digits / 10.0;
    return std::clamp(designation, def.allele_min, def.allele_max);
}

int locus_for_size(const KitConfig& kit, Dye dye, double size_bp) {
    for (const LocusDef& def : kit.loci) {
        if (def.dye != dye) continue;
        const double lo = allele_size_unchecked(kit, def.index, def.allele_min);
        const double hi = allele_size_unchecked(kit, def.index, def.allele_max);
        if (size_bp >= lo && size_bp <= hi) return def.index;
    }
    return -1;
}

namespace {

void rebuild_derived(KitConfig& kit) {
    for (auto& list : kit.locus_alleles) list.clear();
    for (const auto& [key, freq] : kit.frequencies.entries) {
        const int locus = static_cast<int>(key / 1000000);
        const double allele = static_cast<double>(key % 1000000) / 10.0;
        kit.locus_alleles[static_cast<std::size_t>(locus)].emplace_back(allele, freq);
    }
    for (auto& list : kit.locus_alleles) {
        std::sort(list.begin(), list.end());
    }
}

void validate(KitConfig& kit) {
    for (int i = 0; i < kNumLoci; ++i) {
        const LocusDef& def = kit.loci[static_cast<std::size_t>(i)];
        if (def.index != i) throw DataError("locus index mismatch at position " + std::to_string(i));
        if (def.name.empty()) throw DataError("locus " + std::to_string(i) + " has empty name");
        if (def.repeat_unit_bp <= 0.0)
            throw DataError("locus " + def.name + ": repeat_unit_bp must be positive");
        if (!(def.allele_min < def.allele_max))
            throw DataError("locus " + def.name + ": allele_min must be below allele_max");
        for (int j = 0; j < i; ++j) {
            if (kit.loci[static_cast<std::size_t>(j)].name == def.name)
                throw DataError("duplicate locus name: '" + def.name + "'");
        }
    }
    if (kit.frequencies.sample_size_2n < 1)
        throw DataError("sample_size_2N must be at least 1");
    kit.frequencies.minimum_frequency =
        std::max(5.0 / kit.frequencies.sample_size_2n, 1e-4);

    rebuild_derived(kit);
    for (int i = 0; i < kNumLoci; ++i) {
        const auto& list = kit.locus_alleles[static_cast<std::size_t>(i)];
        const LocusDef& def = kit.loci[static_cast<std::size_t>(i)];
        if (list.empty()) throw DataError("locus " + def.name + " has no allele frequencies");
        double sum = 0.0;
        for (const auto& [allele, freq] : list) {
            if (!(freq > 0.0) || freq > 1.0)
                throw DataError("locus " + def.name + ": frequency for allele " +
                                designation_to_string(allele) + " must be in (0, 1]");
            if (allele < def.allele_min || allele > def.allele_max)
                throw DataError("locus " + def.name + ": allele " + designation_to_string(allele) +
                                " outside designation range");
            sum += freq;
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw DataError("locus " + def.name + ": frequencies sum to " +
                            std::to_string(sum) + ", expected 1");
    }
}

const char* kStutterKeys[4] = {"back", "double_back", "forward", "point2"};

} // namespace

KitConfig parse_kit_json(const std::string& text, const std::string& origin) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": kit JSON parse error: " + e.what());
    }
    try {
        KitConfig kit;
        const auto& loci = doc.at("loci");
        if (!loci.is_array() || loci.size() != kNumLoci)
            throw DataError(origin + ": expected 24 loci, got " + std::to_string(loci.size()));
        kit.frequencies.sample_size_2n = doc.at("sample_size_2N").get<int>();
        for (int i = 0; i < kNumLoci; ++i) {
            const auto& node = loci[static_cast<std::size_t>(i)];
            LocusDef def;
            def.name = node.at("name").get<std::string>();
            def.index = i;
            def.dye = dye_from_name(node.at("dye").get<std::string>());
            def.repeat_unit_bp = node.at("repeat_unit_bp").get<double>();
            def.size_offset_bp = node.at("size_offset_bp").get<double>();
            def.allele_min = node.at("allele_min").get<double>();
            def.allele_max = node.at("allele_max").get<double>();
            for (const auto& [alleleText, freq] : node.at("frequencies").items()) {
                double allele = 0.0;
                try {
                    allele = std::stod(alleleText);
                } catch (const std::exception&) {
                    throw DataError(origin + ": locus " + def.name +
                                    ": bad allele designation '" + alleleText + "'");
                }
                kit.frequencies.entries[AlleleFrequencyTable::key(i, allele)] = freq.get<double>();
            }
            kit.loci[static_cast<std::size_t>(i)] = def;
        }
        kit.stutter = default_kit().stutter;
        if (doc.contains("stutter")) {
            for (int t = 0; t < 4; ++t) {
                const auto& node = doc.at("stutter").at(kStutterKeys[t]);
                kit.stutter[static_cast<std::size_t>(t)].base_ratio = node.at("base_ratio").get<double>();
                kit.stutter[static_cast<std::size_t>(t)].slope_per_repeat =
                    node.at("slope_per_repeat").get<double>();
            }
        }
        validate(kit);
        return kit;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": kit JSON structure error: " + e.what());
    }
}

KitConfig load_kit_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open kit file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_kit_json(buf.str(), path);
}

std::string kit_to_json(const KitConfig& kit) {
    std::ostringstream out;
    out << "{\n  \"sample_size_2N\": " << kit.frequencies.sample_size_2n << ",\n";
    out << "  \"stutter\": {";
    for (int t = 0; t < 4; ++t) {
        if (t) out << ", ";
        out << "\"" << kStutterKeys[t] << "\": {\"base_ratio\": "
            << format_frequency(kit.stutter[static_cast<std::size_t>(t)].base_ratio)
            << ", \"slope_per_repeat\": "
            << format_frequency(kit.stutter[static_cast<std::size_t>(t)].slope_per_repeat) << "}";
    }
    out << "},\n  \"loci\": [\n";
    for (int i = 0; i < kNumLoci; ++i) {
        const LocusDef& def = kit.loci[static_cast<std::size_t>(i)];
        out << "    {\"name\": \"" << def.name << "\", \"dye\": \"" << dye_name(def.dye)
            << "\", \"repeat_unit_bp\": " << format_frequency(def.repeat_unit_bp)
            << ", \"size_offset_bp\": " << format_frequency(def.size_offset_bp)
            << ", \"allele_min\": " << format_frequency(def.allele_min)
            << ", \"allele_max\": " << format_frequency(def.allele_max)
            << ", \"frequencies\": {";
        bool first = true;
        for (const auto& [allele, freq] : kit.locus_alleles[static_cast<std::size_t>(i)]) {
            if (!first) out << ", ";
            first = false;
            out << "\"" << designation_to_string(allele) << "\": " << format_frequency(freq);
        }
        out << "}}" << (i + 1 < kNumLoci ? "," : "") << "\n";
    }
    out << "  ]\n}\n";
    return out.str();
}

void save_kit_config(const KitConfig& kit, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write kit file: " + path);
    out << kit_to_json(kit);
    if (!out) throw DataError("I/O failure writing kit file: " + path);
}

namespace {

// Discretized bell over the designation range; exactly normalized.
void fill_synthetic_frequencies(KitConfig& kit, int locus, bool with_microvariant) {
    const LocusDef& def = kit.loci[static_cast<std::size_t>(locus)];
    std::vector<std::pair<double, double>> alleles;
    const int lo = static_cast<int>(def.allele_min);
    const int hi = static_cast<int>(def.allele_max);
    const double center = 0.5 * (lo + hi);
    const double spread = 0.22 * (hi - lo) + 0.8;
    for (int a = lo; a <= hi; ++a) {
        const double z = (a - center) / spread;
        alleles.emplace_back(static_cast<double>(a), std::exp(-0.5 * z * z));
    }
    if (with_microvariant) {
        // One x.3 micro-variant just below the modal allele.
        const double micro = std::floor(center) - 1 + 0.3;
        alleles.emplace_back(micro, 0.35);
    }
    double sum = 0.0;
    for (const auto& [a, w] : alleles) sum += w;
    for (const auto& [a, w] : alleles) {
        kit.frequencies.entries[AlleleFrequencyTable::key(locus, a)] = w / sum;
    }
}

KitConfig build_default_kit() {
    // Synthetic stand-in for a 6-dye, 24-locus kit. Names follow common STR
    // markers; frequencies are synthetic, not population data.
    static const char* kNames[kNumLoci] = {
        "D3S1358", "vWA",      "D16S539", "CSF1PO",  "TPOX",    "D8S1179",
        "D21S11",  "D18S51",   "D2S441",  "D19S433", "TH01",    "FGA",
        "D22S1045", "D5S818",  "D13S317", "D7S820",  "SE33",    "D10S1248",
        "D1S1656", "D12S391",  "D2S1338", "D6S1043", "PentaD",  "PentaE"};

    KitConfig kit;
    kit.stutter = {{{0.05, 0.002, }, {0.01, 0.0005}, {0.012, 0.0005}, {0.02, 0.001}}};
    for (int i = 0; i < kNumLoci; ++i) {
        LocusDef def;
        def.name = kNames[i];
        def.index = i;
        def.dye = static_cast<Dye>(i / 4);
        const int slot = i % 4; // four staggered size windows per dye lane
        def.repeat_unit_bp = (i >= 22) ? 5.0 : 4.0;
        def.allele_min = 5.0 + slot;
        def.allele_max = def.allele_min + 15.0;
        def.size_offset_bp = 60.0 + 100.0 * slot - def.allele_min * def.repeat_unit_bp;
        kit.loci[static_cast<std::size_t>(i)] = def;
    }
    kit.frequencies.sample_size_2n = 1000;
    for (int i = 0; i < kNumLoci; ++i) {
        fill_synthetic_frequencies(kit, i, i % 5 == 2);
    }
    validate(kit);
    return kit;
}

} // namespace

const KitConfig& default_kit() {
    static const KitConfig kit = build_default_kit();
    return kit;
}

} // namespace deepnoc

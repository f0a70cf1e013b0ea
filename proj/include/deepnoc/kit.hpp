#pragma once

// 24-locus STR profiling kit: locus layout, allele->size mapping and
// population allele frequencies.

#include <array>
#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace deepnoc {

inline constexpr int kNumLoci = 24;
inline constexpr int kNumDyes = 6;
inline constexpr int kMaxPeaksPerLocus = 50;
inline constexpr int kNumPeakFeatures = 89;
inline constexpr int kMaxNoc = 10;
inline constexpr double kHeightNormalizerRfu = 33000.0;

enum class Dye : std::uint8_t { Blue = 0, Green, Yellow, Red, Purple, Orange };

const char* dye_name(Dye dye);
const char* dye_hex_color(Dye dye);
Dye dye_from_name(const std::string& name); // throws DataError on unknown name

// Allele designations are multiples of 0.1 (micro-variants like 9.3); this
// quantization gives exact map keys and exact equality.
inline int designation_key(double allele) {
    return static_cast<int>(allele * 10.0 + (allele >= 0.0 ? 0.5 : -0.5));
}

// Canonical text form: "12" or "9.3".
std::string designation_to_string(double allele);

struct LocusDef {
    std::string name;
    int index = 0; // fixed kit order 0..23, drives one-hot encoding
    Dye dye = Dye::Blue;
    double repeat_unit_bp = 4.0;
    double size_offset_bp = 0.0;
    double allele_min = 0.0;
    double allele_max = 0.0;
};

// Per stutter type: expected ratio = clamp(base + slope*(allele - allele_min), 0, 0.5).
struct StutterExpectation {
    double base_ratio = 0.0;
    double slope_per_repeat = 0.0;
};

struct AlleleFrequencyTable {
    // key = locus * 1000000 + designation_key(allele)
    std::unordered_map<std::int64_t, double> entries;
    int sample_size_2n = 0;
    double minimum_frequency = 0.0;

    static std::int64_t key(int locus, double allele) {
        return static_cast<std::int64_t>(locus) * 1000000 + designation_key(allele);
    }
};

struct KitConfig {
    std::array<LocusDef, kNumLoci> loci;
    AlleleFrequencyTable frequencies;
    std::array<StutterExpectation, 4> stutter; // back, double back, forward, point2

    // Derived: per locus, (designation, frequency) sorted by designation,
    // used for donor genotype sampling. Rebuilt on load.
    std::array<std::vector<std::pair<double, double>>, kNumLoci> locus_alleles;
};

// Kit JSON: { "loci": [ {name, dye, repeat_unit_bp, size_offset_bp, allele_min,
// allele_max, frequencies: {"9": 0.1, ...}} x24 ], "sample_size_2N": int,
// optional "stutter": {back: {base_ratio, slope_per_repeat}, ...} }.
// Array order defines the one-hot locus index.
KitConfig load_kit_config(const std::string& path);
KitConfig parse_kit_json(const std::string& text, const std::string& origin);
void save_kit_config(const KitConfig& kit, const std::string& path);
std::string kit_to_json(const KitConfig& kit);

// Bundled 24-locus kit with synthetic frequencies, so the tool runs without
// licensed population data. Not real population values.
const KitConfig& default_kit();

// size = offset + floor(allele) * repeat + frac_digits(allele); micro-variant
// digits count as single base pairs (9.3 adds 3 bp). No range check; stutter
// positions may fall outside the kit's designation range.
double allele_size_unchecked(const KitConfig& kit, int locus, double allele);

// Range-checked variant; throws DataError when allele is outside
// [allele_min, allele_max] for the locus.
double allele_size(const KitConfig& kit, int locus, double allele);

// Table value if present, else the kit minimum frequency. Never 0, never > 1.
double allele_frequency(const KitConfig& kit, int locus, double allele);

// Nearest designation for a fragment of this size at the locus, clamped into
// the locus range. Used to place pull-up artefacts.
double designation_from_size(const KitConfig& kit, int locus, double size_bp);

// Locus of the given dye whose size window contains size_bp, or -1.
int locus_for_size(const KitConfig& kit, Dye dye, double size_bp);

} // namespace deepnoc

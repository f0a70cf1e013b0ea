#pragma once

// Peak-level stochastic simulation of mixed STR profiles. Produces the same
// downstream interface as a full signal pipeline (peak records with a label
// probability) without synthesizing raw electropherogram traces.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deepnoc/kit.hpp"
#include "deepnoc/rng.hpp"

namespace deepnoc {

enum class StutterType : int { Back = 0, DoubleBack = 1, Forward = 2, Point2 = 3 };
inline constexpr int kNumStutterTypes = 4;

// Designation displacement of the stutter child relative to its parent.
inline constexpr double kStutterDelta[kNumStutterTypes] = {-1.0, -2.0, +1.0, -0.2};

const char* stutter_type_name(StutterType type);

struct StutterParams {
    double base_ratio = 0.0;
    double slope_per_repeat = 0.0;
    double ratio_cv = 0.0;
};

struct BetaParams {
    double alpha = 1.0;
    double beta = 1.0;
};

struct SimParams {
    int noc_min = 1;
    int noc_max = 10;
    double template_rfu_low = 30.0;
    double template_rfu_high = 30000.0;
    double degradation_max = 0.01; // per-donor decay constant, per bp
    double peak_height_cv = 0.3;
    std::array<StutterParams, kNumStutterTypes> stutter = {
        {{0.05, 0.002, 0.2}, {0.01, 0.0005, 0.3}, {0.012, 0.0005, 0.3}, {0.02, 0.001, 0.3}}};
    double artefact_rate = 8.0;          // expected random artefact peaks per profile
    double pullup_threshold_rfu = 10000.0;
    BetaParams plp_true{20.0, 1.5};      // plp draw for mostly-real peaks
    BetaParams plp_artefact{1.5, 8.0};   // plp draw for mostly-artefactual peaks
    double noise_floor_rfu = 5.0;
    double saturation_rfu = 33000.0;
    std::uint64_t seed = 0;

    void validate() const; // throws DataError
};

struct DonorProfile {
    // Unordered allele pair per locus, stored low designation first;
    // homozygotes repeat the allele.
    std::array<std::pair<double, double>, kNumLoci> genotypes;
};

struct SimulatedPeak {
    int locus = 0;
    double allele = 0.0;
    double size_bp = 0.0;
    double height_rfu = 0.0;
    double allelic_rfu = 0.0;
    double stutter_rfu = 0.0;
    double artefact_rfu = 0.0;
    // Allele copies this designation in each donor's genotype (0..2),
    // donors ordered by descending template.
    std::vector<std::uint8_t> donor_copies;
    double plp = 0.0;

    double height() const { return height_rfu; }
};

struct SimulatedProfile {
    int noc = 0;
    std::vector<double> donor_templates_rfu; // descending
    std::vector<double> donor_proportions;   // descending, sums to 1
    std::uint64_t seed_used = 0;
    std::vector<SimulatedPeak> peaks;        // sorted by (locus, designation)
};

// Two alleles per locus drawn i.i.d. from the locus frequency distribution.
DonorProfile sample_donor(const KitConfig& kit, Rng& rng);

// clamp(base + slope * (allele - allele_min), 0, 0.5) with the kit's stutter
// expectation parameters; `allele` is the parent designation.
double expected_stutter_ratio(const KitConfig& kit, int locus, double allele, StutterType type);

SimulatedProfile simulate_profile(const KitConfig& kit, const SimParams& params, Rng& rng);

// n profiles with independent per-record streams derived from params.seed.
std::vector<SimulatedProfile> simulate_profiles(const KitConfig& kit, const SimParams& params,
                                                std::size_t n, int threads = 0);

struct NocBucket {
    std::size_t count = 0;
    double peak_count_mean = 0.0;
    std::size_t peak_count_min = 0;
    std::size_t peak_count_max = 0;
    double total_template_mean = 0.0;
};

struct DatasetSummary {
    std::size_t records = 0;
    std::array<NocBucket, kMaxNoc> per_noc; // index = noc - 1
};

// Writes n profiles as dataset JSONL; per-record seed = stream_seed(seed, i),
// so output bytes do not depend on the worker count.
DatasetSummary simulate_dataset(const KitConfig& kit, const SimParams& params, std::size_t n,
                                const std::string& out_path, int threads = 0);

DatasetSummary summarize_profiles(const std::vector<SimulatedProfile>& profiles);

} // namespace deepnoc

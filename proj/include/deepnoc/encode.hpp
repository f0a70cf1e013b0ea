#pragma once

// Converts labelled profiles into the [24 x 50 x 89] input tensor and the six
// labelled output arrays. A compact active-row form is kept alongside the
// dense form; the dense tensors are derived from it.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deepnoc/kit.hpp"
#include "deepnoc/simulate.hpp"

namespace deepnoc {

inline constexpr int kPeakCountClasses = 21;  // 0..20 alleles at a designation
inline constexpr int kLocusCountClasses = 20; // 1..20 alleles at a locus
inline constexpr double kDefaultPlpFilterThreshold = 0.97;

// Removes every peak whose artefact probability (1 - plp) strictly exceeds
// `threshold`; at the default 0.97 that removes peaks with plp < 0.03.
SimulatedProfile filter_artefact_peaks(const SimulatedProfile& profile,
                                       double threshold = kDefaultPlpFilterThreshold);

// Stutter relations between peaks at one locus. Indices are positions in the
// per-locus peak list; -1 means no link.
struct StutterLinks {
    std::array<int, kNumStutterTypes> parent{{-1, -1, -1, -1}}; // this peak is a stutter child of
    std::array<int, kNumStutterTypes> child{{-1, -1, -1, -1}};  // this peak is the parent of
};

// `locus_peaks` must be sorted ascending by designation. A pair links as type
// t when parent.allele - child.allele matches the type displacement within
// 0.01; with duplicate candidates the closest-height one wins.
std::vector<StutterLinks> stutter_linkage(const std::vector<const SimulatedPeak*>& locus_peaks);

// Mixture proportions for 10 hypothetical donors from successive subtraction
// of plp-weighted peak heights; superfluous donors receive a small default
// floor. Scale-invariant, non-increasing, sums to 1. Throws on empty profiles.
std::array<double, kMaxNoc> smart_start(const SimulatedProfile& profile);

struct ProfileTensor {
    std::vector<float> data; // 24 x 50 x 89, row-major

    ProfileTensor() : data(static_cast<std::size_t>(kNumLoci) * kMaxPeaksPerLocus * kNumPeakFeatures, 0.0f) {}
    float& at(int locus, int peak, int feature) {
        return data[(static_cast<std::size_t>(locus) * kMaxPeaksPerLocus + static_cast<std::size_t>(peak)) *
                        kNumPeakFeatures +
                    static_cast<std::size_t>(feature)];
    }
    const float& at(int locus, int peak, int feature) const {
        return data[(static_cast<std::size_t>(locus) * kMaxPeaksPerLocus + static_cast<std::size_t>(peak)) *
                        kNumPeakFeatures +
                    static_cast<std::size_t>(feature)];
    }
};

struct LabelSet {
    std::vector<float> peak_prop_allelic;  // 24 x 50
    std::vector<float> peak_allele_count;  // 24 x 50 x 21, one-hot
    std::vector<float> locus_mixture;      // 24 x 10, rows sum to 1
    std::vector<float> locus_allele_count; // 24 x 20, one-hot
    std::array<float, kMaxNoc> profile_mixture{};
    std::array<float, kMaxNoc> profile_noc{};

    LabelSet()
        : peak_prop_allelic(static_cast<std::size_t>(kNumLoci) * kMaxPeaksPerLocus, 0.0f),
          peak_allele_count(static_cast<std::size_t>(kNumLoci) * kMaxPeaksPerLocus * kPeakCountClasses, 0.0f),
          locus_mixture(static_cast<std::size_t>(kNumLoci) * kMaxNoc, 0.0f),
          locus_allele_count(static_cast<std::size_t>(kNumLoci) * kLocusCountClasses, 0.0f) {}
};

// Compact per-profile training record: only the captured (active) peak rows.
// Rows are grouped by locus in kit order and sorted by size within a locus,
// matching the dense tensor exactly.
struct EncodedProfile {
    std::vector<float> rows;            // n_active x 89
    std::vector<std::int16_t> row_locus; // locus index per active row
    std::vector<float> prop_allelic;    // label, per active row
    std::vector<std::int16_t> peak_count_class; // label, 0..20 per active row
    std::array<float, kNumLoci * kMaxNoc> locus_mixture{};
    std::array<std::int16_t, kNumLoci> locus_count_class{}; // 0-based, value 2*noc-1
    std::array<float, kMaxNoc> profile_mixture{};
    int noc = 0;

    int active_rows() const { return static_cast<int>(row_locus.size()); }
};

// `profile` must already be artefact-filtered. Captures at most 50 peaks per
// locus (smallest sizes first, ties by height descending).
EncodedProfile encode_compact(const SimulatedProfile& profile, const KitConfig& kit);

ProfileTensor encode_profile(const SimulatedProfile& profile, const KitConfig& kit);
LabelSet build_labels(const SimulatedProfile& profile, const KitConfig& kit);

ProfileTensor tensor_from_compact(const EncodedProfile& encoded);
LabelSet labels_from_compact(const EncodedProfile& encoded);
EncodedProfile compact_from_dense(const ProfileTensor& tensor, const LabelSet& labels);

// Tensor cache (binary): magic "DNOC1", u32 version, u32 record count, then
// per record six u32 shape headers {24, 50, 89, 21, 10, 20} followed by
// little-endian 32-bit floats, row-major: input tensor, then outputs 1-6.
void write_tensor_cache(const std::string& path, const std::vector<EncodedProfile>& records);
std::vector<EncodedProfile> read_tensor_cache(const std::string& path);

} // namespace deepnoc

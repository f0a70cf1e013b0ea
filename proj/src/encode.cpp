#include "deepnoc/encode.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "deepnoc/error.hpp"

namespace deepnoc {

SimulatedProfile filter_artefact_peaks(const SimulatedProfile& profile, double threshold) {
    if (threshold < 0.0 || threshold > 1.0)
        throw DataError("plp filter threshold must be in [0, 1]");
    SimulatedProfile out = profile;
    out.peaks.clear();
    for (const SimulatedPeak& p : profile.peaks) {
        if (1.0 - p.plp > threshold) continue;
        out.peaks.push_back(p);
    }
    return out;
}

std::vector<StutterLinks> stutter_linkage(const std::vector<const SimulatedPeak*>& locus_peaks) {
    const int n = static_cast<int>(locus_peaks.size());
    std::vector<StutterLinks> links(static_cast<std::size_t>(n));
    for (int c = 0; c < n; ++c) {
        for (int t = 0; t < kNumStutterTypes; ++t) {
            // parent.allele - child.allele == -delta for this type
            const double want = -kStutterDelta[t];
            int best = -1;
            double best_gap = 0.0;
            for (int p = 0; p < n; ++p) {
                if (p == c) continue;
                const double diff = locus_peaks[static_cast<std::size_t>(p)]->allele -
                                    locus_peaks[static_cast<std::size_t>(c)]->allele;
                if (std::abs(diff - want) > 0.01) continue;
                const double gap = std::abs(locus_peaks[static_cast<std::size_t>(p)]->height_rfu -
                                            locus_peaks[static_cast<std::size_t>(c)]->height_rfu);
                if (best < 0 || gap < best_gap) {
                    best = p;
                    best_gap = gap;
                }
            }
            links[static_cast<std::size_t>(c)].parent[static_cast<std::size_t>(t)] = best;
            if (best >= 0) {
                // Mirror: the parent gets this child, keeping the closest-height
                // child when several compete.
                auto& slot = links[static_cast<std::size_t>(best)].child[static_cast<std::size_t>(t)];
                if (slot < 0) {
                    slot = c;
                } else {
                    const double incumbent =
                        std::abs(locus_peaks[static_cast<std::size_t>(slot)]->height_rfu -
                                 locus_peaks[static_cast<std::size_t>(best)]->height_rfu);
                    if (best_gap < incumbent) slot = c;
                }
            }
        }
    }
    return links;
}

std::array<double, kMaxNoc> smart_start(const SimulatedProfile& profile) {
    if (profile.peaks.empty()) throw DataError("smart_start requires at least one peak");

    std::array<std::vector<double>, kNumLoci> weighted;
    for (const SimulatedPeak& p : profile.peaks) {
        weighted[static_cast<std::size_t>(p.locus)].push_back(p.height_rfu * p.plp);
    }

    std::array<double, kMaxNoc> t{};
    for (int k = 0; k < kMaxNoc; ++k) {
        // Mean of the two largest unexplained weighted heights per locus; a
        // single remaining peak counts twice, exhausted loci are skipped.
        std::vector<double> locus_estimates;
        for (const auto& heights : weighted) {
            double top1 = 0.0, top2 = 0.0;
            for (double h : heights) {
                if (h > top1) {
                    top2 = top1;
                    top1 = h;
                } else if (h > top2) {
                    top2 = h;
                }
            }
            if (top1 <= 0.0) continue;
            locus_estimates.push_back(top2 > 0.0 ? 0.5 * (top1 + top2) : top1);
        }
        double estimate = 0.0;
        if (!locus_estimates.empty()) {
            std::sort(locus_estimates.begin(), locus_estimates.end());
            const std::size_t m = locus_estimates.size();
            estimate = (m % 2 == 1) ? locus_estimates[m / 2]
                                    : 0.5 * (locus_estimates[m / 2 - 1] + locus_estimates[m / 2]);
        }
        // Clamp so the sequence cannot rise when exhausted loci drop out of
        // the median.
        if (k > 0) estimate = std::min(estimate, t[static_cast<std::size_t>(k - 1)]);
        t[static_cast<std::size_t>(k)] = estimate;

        // Subtract the explained amount from the two largest heights at every
        // locus.
        for (auto& heights : weighted) {
            if (heights.empty()) continue;
            std::size_t i1 = 0;
            for (std::size_t i = 1; i < heights.size(); ++i) {
                if (heights[i] > heights[i1]) i1 = i;
            }
            std::size_t i2 = i1;
            for (std::size_t i = 0; i < heights.size(); ++i) {
                if (i == i1) continue;
                if (i2 == i1 || heights[i] > heights[i2]) i2 = i;
            }
            heights[i1] -= std::min(estimate, heights[i1]);
            if (i2 != i1) heights[i2] -= std::min(estimate, heights[i2]);
        }
    }

    if (t[0] <= 0.0) {
        // No usable weighted height anywhere; fall back to uniform.
        std::array<double, kMaxNoc> uniform;
        uniform.fill(1.0 / kMaxNoc);
        return uniform;
    }
    const double floor = 0.01 * t[0];
    for (double& v : t) {
        if (v < floor) v = floor;
    }
    double sum = 0.0;
    for (double v : t) sum += v;
    for (double& v : t) v /= sum;
    return t;
}

namespace {

float capped_height_feature(double rfu) {
    return static_cast<float>(std::min(rfu, kHeightNormalizerRfu) / kHeightNormalizerRfu);
}

int total_copies(const SimulatedPeak& p) {
    int total = 0;
    for (std::uint8_t c : p.donor_copies) total += c;
    return std::min(total, kPeakCountClasses - 1);
}

} // namespace

EncodedProfile encode_compact(const SimulatedProfile& profile, const KitConfig& kit) {
    if (profile.noc < 1 || profile.noc > kMaxNoc)
        throw DataError("profile noc " + std::to_string(profile.noc) + " outside [1, 10]");

    EncodedProfile enc;
    enc.noc = profile.noc;

    // Group peaks by locus; order within a locus is ascending designation for
    // linkage, then ascending size for capture.
    std::array<std::vector<const SimulatedPeak*>, kNumLoci> by_locus;
    for (const SimulatedPeak& p : profile.peaks) {
        if (p.locus < 0 || p.locus >= kNumLoci)
            throw DataError("unknown locus index " + std::to_string(p.locus));
        by_locus[static_cast<std::size_t>(p.locus)].push_back(&p);
    }

    const std::size_t total_peaks = profile.peaks.size();
    const float profile_count_feature = static_cast<float>(total_peaks) / 1000.0f;

    std::array<double, kMaxNoc> proportions{};
    if (!profile.peaks.empty()) proportions = smart_start(profile);

    for (int locus = 0; locus < kNumLoci; ++locus) {
        auto& peaks = by_locus[static_cast<std::size_t>(locus)];
        std::stable_sort(peaks.begin(), peaks.end(),
                         [](const SimulatedPeak* a, const SimulatedPeak* b) {
                             if (a->allele != b->allele) return a->allele < b->allele;
                             return a->height_rfu > b->height_rfu;
                         });
        const std::vector<StutterLinks> links = stutter_linkage(peaks);

        // Capture order: size ascending, ties by height descending.
        std::vector<int> order(peaks.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
            const SimulatedPeak* pa = peaks[static_cast<std::size_t>(a)];
            const SimulatedPeak* pb = peaks[static_cast<std::size_t>(b)];
            if (pa->size_bp != pb->size_bp) return pa->size_bp < pb->size_bp;
            return pa->height_rfu > pb->height_rfu;
        });
        const int captured = std::min<int>(static_cast<int>(order.size()), kMaxPeaksPerLocus);

        const float locus_count_feature = static_cast<float>(peaks.size()) / 100.0f;

        for (int slot = 0; slot < captured; ++slot) {
            const int idx = order[static_cast<std::size_t>(slot)];
            const SimulatedPeak& p = *peaks[static_cast<std::size_t>(idx)];
            const StutterLinks& link = links[static_cast<std::size_t>(idx)];

            const std::size_t base = enc.rows.size();
            enc.rows.resize(base + kNumPeakFeatures, 0.0f);
            float* f = enc.rows.data() + base;

            f[locus] = 1.0f;
            f[24] = static_cast<float>(p.allele / 100.0);
            f[25] = static_cast<float>(p.size_bp / 100.0);
            f[26] = capped_height_feature(p.height_rfu);
            f[27] = static_cast<float>(allele_frequency(kit, locus, p.allele));
            f[28] = static_cast<float>(p.plp);

            // Stutter-child blocks: this peak as a stutter of its parent.
            for (int t = 0; t < kNumStutterTypes; ++t) {
                const int parent_idx = link.parent[static_cast<std::size_t>(t)];
                if (parent_idx < 0) continue;
                const SimulatedPeak& parent = *peaks[static_cast<std::size_t>(parent_idx)];
                float* b = f + 29 + 6 * t;
                b[0] = static_cast<float>(parent.allele / 100.0);
                b[1] = capped_height_feature(parent.height_rfu);
                b[2] = static_cast<float>(
                    std::min(parent.height_rfu > 0.0 ? p.height_rfu / parent.height_rfu : 0.0, 1.0));
                b[3] = static_cast<float>(
                    expected_stutter_ratio(kit, locus, parent.allele, static_cast<StutterType>(t)));
                b[4] = static_cast<float>(allele_frequency(kit, locus, parent.allele));
                b[5] = static_cast<float>(parent.plp);
            }
            // Parent-of-stutter blocks: this peak as the parent of a stutter.
            for (int t = 0; t < kNumStutterTypes; ++t) {
                const int child_idx = link.child[static_cast<std::size_t>(t)];
                if (child_idx < 0) continue;
                const SimulatedPeak& child = *peaks[static_cast<std::size_t>(child_idx)];
                float* b = f + 53 + 6 * t;
                b[0] = static_cast<float>(child.allele / 100.0);
                b[1] = capped_height_feature(child.height_rfu);
                b[2] = static_cast<float>(
                    std::min(p.height_rfu > 0.0 ? child.height_rfu / p.height_rfu : 0.0, 1.0));
                b[3] = static_cast<float>(
                    expected_stutter_ratio(kit, locus, p.allele, static_cast<StutterType>(t)));
                b[4] = static_cast<float>(allele_frequency(kit, locus, child.allele));
                b[5] = static_cast<float>(child.plp);
            }

            f[77] = locus_count_feature;
            f[78] = profile_count_feature;
            for (int d = 0; d < kMaxNoc; ++d) {
                f[79 + d] = static_cast<float>(proportions[static_cast<std::size_t>(d)]);
            }

            enc.row_locus.push_back(static_cast<std::int16_t>(locus));
            enc.prop_allelic.push_back(
                static_cast<float>(p.height_rfu > 0.0 ? p.allelic_rfu / p.height_rfu : 0.0));
            enc.peak_count_class.push_back(static_cast<std::int16_t>(total_copies(p)));
        }

        // Locus labels use the full post-filter peak set, not just captured rows.
        enc.locus_count_class[static_cast<std::size_t>(locus)] =
            static_cast<std::int16_t>(2 * profile.noc - 1);
        std::array<double, kMaxNoc> shares{};
        for (const SimulatedPeak* p : peaks) {
            double weight_sum = 0.0;
            for (int d = 0; d < profile.noc; ++d) {
                weight_sum += p->donor_copies[static_cast<std::size_t>(d)] *
                              profile.donor_templates_rfu[static_cast<std::size_t>(d)];
            }
            if (weight_sum <= 0.0 || p->allelic_rfu <= 0.0) continue;
            for (int d = 0; d < profile.noc; ++d) {
                shares[static_cast<std::size_t>(d)] +=
                    p->allelic_rfu * p->donor_copies[static_cast<std::size_t>(d)] *
                    profile.donor_templates_rfu[static_cast<std::size_t>(d)] / weight_sum;
            }
        }
        double share_sum = 0.0;
        for (int d = 0; d < profile.noc; ++d) share_sum += shares[static_cast<std::size_t>(d)];
        for (int d = 0; d < kMaxNoc; ++d) {
            double v;
            if (d >= profile.noc) {
                v = 0.0;
            } else if (share_sum > 0.0) {
                v = shares[static_cast<std::size_t>(d)] / share_sum;
            } else {
                v = 1.0 / profile.noc; // no allelic signal: uniform over present donors
            }
            enc.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)] = static_cast<float>(v);
        }
    }

    for (int d = 0; d < kMaxNoc; ++d) {
        enc.profile_mixture[static_cast<std::size_t>(d)] =
            d < profile.noc ? static_cast<float>(profile.donor_proportions[static_cast<std::size_t>(d)])
                            : 0.0f;
    }
    return enc;
}

ProfileTensor tensor_from_compact(const EncodedProfile& encoded) {
    ProfileTensor tensor;
    std::array<int, kNumLoci> used{};
    const int n = encoded.active_rows();
    for (int i = 0; i < n; ++i) {
        const int locus = encoded.row_locus[static_cast<std::size_t>(i)];
        const int slot = used[static_cast<std::size_t>(locus)]++;
        std::memcpy(&tensor.at(locus, slot, 0),
                    encoded.rows.data() + static_cast<std::size_t>(i) * kNumPeakFeatures,
                    sizeof(float) * kNumPeakFeatures);
    }
    return tensor;
}

LabelSet labels_from_compact(const EncodedProfile& encoded) {
    LabelSet labels;
    std::array<int, kNumLoci> used{};
    const int n = encoded.active_rows();
    for (int i = 0; i < n; ++i) {
        const int locus = encoded.row_locus[static_cast<std::size_t>(i)];
        const int slot = used[static_cast<std::size_t>(locus)]++;
        const std::size_t cell = static_cast<std::size_t>(locus) * kMaxPeaksPerLocus +
                                 static_cast<std::size_t>(slot);
        labels.peak_prop_allelic[cell] = encoded.prop_allelic[static_cast<std::size_t>(i)];
        labels.peak_allele_count[cell * kPeakCountClasses +
                                 static_cast<std::size_t>(
                                     encoded.peak_count_class[static_cast<std::size_t>(i)])] = 1.0f;
    }
    // Padding rows carry the zero-allele class so every one-hot row is valid.
    for (int locus = 0; locus < kNumLoci; ++locus) {
        for (int slot = used[static_cast<std::size_t>(locus)]; slot < kMaxPeaksPerLocus; ++slot) {
            const std::size_t cell = static_cast<std::size_t>(locus) * kMaxPeaksPerLocus +
                                     static_cast<std::size_t>(slot);
            labels.peak_allele_count[cell * kPeakCountClasses] = 1.0f;
        }
    }
    for (int locus = 0; locus < kNumLoci; ++locus) {
        for (int d = 0; d < kMaxNoc; ++d) {
            labels.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)] =
                encoded.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)];
        }
        labels.locus_allele_count[static_cast<std::size_t>(locus) * kLocusCountClasses +
                                  static_cast<std::size_t>(
                                      encoded.locus_count_class[static_cast<std::size_t>(locus)])] = 1.0f;
    }
    labels.profile_mixture = encoded.profile_mixture;
    labels.profile_noc[static_cast<std::size_t>(encoded.noc - 1)] = 1.0f;
    return labels;
}

ProfileTensor encode_profile(const SimulatedProfile& profile, const KitConfig& kit) {
    return tensor_from_compact(encode_compact(profile, kit));
}

LabelSet build_labels(const SimulatedProfile& profile, const KitConfig& kit) {
    return labels_from_compact(encode_compact(profile, kit));
}

EncodedProfile compact_from_dense(const ProfileTensor& tensor, const LabelSet& labels) {
    EncodedProfile enc;
    for (int noc = 1; noc <= kMaxNoc; ++noc) {
        if (labels.profile_noc[static_cast<std::size_t>(noc - 1)] == 1.0f) enc.noc = noc;
    }
    if (enc.noc == 0) throw DataError("tensor cache record has no profile NoC label");
    for (int locus = 0; locus < kNumLoci; ++locus) {
        for (int slot = 0; slot < kMaxPeaksPerLocus; ++slot) {
            bool active = false;
            for (int f = 0; f < kNumPeakFeatures; ++f) {
                if (tensor.at(locus, slot, f) != 0.0f) {
                    active = true;
                    break;
                }
            }
            if (!active) continue;
            const std::size_t base = enc.rows.size();
            enc.rows.resize(base + kNumPeakFeatures);
            std::memcpy(enc.rows.data() + base, &tensor.at(locus, slot, 0),
                        sizeof(float) * kNumPeakFeatures);
            enc.row_locus.push_back(static_cast<std::int16_t>(locus));
            const std::size_t cell = static_cast<std::size_t>(locus) * kMaxPeaksPerLocus +
                                     static_cast<std::size_t>(slot);
            enc.prop_allelic.push_back(labels.peak_prop_allelic[cell]);
            int cls = 0;
            for (int c = 0; c < kPeakCountClasses; ++c) {
                if (labels.peak_allele_count[cell * kPeakCountClasses + static_cast<std::size_t>(c)] ==
                    1.0f)
                    cls = c;
            }
            enc.peak_count_class.push_back(static_cast<std::int16_t>(cls));
        }
        int locus_cls = 0;
        for (int c = 0; c < kLocusCountClasses; ++c) {
            if (labels.locus_allele_count[static_cast<std::size_t>(locus) * kLocusCountClasses +
                                          static_cast<std::size_t>(c)] == 1.0f)
                locus_cls = c;
        }
        enc.locus_count_class[static_cast<std::size_t>(locus)] = static_cast<std::int16_t>(locus_cls);
        for (int d = 0; d < kMaxNoc; ++d) {
            enc.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)] =
                labels.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)];
        }
    }
    enc.profile_mixture = labels.profile_mixture;
    return enc;
}

namespace {

constexpr char kCacheMagic[5] = {'D', 'N', 'O', 'C', '1'};
constexpr std::uint32_t kCacheVersion = 1;
constexpr std::uint32_t kShapeHeader[6] = {kNumLoci, kMaxPeaksPerLocus, kNumPeakFeatures,
                                           kPeakCountClasses, kMaxNoc, kLocusCountClasses};

void write_u32(std::ofstream& out, std::uint32_t v) {
    unsigned char buf[4] = {static_cast<unsigned char>(v & 0xff),
                            static_cast<unsigned char>((v >> 8) & 0xff),
                            static_cast<unsigned char>((v >> 16) & 0xff),
                            static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(buf), 4);
}

std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
    unsigned char buf[4];
    if (!in.read(reinterpret_cast<char*>(buf), 4))
        throw DataError("truncated tensor cache: " + path);
    return static_cast<std::uint32_t>(buf[0]) | (static_cast<std::uint32_t>(buf[1]) << 8) |
           (static_cast<std::uint32_t>(buf[2]) << 16) | (static_cast<std::uint32_t>(buf[3]) << 24);
}

void write_floats(std::ofstream& out, const float* data, std::size_t count) {
    // Little-endian on every supported target; written as raw IEEE-754 bits.
    out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

void read_floats(std::ifstream& in, float* data, std::size_t count, const std::string& path) {
    if (!in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4)))
        throw DataError("truncated tensor cache: " + path);
}

} // namespace

void write_tensor_cache(const std::string& path, const std::vector<EncodedProfile>& records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open output file: " + path);
    out.write(kCacheMagic, 5);
    write_u32(out, kCacheVersion);
    write_u32(out, static_cast<std::uint32_t>(records.size()));
    for (const EncodedProfile& enc : records) {
        for (std::uint32_t dim : kShapeHeader) write_u32(out, dim);
        const ProfileTensor tensor = tensor_from_compact(enc);
        const LabelSet labels = labels_from_compact(enc);
        write_floats(out, tensor.data.data(), tensor.data.size());
        write_floats(out, labels.peak_prop_allelic.data(), labels.peak_prop_allelic.size());
        write_floats(out, labels.peak_allele_count.data(), labels.peak_allele_count.size());
        write_floats(out, labels.locus_mixture.data(), labels.locus_mixture.size());
        write_floats(out, labels.locus_allele_count.data(), labels.locus_allele_count.size());
        write_floats(out, labels.profile_mixture.data(), labels.profile_mixture.size());
        write_floats(out, labels.profile_noc.data(), labels.profile_noc.size());
    }
    if (!out) throw DataError("I/O failure writing tensor cache: " + path);
}

std::vector<EncodedProfile> read_tensor_cache(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open tensor cache: " + path);
    char magic[5];
    if (!in.read(magic, 5) || std::memcmp(magic, kCacheMagic, 5) != 0)
        throw DataError("bad tensor cache magic: " + path);
    const std::uint32_t version = read_u32(in, path);
    if (version != kCacheVersion)
        throw DataError("unsupported tensor cache version " + std::to_string(version) + ": " + path);
    const std::uint32_t count = read_u32(in, path);
    std::vector<EncodedProfile> records;
    records.reserve(count);
    for (std::uint32_t r = 0; r < count; ++r) {
        for (std::uint32_t expect : kShapeHeader) {
            const std::uint32_t dim = read_u32(in, path);
            if (dim != expect)
                throw DataError("tensor cache shape mismatch in record " + std::to_string(r) + ": " +
                                path);
        }
        ProfileTensor tensor;
        LabelSet labels;
        read_floats(in, tensor.data.data(), tensor.data.size(), path);
        read_floats(in, labels.peak_prop_allelic.data(), labels.peak_prop_allelic.size(), path);
        read_floats(in, labels.peak_allele_count.data(), labels.peak_allele_count.size(), path);
        read_floats(in, labels.locus_mixture.data(), labels.locus_mixture.size(), path);
        read_floats(in, labels.locus_allele_count.data(), labels.locus_allele_count.size(), path);
        read_floats(in, labels.profile_mixture.data(), labels.profile_mixture.size(), path);
        read_floats(in, labels.profile_noc.data(), labels.profile_noc.size(), path);
        records.push_back(compact_from_dense(tensor, labels));
    }
    return records;
}

} // namespace deepnoc

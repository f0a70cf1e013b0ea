#include "deepnoc/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include <omp.h>

#include "deepnoc/dataset.hpp"
#include "deepnoc/error.hpp"

namespace deepnoc {

const char* stutter_type_name(StutterType type) {
    switch (type) {
        case StutterType::Back: return "back";
        case StutterType::DoubleBack: return "double_back";
        case StutterType::Forward: return "forward";
        case StutterType::Point2: return "point2";
    }
    return "unknown";
}

void SimParams::validate() const {
    if (noc_min < 1 || noc_max > kMaxNoc || noc_min > noc_max)
        throw DataError("noc range must satisfy 1 <= noc_min <= noc_max <= 10");
    if (template_rfu_low <= 0.0 || template_rfu_high < template_rfu_low)
        throw DataError("template_rfu range must be positive and ordered");
    if (degradation_max < 0.0) throw DataError("degradation_max must be nonnegative");
    if (peak_height_cv < 0.0) throw DataError("peak_height_cv must be nonnegative");
    if (artefact_rate < 0.0) throw DataError("artefact_rate must be nonnegative");
    if (noise_floor_rfu < 0.0) throw DataError("noise_floor_rfu must be nonnegative");
    if (saturation_rfu <= 0.0) throw DataError("saturation_rfu must be positive");
    for (const auto& s : stutter) {
        if (s.base_ratio < 0.0 || s.ratio_cv < 0.0)
            throw DataError("stutter base_ratio and ratio_cv must be nonnegative");
    }
}

DonorProfile sample_donor(const KitConfig& kit, Rng& rng) {
    DonorProfile donor;
    for (int locus = 0; locus < kNumLoci; ++locus) {
        const auto& alleles = kit.locus_alleles[static_cast<std::size_t>(locus)];
        double pair[2];
        for (double& a : pair) {
            const double u = rng.uniform();
            double cum = 0.0;
            a = alleles.back().first;
            for (const auto& [allele, freq] : alleles) {
                cum += freq;
                if (u < cum) {
                    a = allele;
                    break;
                }
            }
        }
        if (pair[0] > pair[1]) std::swap(pair[0], pair[1]);
        donor.genotypes[static_cast<std::size_t>(locus)] = {pair[0], pair[1]};
    }
    return donor;
}

namespace {

double stutter_ratio_formula(double base, double slope, double allele, double allele_min) {
    return std::clamp(base + slope * (allele - allele_min), 0.0, 0.5);
}

} // namespace

double expected_stutter_ratio(const KitConfig& kit, int locus, double allele, StutterType type) {
    const int t = static_cast<int>(type);
    if (t < 0 || t >= kNumStutterTypes) throw DataError("unknown stutter type");
    const StutterExpectation& e = kit.stutter[static_cast<std::size_t>(t)];
    const double allele_min = kit.loci[static_cast<std::size_t>(locus)].allele_min;
    return stutter_ratio_formula(e.base_ratio, e.slope_per_repeat, allele, allele_min);
}

namespace {

struct Mass {
    double allelic = 0.0;
    double stutter = 0.0;
    double artefact = 0.0;
    double total() const { return allelic + stutter + artefact; }
};

// (locus, designation_key) -> mass; std::map keeps iteration order fixed.
using MassMap = std::map<std::pair<int, int>, Mass>;

} // namespace

SimulatedProfile simulate_profile(const KitConfig& kit, const SimParams& params, Rng& rng) {
    SimulatedProfile profile;
    profile.noc = static_cast<int>(rng.uniform_int(params.noc_min, params.noc_max));
    const int noc = profile.noc;

    struct Donor {
        double template_rfu;
        double degradation;
        DonorProfile genotype;
    };
    std::vector<Donor> donors;
    donors.reserve(static_cast<std::size_t>(noc));
    for (int d = 0; d < noc; ++d) {
        Donor donor;
        donor.template_rfu = rng.log_uniform(params.template_rfu_low, params.template_rfu_high);
        donor.degradation = rng.uniform(0.0, params.degradation_max);
        donor.genotype = sample_donor(kit, rng);
        donors.push_back(donor);
    }
    std::stable_sort(donors.begin(), donors.end(),
                     [](const Donor& a, const Donor& b) { return a.template_rfu > b.template_rfu; });

    const double cv = params.peak_height_cv;
    const double sigma = cv > 0.0 ? std::sqrt(std::log1p(cv * cv)) : 0.0;

    MassMap mass;

    // Allelic contributions, one draw per allele copy.
    for (int locus = 0; locus < kNumLoci; ++locus) {
        for (const Donor& donor : donors) {
            const auto& [a1, a2] = donor.genotype.genotypes[static_cast<std::size_t>(locus)];
            for (const double allele : {a1, a2}) {
                const double size = allele_size_unchecked(kit, locus, allele);
                const double expected = donor.template_rfu * std::exp(-donor.degradation * size);
                const double realized = expected * rng.lognormal(0.0, sigma);
                mass[{locus, designation_key(allele)}].allelic += realized;
            }
        }
    }

    // Stutter spawned off each allelic position, per type.
    {
        std::vector<std::pair<std::pair<int, int>, double>> allelic_snapshot;
        allelic_snapshot.reserve(mass.size());
        for (const auto& [key, m] : mass) allelic_snapshot.emplace_back(key, m.allelic);
        for (const auto& [key, allelic] : allelic_snapshot) {
            const auto [locus, akey] = key;
            const double allele = akey / 10.0;
            const double allele_min = kit.loci[static_cast<std::size_t>(locus)].allele_min;
            for (int t = 0; t < kNumStutterTypes; ++t) {
                const StutterParams& sp = params.stutter[static_cast<std::size_t>(t)];
                const double expected =
                    stutter_ratio_formula(sp.base_ratio, sp.slope_per_repeat, allele, allele_min);
                if (expected <= 0.0) continue;
                const double sigma_s =
                    sp.ratio_cv > 0.0 ? std::sqrt(std::log1p(sp.ratio_cv * sp.ratio_cv)) : 0.0;
                const double ratio = expected * rng.lognormal(0.0, sigma_s);
                const double child = allele + kStutterDelta[t];
                mass[{locus, designation_key(child)}].stutter += allelic * ratio;
            }
        }
    }

    // Pull-up: strong peaks may bleed into an adjacent dye lane at the same size.
    {
        std::vector<std::pair<std::pair<int, int>, double>> pullups;
        for (const auto& [key, m] : mass) {
            const double h = m.total();
            if (h <= params.pullup_threshold_rfu) continue;
            if (rng.uniform() >= 0.3) continue;
            const double fraction = rng.uniform(0.01, 0.05);
            const auto [locus, akey] = key;
            const int dye = static_cast<int>(kit.loci[static_cast<std::size_t>(locus)].dye);
            int target_dye;
            if (dye == 0) {
                target_dye = 1;
            } else if (dye == kNumDyes - 1) {
                target_dye = kNumDyes - 2;
            } else {
                target_dye = dye + (rng.uniform() < 0.5 ? -1 : 1);
            }
            const double size = allele_size_unchecked(kit, locus, akey / 10.0);
            const int target = locus_for_size(kit, static_cast<Dye>(target_dye), size);
            if (target < 0) continue; // no locus spans this size in that lane
            const double designation = designation_from_size(kit, target, size);
            pullups.push_back({{target, designation_key(designation)}, h * fraction});
        }
        for (const auto& [key, h] : pullups) mass[key].artefact += h;
    }

    // Random artefact peaks at uniform positions.
    {
        const std::uint32_t count = rng.poisson(params.artefact_rate);
        const double lo = std::max(params.noise_floor_rfu, 1e-3);
        for (std::uint32_t i = 0; i < count; ++i) {
            const int locus = static_cast<int>(rng.uniform_int(0, kNumLoci - 1));
            const LocusDef& def = kit.loci[static_cast<std::size_t>(locus)];
            const double designation =
                designation_key(rng.uniform(def.allele_min, def.allele_max)) / 10.0;
            const double height = rng.log_uniform(lo, 10.0 * lo);
            mass[{locus, designation_key(designation)}].artefact += height;
        }
    }

    // Finalize: noise floor, saturation cap, plp, donor copies.
    profile.peaks.reserve(mass.size());
    for (const auto& [key, m] : mass) {
        double h = m.total();
        if (h < params.noise_floor_rfu) continue;
        Mass scaled = m;
        if (h > params.saturation_rfu) {
            const double scale = params.saturation_rfu / h;
            scaled.allelic *= scale;
            scaled.stutter *= scale;
            scaled.artefact *= scale;
            h = params.saturation_rfu;
        }
        SimulatedPeak peak;
        peak.locus = key.first;
        peak.allele = key.second / 10.0;
        peak.size_bp = allele_size_unchecked(kit, peak.locus, peak.allele);
        peak.height_rfu = h;
        peak.allelic_rfu = scaled.allelic;
        peak.stutter_rfu = scaled.stutter;
        peak.artefact_rfu = scaled.artefact;
        const bool mostly_artefact = scaled.artefact / h >= 0.5;
        const BetaParams& bp = mostly_artefact ? params.plp_artefact : params.plp_true;
        peak.plp = rng.beta(bp.alpha, bp.beta);
        peak.donor_copies.resize(static_cast<std::size_t>(noc));
        for (int d = 0; d < noc; ++d) {
            const auto& [g1, g2] = donors[static_cast<std::size_t>(d)]
                                       .genotype.genotypes[static_cast<std::size_t>(peak.locus)];
            int copies = 0;
            if (designation_key(g1) == key.second) ++copies;
            if (designation_key(g2) == key.second) ++copies;
            peak.donor_copies[static_cast<std::size_t>(d)] = static_cast<std::uint8_t>(copies);
        }
        profile.peaks.push_back(std::move(peak));
    }

    profile.donor_templates_rfu.reserve(static_cast<std::size_t>(noc));
    double total_template = 0.0;
    for (const Donor& donor : donors) {
        profile.donor_templates_rfu.push_back(donor.template_rfu);
        total_template += donor.template_rfu;
    }
    profile.donor_proportions.reserve(static_cast<std::size_t>(noc));
    for (const Donor& donor : donors) {
        profile.donor_proportions.push_back(donor.template_rfu / total_template);
    }
    return profile;
}

std::vector<SimulatedProfile> simulate_profiles(const KitConfig& kit, const SimParams& params,
                                                std::size_t n, int threads) {
    params.validate();
    std::vector<SimulatedProfile> profiles(n);
    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 16) num_threads(nthreads)
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
        const std::uint64_t seed = stream_seed(params.seed, static_cast<std::uint64_t>(i));
        Rng rng(seed);
        profiles[static_cast<std::size_t>(i)] = simulate_profile(kit, params, rng);
        profiles[static_cast<std::size_t>(i)].seed_used = seed;
    }
    return profiles;
}

DatasetSummary summarize_profiles(const std::vector<SimulatedProfile>& profiles) {
    DatasetSummary summary;
    summary.records = profiles.size();
    std::array<double, kMaxNoc> template_sum{};
    std::array<double, kMaxNoc> peak_sum{};
    for (const SimulatedProfile& p : profiles) {
        NocBucket& b = summary.per_noc[static_cast<std::size_t>(p.noc - 1)];
        const std::size_t peaks = p.peaks.size();
        if (b.count == 0) {
            b.peak_count_min = peaks;
            b.peak_count_max = peaks;
        } else {
            b.peak_count_min = std::min(b.peak_count_min, peaks);
            b.peak_count_max = std::max(b.peak_count_max, peaks);
        }
        b.count += 1;
        peak_sum[static_cast<std::size_t>(p.noc - 1)] += static_cast<double>(peaks);
        template_sum[static_cast<std::size_t>(p.noc - 1)] += std::accumulate(
            p.donor_templates_rfu.begin(), p.donor_templates_rfu.end(), 0.0);
    }
    for (int k = 0; k < kMaxNoc; ++k) {
        NocBucket& b = summary.per_noc[static_cast<std::size_t>(k)];
        if (b.count == 0) continue;
        b.peak_count_mean = peak_sum[static_cast<std::size_t>(k)] / static_cast<double>(b.count);
        b.total_template_mean =
            template_sum[static_cast<std::size_t>(k)] / static_cast<double>(b.count);
    }
    return summary;
}

DatasetSummary simulate_dataset(const KitConfig& kit, const SimParams& params, std::size_t n,
                                const std::string& out_path, int threads) {
    if (n < 1) throw DataError("simulate_dataset requires n >= 1");
    params.validate();
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw DataError("cannot open output file: " + out_path);

    DatasetSummary summary;
    summary.records = n;
    std::array<double, kMaxNoc> template_sum{};
    std::array<double, kMaxNoc> peak_sum{};
    std::array<bool, kMaxNoc> seen{};

    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
    const std::size_t chunk = 256;
    std::vector<std::string> lines(chunk);
    std::vector<SimulatedProfile> generated(chunk);
    for (std::size_t base = 0; base < n; base += chunk) {
        const std::size_t count = std::min(chunk, n - base);
#pragma omp parallel for schedule(dynamic, 4) num_threads(nthreads)
        for (std::int64_t j = 0; j < static_cast<std::int64_t>(count); ++j) {
            const std::uint64_t idx = base + static_cast<std::uint64_t>(j);
            const std::uint64_t seed = stream_seed(params.seed, idx);
            Rng rng(seed);
            SimulatedProfile p = simulate_profile(kit, params, rng);
            p.seed_used = seed;
            lines[static_cast<std::size_t>(j)] = profile_to_jsonl(p);
            generated[static_cast<std::size_t>(j)] = std::move(p);
        }
        for (std::size_t j = 0; j < count; ++j) {
            out << lines[j] << '\n';
            const SimulatedProfile& p = generated[j];
            NocBucket& b = summary.per_noc[static_cast<std::size_t>(p.noc - 1)];
            const std::size_t peaks = p.peaks.size();
            if (!seen[static_cast<std::size_t>(p.noc - 1)]) {
                b.peak_count_min = peaks;
                b.peak_count_max = peaks;
                seen[static_cast<std::size_t>(p.noc - 1)] = true;
            } else {
                b.peak_count_min = std::min(b.peak_count_min, peaks);
                b.peak_count_max = std::max(b.peak_count_max, peaks);
            }
            b.count += 1;
            peak_sum[static_cast<std::size_t>(p.noc - 1)] += static_cast<double>(peaks);
            template_sum[static_cast<std::size_t>(p.noc - 1)] += std::accumulate(
                p.donor_templates_rfu.begin(), p.donor_templates_rfu.end(), 0.0);
        }
    }
    if (!out) throw DataError("I/O failure writing dataset: " + out_path);
    for (int k = 0; k < kMaxNoc; ++k) {
        NocBucket& b = summary.per_noc[static_cast<std::size_t>(k)];
        if (b.count == 0) continue;
        b.peak_count_mean = peak_sum[static_cast<std::size_t>(k)] / static_cast<double>(b.count);
        b.total_template_mean =
            template_sum[static_cast<std::size_t>(k)] / static_cast<double>(b.count);
    }
    return summary;
}

} // namespace deepnoc

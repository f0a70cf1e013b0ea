#pragma once

// Shared fixtures for the unit tests.

#include <string>
#include <vector>

#include "deepnoc/encode.hpp"
#include "deepnoc/kit.hpp"
#include "deepnoc/simulate.hpp"

namespace testutil {

// A hand-built peak with explicit truth fields.
inline deepnoc::SimulatedPeak make_peak(int locus, double allele, double size, double height,
                                        double allelic, double stutter, double artefact,
                                        std::vector<std::uint8_t> copies, double plp) {
    deepnoc::SimulatedPeak p;
    p.locus = locus;
    p.allele = allele;
    p.size_bp = size;
    p.height_rfu = height;
    p.allelic_rfu = allelic;
    p.stutter_rfu = stutter;
    p.artefact_rfu = artefact;
    p.donor_copies = std::move(copies);
    p.plp = plp;
    return p;
}

// A clean single-source profile: every locus heterozygous with two peaks of
// equal height and plp 1.
inline deepnoc::SimulatedProfile clean_single_source(const deepnoc::KitConfig& kit,
                                                     double height = 1000.0) {
    deepnoc::SimulatedProfile profile;
    profile.noc = 1;
    profile.donor_templates_rfu = {height};
    profile.donor_proportions = {1.0};
    for (int locus = 0; locus < deepnoc::kNumLoci; ++locus) {
        const auto& def = kit.loci[static_cast<std::size_t>(locus)];
        const double a1 = def.allele_min + 2.0;
        const double a2 = def.allele_min + 5.0;
        for (const double a : {a1, a2}) {
            profile.peaks.push_back(make_peak(locus, a,
                                              deepnoc::allele_size_unchecked(kit, locus, a), height,
                                              height, 0.0, 0.0, {1}, 1.0));
        }
    }
    return profile;
}

// Noise-free simulation settings: fixed template, no degradation, no height
// noise, no stutters, no artefacts.
inline deepnoc::SimParams quiet_params(double template_rfu = 1000.0) {
    deepnoc::SimParams params;
    params.noc_min = params.noc_max = 1;
    params.template_rfu_low = params.template_rfu_high = template_rfu;
    params.degradation_max = 0.0;
    params.peak_height_cv = 0.0;
    for (auto& s : params.stutter) s = {0.0, 0.0, 0.0};
    params.artefact_rate = 0.0;
    params.pullup_threshold_rfu = 1e12;
    return params;
}

} // namespace testutil

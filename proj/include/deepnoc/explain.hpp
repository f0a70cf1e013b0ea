#pragma once

// Per-profile explainability report: an idealized profile drawing overlaid
// with all model outputs, written as SVG plus a JSON mirror of every plotted
// number.

#include <string>

#include "deepnoc/encode.hpp"
#include "deepnoc/kit.hpp"
#include "deepnoc/model.hpp"

namespace deepnoc {

// Capture-ordered peak pointers (locus ascending, then size ascending with
// height-descending ties, at most 50 per locus) for a profile that has
// already been artefact-filtered. Matches the encoder's row order.
std::vector<const SimulatedPeak*> capture_order(const SimulatedProfile& profile);

struct ReportPaths {
    std::string svg;
    std::string json;
};

// `outputs` must come from a forward pass over the encoding of `profile`
// (same row count); throws DataError otherwise. The SVG shows dye-colored
// peaks with grey plp bars and red allelic-proportion ticks, per-locus
// allele-count distributions and mixture strips, and a profile panel with
// mixture proportions and NoC probabilities (argmax highlighted). Peak-level
// allele-count distributions appear only in the JSON.
ReportPaths render_report(const SimulatedProfile& profile, const KitConfig& kit,
                          const EncodedProfile& enc, const ModelOutputs<float>& outputs,
                          const std::string& out_svg, const std::string& out_json);

} // namespace deepnoc

#pragma once

// Dataset JSONL: one profile per line, UTF-8, LF endings, numbers serialized
// with 17 significant digits so files are byte-reproducible and round-trip
// exactly.

#include <string>
#include <vector>

#include "deepnoc/simulate.hpp"

namespace deepnoc {

std::string profile_to_jsonl(const SimulatedProfile& profile);

// Parses one JSONL line; `origin` names the file/record for error messages.
SimulatedProfile profile_from_jsonl(const std::string& line, const std::string& origin);

std::vector<SimulatedProfile> load_dataset_jsonl(const std::string& path);

void save_dataset_jsonl(const std::vector<SimulatedProfile>& profiles, const std::string& path);

} // namespace deepnoc

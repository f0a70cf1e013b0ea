#include "deepnoc/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "deepnoc/error.hpp"
#include "json.hpp"

namespace deepnoc {

namespace {

void append_number(std::string& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out += buf;
}

} // namespace

std::string profile_to_jsonl(const SimulatedProfile& profile) {
    std::string out;
    out.reserve(256 + profile.peaks.size() * 260);
    out += "{\"noc\": ";
    out += std::to_string(profile.noc);
    out += ", \"donor_templates\": [";
    for (std::size_t d = 0; d < profile.donor_templates_rfu.size(); ++d) {
        if (d) out += ", ";
        append_number(out, profile.donor_templates_rfu[d]);
    }
    out += "], \"donor_proportions\": [";
    for (std::size_t d = 0; d < profile.donor_proportions.size(); ++d) {
        if (d) out += ", ";
        append_number(out, profile.donor_proportions[d]);
    }
    out += "], \"seed\": ";
    out += std::to_string(profile.seed_used);
    out += ", \"peaks\": [";
    for (std::size_t i = 0; i < profile.peaks.size(); ++i) {
        const SimulatedPeak& p = profile.peaks[i];
        if (i) out += ", ";
        out += "{\"locus\": ";
        out += std::to_string(p.locus);
        out += ", \"allele\": ";
        append_number(out, p.allele);
        out += ", \"size_bp\": ";
        append_number(out, p.size_bp);
        out += ", \"height_rfu\": ";
        append_number(out, p.height_rfu);
        out += ", \"allelic_rfu\": ";
        append_number(out, p.allelic_rfu);
        out += ", \"stutter_rfu\": ";
        append_number(out, p.stutter_rfu);
        out += ", \"artefact_rfu\": ";
        append_number(out, p.artefact_rfu);
        out += ", \"donor_copies\": [";
        for (std::size_t d = 0; d < p.donor_copies.size(); ++d) {
            if (d) out += ", ";
            out += std::to_string(static_cast<int>(p.donor_copies[d]));
        }
        out += "], \"plp\": ";
        append_number(out, p.plp);
        out += "}";
    }
    out += "]}";
    return out;
}

SimulatedProfile profile_from_jsonl(const std::string& line, const std::string& origin) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": record parse error: " + e.what());
    }
    try {
        SimulatedProfile profile;
        profile.noc = doc.at("noc").get<int>();
        if (profile.noc < 1 || profile.noc > kMaxNoc)
            throw DataError(origin + ": noc " + std::to_string(profile.noc) + " outside [1, 10]");
        profile.donor_templates_rfu = doc.at("donor_templates").get<std::vector<double>>();
        profile.donor_proportions = doc.at("donor_proportions").get<std::vector<double>>();
        profile.seed_used = doc.at("seed").get<std::uint64_t>();
        if (profile.donor_templates_rfu.size() != static_cast<std::size_t>(profile.noc) ||
            profile.donor_proportions.size() != static_cast<std::size_t>(profile.noc))
            throw DataError(origin + ": donor arrays must have length noc");
        for (const auto& node : doc.at("peaks")) {
            SimulatedPeak p;
            p.locus = node.at("locus").get<int>();
            if (p.locus < 0 || p.locus >= kNumLoci)
                throw DataError(origin + ": locus index " + std::to_string(p.locus) +
                                " outside [0, 23]");
            p.allele = node.at("allele").get<double>();
            p.size_bp = node.at("size_bp").get<double>();
            p.height_rfu = node.at("height_rfu").get<double>();
            p.allelic_rfu = node.at("allelic_rfu").get<double>();
            p.stutter_rfu = node.at("stutter_rfu").get<double>();
            p.artefact_rfu = node.at("artefact_rfu").get<double>();
            for (const auto& c : node.at("donor_copies")) {
                p.donor_copies.push_back(static_cast<std::uint8_t>(c.get<int>()));
            }
            if (p.donor_copies.size() != static_cast<std::size_t>(profile.noc))
                throw DataError(origin + ": donor_copies must have length noc");
            p.plp = node.at("plp").get<double>();
            profile.peaks.push_back(std::move(p));
        }
        return profile;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(origin + ": record structure error: " + e.what());
    }
}

std::vector<SimulatedProfile> load_dataset_jsonl(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset file: " + path);
    std::vector<SimulatedProfile> profiles;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        profiles.push_back(profile_from_jsonl(line, path + ":" + std::to_string(lineno)));
    }
    if (profiles.empty()) throw DataError("dataset file has no records: " + path);
    return profiles;
}

void save_dataset_jsonl(const std::vector<SimulatedProfile>& profiles, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open output file: " + path);
    for (const SimulatedProfile& p : profiles) {
        out << profile_to_jsonl(p) << '\n';
    }
    if (!out) throw DataError("I/O failure writing dataset: " + path);
}

} // namespace deepnoc

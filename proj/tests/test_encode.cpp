#include <algorithm>
#include <cmath>
#include <fstream>
#include <filesystem>

#include "doctest.h"

#include "deepnoc/encode.hpp"
#include "deepnoc/error.hpp"
#include "test_util.hpp"

using namespace deepnoc;
using testutil::make_peak;

TEST_CASE("artefact filter removes only high-artefact-probability peaks") {
    SimulatedProfile profile;
    profile.noc = 1;
    profile.donor_templates_rfu = {100.0};
    profile.donor_proportions = {1.0};
    profile.peaks.push_back(make_peak(0, 10, 60, 100, 100, 0, 0, {1}, 0.01));
    profile.peaks.push_back(make_peak(0, 11, 64, 100, 100, 0, 0, {1}, 0.03));
    profile.peaks.push_back(make_peak(0, 12, 68, 100, 100, 0, 0, {1}, 0.99));

    const SimulatedProfile filtered = filter_artefact_peaks(profile, 0.97);
    REQUIRE(filtered.peaks.size() == 2);
    CHECK(filtered.peaks[0].plp == 0.03); // boundary peak retained
    CHECK(filtered.peaks[1].plp == 0.99);

    const SimulatedProfile vacuous = filter_artefact_peaks(profile, 1.0);
    CHECK(vacuous.peaks.size() == 3);
    CHECK_THROWS_AS(filter_artefact_peaks(profile, 1.5), DataError);
}

TEST_CASE("stutter linkage by designation displacement") {
    SimulatedProfile profile;
    auto link_for = [&](std::vector<double> alleles) {
        std::vector<SimulatedPeak> peaks;
        for (const double a : alleles)
            peaks.push_back(make_peak(0, a, 100 + 4 * a, 100 + a, 100, 0, 0, {1}, 0.9));
        std::vector<const SimulatedPeak*> ptrs;
        for (const SimulatedPeak& p : peaks) ptrs.push_back(&p);
        return std::pair(peaks, stutter_linkage(ptrs));
    };

    SUBCASE("adjacent integers link back and forward") {
        auto [peaks, links] = link_for({9, 10});
        CHECK(links[0].parent[static_cast<int>(StutterType::Back)] == 1);
        CHECK(links[1].child[static_cast<int>(StutterType::Back)] == 0);
        CHECK(links[1].parent[static_cast<int>(StutterType::Forward)] == 0);
        CHECK(links[0].child[static_cast<int>(StutterType::Forward)] == 1);
        CHECK(links[0].parent[static_cast<int>(StutterType::DoubleBack)] == -1);
    }
    SUBCASE("a two-repeat gap links double-back only") {
        auto [peaks, links] = link_for({8, 10});
        CHECK(links[0].parent[static_cast<int>(StutterType::DoubleBack)] == 1);
        CHECK(links[0].parent[static_cast<int>(StutterType::Back)] == -1);
    }
    SUBCASE("a 0.2 displacement links point2") {
        auto [peaks, links] = link_for({9.8, 10});
        CHECK(links[0].parent[static_cast<int>(StutterType::Point2)] == 1);
        CHECK(links[0].parent[static_cast<int>(StutterType::Back)] == -1);
    }
}

TEST_CASE("smart start on a clean single-source profile") {
    const KitConfig& kit = default_kit();
    const SimulatedProfile profile = testutil::clean_single_source(kit, 1000.0);
    const std::array<double, kMaxNoc> props = smart_start(profile);

    // Hand-derived expectation: the first pass explains everything; the nine
    // remaining donors each get the 1% floor, so t = (1, 0.01 x 9) normalized.
    const double first = 1.0 / 1.09;
    const double rest = 0.01 / 1.09;
    CHECK(props[0] == doctest::Approx(first).epsilon(1e-12));
    for (int k = 1; k < kMaxNoc; ++k) CHECK(props[static_cast<std::size_t>(k)] == doctest::Approx(rest).epsilon(1e-12));
    CHECK(props[0] > 0.5);

    // Scale invariance.
    const SimulatedProfile doubled = testutil::clean_single_source(kit, 2000.0);
    const std::array<double, kMaxNoc> props2 = smart_start(doubled);
    for (int k = 0; k < kMaxNoc; ++k)
        CHECK(props[static_cast<std::size_t>(k)] ==
              doctest::Approx(props2[static_cast<std::size_t>(k)]).epsilon(1e-12));
}

TEST_CASE("smart start is normalized and non-increasing on simulated data") {
    const KitConfig& kit = default_kit();
    SimParams params;
    params.seed = 17;
    const std::vector<SimulatedProfile> profiles = simulate_profiles(kit, params, 40);
    for (const SimulatedProfile& profile : profiles) {
        const SimulatedProfile filtered = filter_artefact_peaks(profile);
        if (filtered.peaks.empty()) continue;
        const std::array<double, kMaxNoc> props = smart_start(filtered);
        double sum = 0.0;
        for (int k = 0; k < kMaxNoc; ++k) {
            sum += props[static_cast<std::size_t>(k)];
            if (k > 0)
                CHECK(props[static_cast<std::size_t>(k)] <=
                      props[static_cast<std::size_t>(k - 1)] + 1e-12);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    SimulatedProfile empty;
    empty.noc = 1;
    CHECK_THROWS_AS(smart_start(empty), DataError);
}

TEST_CASE("feature normalizers follow the layout") {
    const KitConfig& kit = default_kit();
    SimulatedProfile profile;
    profile.noc = 1;
    profile.donor_templates_rfu = {3300.0};
    profile.donor_proportions = {1.0};
    // Locus 20 hosts allele 22 at size 310 in a custom-size record.
    KitConfig wide = kit;
    wide.loci[20].allele_min = 5.0;
    wide.loci[20].allele_max = 25.0;
    profile.peaks.push_back(make_peak(20, 22.0, 310.0, 3300.0, 3300.0, 0.0, 0.0, {2}, 0.8));

    const EncodedProfile enc = encode_compact(profile, wide);
    REQUIRE(enc.active_rows() == 1);
    const float* f = enc.rows.data();
    CHECK(f[20] == 1.0f);
    for (int locus = 0; locus < kNumLoci; ++locus) {
        if (locus != 20) CHECK(f[locus] == 0.0f);
    }
    CHECK(f[24] == doctest::Approx(0.22));
    CHECK(f[25] == doctest::Approx(3.10));
    CHECK(f[26] == doctest::Approx(0.1)); // 3300 / 33000
    CHECK(f[28] == doctest::Approx(0.8));
    CHECK(f[77] == doctest::Approx(0.01)); // one peak at the locus / 100
    CHECK(f[78] == doctest::Approx(0.001)); // one peak in the profile / 1000

    // Heights are capped so the normalized feature stays at 1.
    profile.peaks[0].height_rfu = 50000.0;
    const EncodedProfile capped = encode_compact(profile, wide);
    CHECK(capped.rows[26] == 1.0f);
}

TEST_CASE("only the smallest 50 peaks of a crowded locus are captured") {
    const KitConfig& kit = default_kit();
    SimulatedProfile profile;
    profile.noc = 1;
    profile.donor_templates_rfu = {1000.0};
    profile.donor_proportions = {1.0};
    for (int k = 0; k < 60; ++k) {
        profile.peaks.push_back(make_peak(3, 8.0 + 0.1 * k, 100.0 + k, 100.0 + k, 100.0, 0.0, 0.0,
                                          {0}, 0.9));
    }
    const EncodedProfile enc = encode_compact(profile, kit);
    CHECK(enc.active_rows() == 50);
    // Smallest sizes first: size feature of the last captured row is
    // (100 + 49) / 100.
    const float last_size = enc.rows[static_cast<std::size_t>(49) * kNumPeakFeatures + 25];
    CHECK(last_size == doctest::Approx(1.49));

    const ProfileTensor tensor = tensor_from_compact(enc);
    int nonzero_rows = 0;
    for (int slot = 0; slot < kMaxPeaksPerLocus; ++slot) {
        bool any = false;
        for (int f = 0; f < kNumPeakFeatures; ++f) {
            if (tensor.at(3, slot, f) != 0.0f) any = true;
        }
        nonzero_rows += any ? 1 : 0;
    }
    CHECK(nonzero_rows == 50);
}

TEST_CASE("labels follow the spec shapes and invariants") {
    const KitConfig& kit = default_kit();
    SimParams params;
    params.noc_min = 3;
    params.noc_max = 3;
    params.seed = 5;
    const std::vector<SimulatedProfile> profiles = simulate_profiles(kit, params, 4);
    for (const SimulatedProfile& p : profiles) {
        const SimulatedProfile filtered = filter_artefact_peaks(p);
        const LabelSet labels = build_labels(filtered, kit);

        // Locus allele count is one-hot at 2 * noc for every locus.
        for (int locus = 0; locus < kNumLoci; ++locus) {
            int ones = 0, hot = -1;
            for (int c = 0; c < kLocusCountClasses; ++c) {
                const float v = labels.locus_allele_count[static_cast<std::size_t>(locus) *
                                                              kLocusCountClasses +
                                                          static_cast<std::size_t>(c)];
                CHECK((v == 0.0f || v == 1.0f));
                if (v == 1.0f) {
                    ++ones;
                    hot = c;
                }
            }
            CHECK(ones == 1);
            CHECK(hot == 2 * 3 - 1);

            double mix = 0.0;
            for (int d = 0; d < kMaxNoc; ++d)
                mix += labels.locus_mixture[static_cast<std::size_t>(locus * kMaxNoc + d)];
            CHECK(mix == doctest::Approx(1.0).epsilon(1e-6));
        }
        // Every peak one-hot row has exactly one 1, padding rows included.
        for (int cell = 0; cell < kNumLoci * kMaxPeaksPerLocus; ++cell) {
            int ones = 0;
            for (int c = 0; c < kPeakCountClasses; ++c) {
                if (labels.peak_allele_count[static_cast<std::size_t>(cell) * kPeakCountClasses +
                                             static_cast<std::size_t>(c)] == 1.0f)
                    ++ones;
            }
            CHECK(ones == 1);
        }
        double mix = 0.0;
        for (int d = 0; d < kMaxNoc; ++d) mix += labels.profile_mixture[static_cast<std::size_t>(d)];
        CHECK(mix == doctest::Approx(1.0).epsilon(1e-7));
        int noc_ones = 0;
        for (int d = 0; d < kMaxNoc; ++d)
            noc_ones += labels.profile_noc[static_cast<std::size_t>(d)] == 1.0f ? 1 : 0;
        CHECK(noc_ones == 1);
        CHECK(labels.profile_noc[2] == 1.0f);
    }
}

TEST_CASE("a pure artefact peak labels zero proportion and zero count") {
    const KitConfig& kit = default_kit();
    SimulatedProfile profile;
    profile.noc = 1;
    profile.donor_templates_rfu = {500.0};
    profile.donor_proportions = {1.0};
    profile.peaks.push_back(make_peak(0, 10, 80, 40, 0, 0, 40, {0}, 0.4));
    const EncodedProfile enc = encode_compact(profile, kit);
    REQUIRE(enc.active_rows() == 1);
    CHECK(enc.prop_allelic[0] == 0.0f);
    CHECK(enc.peak_count_class[0] == 0);
}

TEST_CASE("equal templates give a uniform profile mixture for ten donors") {
    const KitConfig& kit = default_kit();
    SimulatedProfile profile;
    profile.noc = 10;
    profile.donor_templates_rfu.assign(10, 700.0);
    profile.donor_proportions.assign(10, 0.1);
    profile.peaks.push_back(make_peak(0, 10, 80, 700, 700, 0, 0,
                                      {1, 1, 0, 0, 0, 0, 0, 0, 0, 0}, 0.9));
    const EncodedProfile enc = encode_compact(profile, kit);
    for (int d = 0; d < kMaxNoc; ++d)
        CHECK(enc.profile_mixture[static_cast<std::size_t>(d)] == doctest::Approx(0.1));
}

TEST_CASE("features 78+ repeat across rows as profile-level values") {
    const KitConfig& kit = default_kit();
    SimParams params;
    params.seed = 8;
    params.noc_min = 2;
    params.noc_max = 2;
    Rng rng(stream_seed(params.seed, 0));
    const SimulatedProfile profile =
        filter_artefact_peaks(simulate_profile(kit, params, rng));
    const EncodedProfile enc = encode_compact(profile, kit);
    REQUIRE(enc.active_rows() > 1);
    const float* first = enc.rows.data();
    for (int i = 1; i < enc.active_rows(); ++i) {
        const float* row = enc.rows.data() + static_cast<std::size_t>(i) * kNumPeakFeatures;
        for (int f = 78; f < kNumPeakFeatures; ++f) {
            CHECK(row[f] == first[f]);
        }
        // Feature 77 is constant within each locus.
        if (enc.row_locus[static_cast<std::size_t>(i)] == enc.row_locus[0]) {
            CHECK(row[77] == first[77]);
        }
    }
}

TEST_CASE("encoding is invariant to the input peak order") {
    const KitConfig& kit = default_kit();
    SimParams params;
    params.seed = 91;
    params.noc_min = 2;
    params.noc_max = 2;
    Rng rng(stream_seed(params.seed, 0));
    SimulatedProfile profile = filter_artefact_peaks(simulate_profile(kit, params, rng));
    const EncodedProfile enc = encode_compact(profile, kit);

    Rng shuffle_rng(4);
    for (std::size_t i = profile.peaks.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(
            shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(profile.peaks[i], profile.peaks[j]);
    }
    const EncodedProfile shuffled = encode_compact(profile, kit);
    CHECK(enc.rows == shuffled.rows);
    CHECK(enc.prop_allelic == shuffled.prop_allelic);
    CHECK(enc.locus_mixture == shuffled.locus_mixture);
}

TEST_CASE("captured peak-count labels respect the copy bound") {
    const KitConfig& kit = default_kit();
    SimParams params;
    params.seed = 14;
    const std::vector<SimulatedProfile> profiles = simulate_profiles(kit, params, 30);
    for (const SimulatedProfile& p : profiles) {
        const SimulatedProfile filtered = filter_artefact_peaks(p);
        const EncodedProfile enc = encode_compact(filtered, kit);
        std::array<int, kNumLoci> per_locus{};
        for (int i = 0; i < enc.active_rows(); ++i) {
            per_locus[static_cast<std::size_t>(enc.row_locus[static_cast<std::size_t>(i)])] +=
                enc.peak_count_class[static_cast<std::size_t>(i)];
        }
        for (const int c : per_locus) CHECK(c <= 2 * p.noc);
    }
}

TEST_CASE("tensor cache round-trips and rejects damage") {
    namespace fs = std::filesystem;
    const KitConfig& kit = default_kit();
    SimParams params;
    params.seed = 2;
    params.noc_min = 1;
    params.noc_max = 2;
    const std::vector<SimulatedProfile> profiles = simulate_profiles(kit, params, 5);
    std::vector<EncodedProfile> records;
    for (const SimulatedProfile& p : profiles)
        records.push_back(encode_compact(filter_artefact_peaks(p), kit));

    const std::string path = (fs::temp_directory_path() / "cache_test.dnoc").string();
    write_tensor_cache(path, records);
    const std::vector<EncodedProfile> loaded = read_tensor_cache(path);
    REQUIRE(loaded.size() == records.size());
    for (std::size_t i = 0; i < records.size(); ++i) {
        CHECK(loaded[i].rows == records[i].rows);
        CHECK(loaded[i].row_locus == records[i].row_locus);
        CHECK(loaded[i].prop_allelic == records[i].prop_allelic);
        CHECK(loaded[i].peak_count_class == records[i].peak_count_class);
        CHECK(loaded[i].locus_mixture == records[i].locus_mixture);
        CHECK(loaded[i].locus_count_class == records[i].locus_count_class);
        CHECK(loaded[i].profile_mixture == records[i].profile_mixture);
        CHECK(loaded[i].noc == records[i].noc);
    }

    SUBCASE("truncation is detected") {
        std::error_code ec;
        fs::resize_file(path, fs::file_size(path) - 100, ec);
        REQUIRE(!ec);
        CHECK_THROWS_WITH_AS(read_tensor_cache(path), doctest::Contains("truncated"), DataError);
    }
    SUBCASE("bad magic is detected") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.write("NOPE!", 5);
        f.close();
        CHECK_THROWS_WITH_AS(read_tensor_cache(path), doctest::Contains("magic"), DataError);
    }
    fs::remove(path);
}

TEST_CASE("build_labels rejects an out-of-range NoC") {
    SimulatedProfile profile;
    profile.noc = 0;
    CHECK_THROWS_AS(build_labels(profile, default_kit()), DataError);
    profile.noc = 11;
    CHECK_THROWS_AS(build_labels(profile, default_kit()), DataError);
}

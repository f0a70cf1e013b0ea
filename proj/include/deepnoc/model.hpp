#pragma once

// The deepNoC network: a 16-layer main branch from the [24 x 50 x 89] input
// to the profile NoC output, with six heads. Peak- and locus-level head
// outputs are concatenated back into the branch before each pooling stage;
// the two profile-level heads do not feed back. Pooling stages count as
// layers: 3 peak encoder + merge + pool + 3 locus encoder + merge + pool +
// 5 trunk + NoC head = 16.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "deepnoc/encode.hpp"
#include "deepnoc/nn.hpp"

namespace deepnoc {

inline constexpr int kMainBranchLayers = 16;

struct LossWeights {
    std::array<double, 6> w{{1.0, 1.0, 1.0, 1.0, 1.0, 1.0}};

    void validate() const {
        for (double v : w) {
            if (v < 0.0) throw DataError("loss weights must be nonnegative");
        }
        if (w[5] <= 0.0) throw DataError("the NoC loss weight must be positive");
    }
};

// Per-profile outputs in compact form, aligned with the EncodedProfile rows
// and its active loci.
template <class T>
struct ModelOutputs {
    std::vector<T> peak_prop;      // n
    std::vector<T> peak_count;     // n x 21
    std::vector<T> locus_mixture;  // nl x 10
    std::vector<T> locus_count;    // nl x 20
    std::array<T, kMaxNoc> profile_mixture{};
    std::array<T, kMaxNoc> noc{};
    std::vector<int> locus_ids;    // nl kit locus indices, ascending
};

// Dense, LabelSet-shaped outputs; padded positions are zero.
struct DenseOutputs {
    std::vector<float> peak_prop;      // 24 x 50
    std::vector<float> peak_count;     // 24 x 50 x 21
    std::vector<float> locus_mixture;  // 24 x 10
    std::vector<float> locus_count;    // 24 x 20
    std::array<float, kMaxNoc> profile_mixture{};
    std::array<float, kMaxNoc> noc{};

    DenseOutputs()
        : peak_prop(static_cast<std::size_t>(kNumLoci) * kMaxPeaksPerLocus, 0.0f),
          peak_count(static_cast<std::size_t>(kNumLoci) * kMaxPeaksPerLocus * kPeakCountClasses,
                     0.0f),
          locus_mixture(static_cast<std::size_t>(kNumLoci) * kMaxNoc, 0.0f),
          locus_count(static_cast<std::size_t>(kNumLoci) * kLocusCountClasses, 0.0f) {}
};

template <class T>
struct LayerSpec {
    DenseLayer<T> layer;
    std::size_t w_offset = 0;
    std::size_t b_offset = 0;
};

template <class T>
class DeepNoCModel {
public:
    // Layer ids in canonical (file) order.
    enum LayerId : int {
        kPeakEnc0 = 0, kPeakEnc1, kPeakEnc2,
        kPeakHeadProp, kPeakHeadCount, kPeakMerge,
        kLocusEnc0, kLocusEnc1, kLocusEnc2,
        kLocusHeadMix, kLocusHeadCount, kLocusMerge,
        kTrunk0, kTrunk1, kTrunk2, kTrunk3, kTrunk4,
        kProfileHeadMix, kNocHead,
        kLayerCount
    };

    bool secondary = true;
    std::uint64_t init_seed = 0;
    std::vector<T> params;
    std::vector<LayerSpec<T>> layers; // views into params, synced after edits

    static DeepNoCModel build(std::uint64_t seed, bool with_secondary = true);

    std::size_t parameter_count() const { return params.size(); }
    int main_branch_layers() const { return kMainBranchLayers; }
    std::vector<ParamBlock> parameter_blocks() const;

    // Refreshes the layer weight views from the flat parameter vector; must be
    // called after any direct mutation of `params`.
    void sync_layers();

    template <class U>
    DeepNoCModel<U> cast() const;

    struct Workspace {
        // peak stage, n rows
        std::vector<T> x, a1, a2, a3, p1, p2, m, a4;
        // locus stage, nl rows
        std::vector<T> pool1, b1, b2, b3, q3, q4, nmerge, b4;
        std::vector<int> pool1_argmax;
        // profile stage
        std::vector<T> pool2, c1, c2, c3, c4, c5, o5, o6;
        std::vector<int> pool2_argmax;
        // locus grouping
        std::vector<int> locus_ids;
        std::vector<int> locus_begin; // nl + 1 prefix offsets into rows
        std::vector<std::uint8_t> mask;
    };

    ModelOutputs<T> forward(const EncodedProfile& enc, Workspace& ws) const;
    ModelOutputs<T> forward(const ProfileTensor& tensor, Workspace& ws) const;

    // Total loss for one profile; accumulates parameter gradients into `grad`
    // (same layout as `params`). Also reports per-head weighted loss terms.
    T loss_and_grad(const EncodedProfile& enc, const LossWeights& weights, Workspace& ws,
                    std::vector<T>& grad, std::array<T, 6>* terms = nullptr) const;

    // Loss only, at the current parameters. Used by finite differencing.
    T loss_only(const EncodedProfile& enc, const LossWeights& weights, Workspace& ws) const;

    void save_weights(const std::string& path) const;
    static DeepNoCModel load_weights(const std::string& path);

    std::string model_card_json(const std::string& extra = "") const;

private:
    void run_forward(const float* rows, const std::int16_t* row_locus, int n, Workspace& ws) const;
};

// The six loss terms for given outputs and labels; gradients are with respect
// to the output values (softmax heads included). `terms` are the weighted
// per-head losses in spec order.
template <class T>
struct TotalLoss {
    T total = T(0);
    std::array<T, 6> terms{};
    ModelOutputs<T> value_grads;
};

template <class T>
TotalLoss<T> total_loss(const ModelOutputs<T>& outputs, const EncodedProfile& labels,
                        const LossWeights& weights);

// Expands compact outputs into LabelSet-shaped dense arrays, zero padding.
template <class T>
DenseOutputs expand_outputs(const ModelOutputs<T>& outputs, const EncodedProfile& enc);

// Max relative error between analytic parameter gradients and central finite
// differences over >= min_coords randomly sampled coordinates. Use the
// double-precision model.
double gradient_check(DeepNoCModel<double>& model, const std::vector<EncodedProfile>& batch,
                      const LossWeights& weights, double eps = 1e-5, int min_coords = 200,
                      std::uint64_t seed = 1);

} // namespace deepnoc

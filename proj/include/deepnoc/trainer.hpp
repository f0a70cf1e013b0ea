#pragma once

// Dataset splitting, batched training, fine-tuning with pseudo-labelled peak
// proportions, and learning-curve experiments.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "deepnoc/encode.hpp"
#include "deepnoc/model.hpp"

namespace deepnoc {

struct TrainConfig {
    int batch_size = 100;
    int epochs = 200;
    double split_fraction = 0.9; // train share for random splits
    std::uint64_t seed = 0;
    LossWeights loss_weights;
    bool deterministic = false;
    int checkpoint_every = 0; // epochs; 0 disables checkpoints
    std::string checkpoint_dir;
    double learning_rate = 1e-5;
    int patience = 0; // early stopping on test accuracy; 0 disables
    int threads = 0;  // 0 = OpenMP default

    void validate() const;
    std::string to_json() const;
    static TrainConfig from_json_file(const std::string& path);
};

struct EpochStats {
    double train_loss = 0.0;
    double train_noc_accuracy = 0.0;
    double test_noc_accuracy = 0.0;
    double wall_seconds = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    long adam_steps = 0;

    std::string to_json() const;
};

// Deterministic shuffle by seed, then split at round(n * fraction).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_random_fraction(
    std::size_t n, double fraction, std::uint64_t seed);

// Even indices (0-based) train, odd indices test.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_alternating(std::size_t n);

// Read-only dataset of encoded profiles; get() must be safe to call from
// several threads at once.
class EncodedDataset {
public:
    virtual ~EncodedDataset() = default;
    virtual std::size_t size() const = 0;
    virtual void get(std::size_t index, EncodedProfile& out) const = 0;
};

class MemoryDataset final : public EncodedDataset {
public:
    explicit MemoryDataset(std::vector<EncodedProfile> records) : records_(std::move(records)) {}
    std::size_t size() const override { return records_.size(); }
    void get(std::size_t index, EncodedProfile& out) const override { out = records_[index]; }

private:
    std::vector<EncodedProfile> records_;
};

// Filters and encodes raw profiles on demand; keeps memory at the peak-list
// level instead of the tensor level. Optional per-record overrides replace
// the peak-proportion labels (used by fine-tuning pseudo-labels).
class EncodingDataset final : public EncodedDataset {
public:
    EncodingDataset(const std::vector<SimulatedProfile>* profiles, const KitConfig* kit,
                    double plp_threshold = kDefaultPlpFilterThreshold)
        : profiles_(profiles), kit_(kit), plp_threshold_(plp_threshold) {}

    std::size_t size() const override { return profiles_->size(); }
    void get(std::size_t index, EncodedProfile& out) const override;

    void set_prop_override(std::vector<std::vector<float>> overrides) {
        prop_override_ = std::move(overrides);
    }

private:
    const std::vector<SimulatedProfile>* profiles_;
    const KitConfig* kit_;
    double plp_threshold_;
    std::vector<std::vector<float>> prop_override_;
};

// View over a subset of another dataset.
class SubsetDataset final : public EncodedDataset {
public:
    SubsetDataset(const EncodedDataset* base, std::vector<std::size_t> indices)
        : base_(base), indices_(std::move(indices)) {}
    std::size_t size() const override { return indices_.size(); }
    void get(std::size_t index, EncodedProfile& out) const override {
        base_->get(indices_[index], out);
    }

private:
    const EncodedDataset* base_;
    std::vector<std::size_t> indices_;
};

// Batched Adam training. Per epoch: seeded reshuffle, batches of
// cfg.batch_size with the final partial batch included, one optimizer step
// per batch on the mean total loss. Test metrics are computed inference-only
// at the end of each epoch. Throws NumericError (with epoch/batch indices) on
// non-finite loss or gradients.
TrainHistory train(DeepNoCModel<float>& model, const EncodedDataset& train_set,
                   const EncodedDataset& test_set, const TrainConfig& cfg);

// NoC accuracy of the model on a dataset (argmax, ties toward lower NoC).
double evaluate_noc_accuracy(const DeepNoCModel<float>& model, const EncodedDataset& dataset,
                             int threads = 0);

// Fine-tuning on laboratory-style profiles whose peak compositions are
// unknown: a single inference pass pseudo-labels the peak-proportion output,
// the profiles are split alternating, and training proceeds as usual.
// Returns the history; `model` is updated in place.
TrainHistory fine_tune(DeepNoCModel<float>& model, const std::vector<SimulatedProfile>& lab_data,
                       const KitConfig& kit, const TrainConfig& cfg);

struct LearningCurvePoint {
    std::size_t train_size = 0;
    double test_accuracy = 0.0;
};

// Trains a fresh model (same init seed) per size on a prefix of the shuffled
// training set and evaluates each on the fixed test set.
std::vector<LearningCurvePoint> learning_curve(std::uint64_t model_seed,
                                               const EncodedDataset& train_set,
                                               const EncodedDataset& test_set,
                                               const std::vector<std::size_t>& sizes,
                                               const TrainConfig& cfg);

} // namespace deepnoc

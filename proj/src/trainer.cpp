#include "deepnoc/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <omp.h>

#include "deepnoc/error.hpp"
#include "json.hpp"

namespace deepnoc {

void TrainConfig::validate() const {
    if (batch_size < 1) throw DataError("batch_size must be at least 1");
    if (epochs < 0) throw DataError("epochs must be nonnegative");
    if (!(split_fraction > 0.0 && split_fraction < 1.0))
        throw DataError("split fraction must be in (0, 1)");
    if (learning_rate <= 0.0) throw DataError("learning_rate must be positive");
    if (patience < 0) throw DataError("patience must be nonnegative");
    loss_weights.validate();
}

std::string TrainConfig::to_json() const {
    std::ostringstream out;
    out << "{\"batch_size\": " << batch_size << ", \"epochs\": " << epochs
        << ", \"split_fraction\": " << split_fraction << ", \"seed\": " << seed
        << ", \"loss_weights\": [";
    for (int i = 0; i < 6; ++i) out << (i ? ", " : "") << loss_weights.w[static_cast<std::size_t>(i)];
    out << "], \"deterministic\": " << (deterministic ? "true" : "false")
        << ", \"checkpoint_every\": " << checkpoint_every
        << ", \"learning_rate\": " << learning_rate << ", \"patience\": " << patience << "}";
    return out.str();
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open training config: " + path);
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": training config parse error: " + e.what());
    }
    TrainConfig cfg;
    try {
        if (doc.contains("batch_size")) cfg.batch_size = doc["batch_size"].get<int>();
        if (doc.contains("epochs")) cfg.epochs = doc["epochs"].get<int>();
        if (doc.contains("split_fraction")) cfg.split_fraction = doc["split_fraction"].get<double>();
        if (doc.contains("seed")) cfg.seed = doc["seed"].get<std::uint64_t>();
        if (doc.contains("loss_weights")) {
            const auto w = doc["loss_weights"].get<std::vector<double>>();
            if (w.size() != 6) throw DataError(path + ": loss_weights must have 6 entries");
            std::copy(w.begin(), w.end(), cfg.loss_weights.w.begin());
        }
        if (doc.contains("deterministic")) cfg.deterministic = doc["deterministic"].get<bool>();
        if (doc.contains("checkpoint_every")) cfg.checkpoint_every = doc["checkpoint_every"].get<int>();
        if (doc.contains("learning_rate")) cfg.learning_rate = doc["learning_rate"].get<double>();
        if (doc.contains("patience")) cfg.patience = doc["patience"].get<int>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError(path + ": training config structure error: " + e.what());
    }
    cfg.validate();
    return cfg;
}

std::string TrainHistory::to_json() const {
    std::ostringstream out;
    out << "{\"adam_steps\": " << adam_steps << ", \"epochs\": [\n";
    for (std::size_t i = 0; i < epochs.size(); ++i) {
        const EpochStats& e = epochs[i];
        out << "  {\"train_loss\": " << e.train_loss
            << ", \"train_noc_accuracy\": " << e.train_noc_accuracy
            << ", \"test_noc_accuracy\": " << e.test_noc_accuracy
            << ", \"wall_seconds\": " << e.wall_seconds << "}" << (i + 1 < epochs.size() ? "," : "")
            << "\n";
    }
    out << "]}\n";
    return out.str();
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_random_fraction(
    std::size_t n, double fraction, std::uint64_t seed) {
    if (n == 0) throw DataError("cannot split an empty dataset");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(order[i], order[j]);
    }
    const std::size_t cut = static_cast<std::size_t>(
        std::llround(fraction * static_cast<double>(n)));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
    std::vector<std::size_t> test(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
    return {std::move(train), std::move(test)};
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_alternating(std::size_t n) {
    if (n == 0) throw DataError("cannot split an empty dataset");
    std::vector<std::size_t> train, test;
    for (std::size_t i = 0; i < n; ++i) {
        (i % 2 == 0 ? train : test).push_back(i);
    }
    return {std::move(train), std::move(test)};
}

void EncodingDataset::get(std::size_t index, EncodedProfile& out) const {
    const SimulatedProfile filtered =
        filter_artefact_peaks((*profiles_)[index], plp_threshold_);
    out = encode_compact(filtered, *kit_);
    if (!prop_override_.empty()) {
        const std::vector<float>& labels = prop_override_[index];
        if (labels.size() != out.prop_allelic.size())
            throw DataError("pseudo-label length mismatch at record " + std::to_string(index));
        out.prop_allelic = labels;
    }
}

namespace {

// Argmax with ties broken toward the lower class.
template <class Probs>
int argmax_lowest(const Probs& probs) {
    int best = 0;
    for (int i = 1; i < kMaxNoc; ++i) {
        if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
    }
    return best;
}

} // namespace

double evaluate_noc_accuracy(const DeepNoCModel<float>& model, const EncodedDataset& dataset,
                             int threads) {
    const std::size_t n = dataset.size();
    if (n == 0) return 0.0;
    const int nthreads = threads > 0 ? threads : omp_get_max_threads();
    std::size_t correct = 0;
#pragma omp parallel num_threads(nthreads) reduction(+ : correct)
    {
        typename DeepNoCModel<float>::Workspace ws;
        EncodedProfile enc;
#pragma omp for schedule(dynamic, 8)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(n); ++i) {
            dataset.get(static_cast<std::size_t>(i), enc);
            const ModelOutputs<float> out = model.forward(enc, ws);
            if (argmax_lowest(out.noc) + 1 == enc.noc) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(n);
}

TrainHistory train(DeepNoCModel<float>& model, const EncodedDataset& train_set,
                   const EncodedDataset& test_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.size() == 0) throw DataError("training set is empty");

    const int nthreads = cfg.deterministic ? 1 : (cfg.threads > 0 ? cfg.threads : omp_get_max_threads());

    AdamState<float> adam;
    adam.lr = cfg.learning_rate;
    adam.reset(model.params.size());
    const std::vector<ParamBlock> blocks = model.parameter_blocks();

    TrainHistory history;
    const std::size_t n = train_set.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});

    // Per-thread gradient buffers, reduced in thread order after each batch.
    std::vector<std::vector<float>> thread_grads(static_cast<std::size_t>(nthreads));
    std::vector<std::unique_ptr<typename DeepNoCModel<float>::Workspace>> workspaces;
    for (int t = 0; t < nthreads; ++t) {
        workspaces.push_back(std::make_unique<typename DeepNoCModel<float>::Workspace>());
    }

    double best_test = -1.0;
    int since_best = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();

        // Seeded per-epoch reshuffle.
        {
            Rng rng(stream_seed(cfg.seed, 0x9e370000u + static_cast<std::uint64_t>(epoch)));
            for (std::size_t i = n - 1; i > 0; --i) {
                const std::size_t j =
                    static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
                std::swap(order[i], order[j]);
            }
        }

        double epoch_loss = 0.0;
        std::size_t epoch_correct = 0;

        for (std::size_t batch_start = 0, batch_index = 0; batch_start < n;
             batch_start += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
            const std::size_t batch_n =
                std::min(static_cast<std::size_t>(cfg.batch_size), n - batch_start);

            for (auto& g : thread_grads) g.assign(model.params.size(), 0.0f);
            double batch_loss = 0.0;
            std::size_t batch_correct = 0;

#pragma omp parallel num_threads(nthreads) reduction(+ : batch_loss, batch_correct)
            {
                const int tid = omp_get_thread_num();
                auto& ws = *workspaces[static_cast<std::size_t>(tid)];
                auto& grad = thread_grads[static_cast<std::size_t>(tid)];
                EncodedProfile enc;
#pragma omp for schedule(static)
                for (std::int64_t k = 0; k < static_cast<std::int64_t>(batch_n); ++k) {
                    train_set.get(order[batch_start + static_cast<std::size_t>(k)], enc);
                    const float loss = model.loss_and_grad(enc, cfg.loss_weights, ws, grad);
                    batch_loss += loss;
                    if (argmax_lowest(ws.o6) + 1 == enc.noc) ++batch_correct;
                }
            }

            if (!std::isfinite(batch_loss)) {
                throw NumericError("non-finite loss at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            }

            // Fixed-order reduction and mean scaling.
            std::vector<float>& grad = thread_grads[0];
            for (int t = 1; t < nthreads; ++t) {
                const std::vector<float>& other = thread_grads[static_cast<std::size_t>(t)];
                for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += other[i];
            }
            const float inv_batch = 1.0f / static_cast<float>(batch_n);
            for (float& g : grad) g *= inv_batch;

            try {
                adam_step(adam, model.params, grad, blocks);
            } catch (const NumericError& e) {
                throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batch_index));
            }
            model.sync_layers();
            history.adam_steps += 1;

            epoch_loss += batch_loss;
            epoch_correct += batch_correct;
        }

        EpochStats stats;
        stats.train_loss = epoch_loss / static_cast<double>(n);
        stats.train_noc_accuracy = static_cast<double>(epoch_correct) / static_cast<double>(n);
        stats.test_noc_accuracy =
            test_set.size() > 0 ? evaluate_noc_accuracy(model, test_set, nthreads) : 0.0;
        stats.wall_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        history.epochs.push_back(stats);

        if (cfg.checkpoint_every > 0 && !cfg.checkpoint_dir.empty() &&
            (epoch + 1) % cfg.checkpoint_every == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "/checkpoint_epoch%04d.dnocw", epoch + 1);
            model.save_weights(cfg.checkpoint_dir + name);
        }

        if (cfg.patience > 0) {
            if (stats.test_noc_accuracy > best_test) {
                best_test = stats.test_noc_accuracy;
                since_best = 0;
            } else if (++since_best >= cfg.patience) {
                break;
            }
        }
    }
    return history;
}

TrainHistory fine_tune(DeepNoCModel<float>& model, const std::vector<SimulatedProfile>& lab_data,
                       const KitConfig& kit, const TrainConfig& cfg) {
    cfg.validate();
    if (lab_data.empty()) throw DataError("fine-tune dataset is empty");

    // Pseudo-label pass: inference only, weights untouched. The model's own
    // peak-proportion predictions become the output-1 labels.
    EncodingDataset base(&lab_data, &kit);
    std::vector<std::vector<float>> pseudo(lab_data.size());
    const int nthreads = cfg.deterministic ? 1 : (cfg.threads > 0 ? cfg.threads : omp_get_max_threads());
#pragma omp parallel num_threads(nthreads)
    {
        typename DeepNoCModel<float>::Workspace ws;
        EncodedProfile enc;
#pragma omp for schedule(dynamic, 8)
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(lab_data.size()); ++i) {
            base.get(static_cast<std::size_t>(i), enc);
            const ModelOutputs<float> out = model.forward(enc, ws);
            if (model.secondary) {
                pseudo[static_cast<std::size_t>(i)] = std::vector<float>(out.peak_prop.begin(),
                                                                         out.peak_prop.end());
            } else {
                pseudo[static_cast<std::size_t>(i)].assign(enc.prop_allelic.size(), 0.0f);
            }
        }
    }
    base.set_prop_override(std::move(pseudo));

    auto [train_idx, test_idx] = split_alternating(lab_data.size());
    SubsetDataset train_view(&base, std::move(train_idx));
    SubsetDataset test_view(&base, std::move(test_idx));
    return train(model, train_view, test_view, cfg);
}

std::vector<LearningCurvePoint> learning_curve(std::uint64_t model_seed,
                                               const EncodedDataset& train_set,
                                               const EncodedDataset& test_set,
                                               const std::vector<std::size_t>& sizes,
                                               const TrainConfig& cfg) {
    cfg.validate();
    // One shared shuffle; each size trains on a prefix.
    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(stream_seed(cfg.seed, 0x1c0ffee));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
        std::swap(order[i], order[j]);
    }

    std::vector<LearningCurvePoint> curve;
    for (const std::size_t size : sizes) {
        if (size > train_set.size())
            throw DataError("learning-curve size " + std::to_string(size) +
                            " exceeds available training data (" + std::to_string(train_set.size()) +
                            ")");
        std::vector<std::size_t> prefix(order.begin(),
                                        order.begin() + static_cast<std::ptrdiff_t>(size));
        SubsetDataset subset(&train_set, std::move(prefix));
        DeepNoCModel<float> model = DeepNoCModel<float>::build(model_seed);
        train(model, subset, test_set, cfg);
        LearningCurvePoint point;
        point.train_size = size;
        point.test_accuracy = evaluate_noc_accuracy(model, test_set, cfg.threads);
        curve.push_back(point);
    }
    return curve;
}

} // namespace deepnoc

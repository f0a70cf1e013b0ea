// deepnoc: simulate labelled STR mixture profiles, encode them, train and
// fine-tune the NoC network, evaluate it, and render explainability reports.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "deepnoc/dataset.hpp"
#include "deepnoc/encode.hpp"
#include "deepnoc/error.hpp"
#include "deepnoc/evaluate.hpp"
#include "deepnoc/explain.hpp"
#include "deepnoc/kit.hpp"
#include "deepnoc/model.hpp"
#include "deepnoc/simulate.hpp"
#include "deepnoc/trainer.hpp"

namespace {

using namespace deepnoc;

std::uint64_t default_seed() {
    if (const char* env = std::getenv("NOC_SEED")) {
        return std::strtoull(env, nullptr, 10);
    }
    return 0;
}

KitConfig load_kit_or_default(const std::string& path) {
    if (path.empty()) return default_kit();
    return load_kit_config(path);
}

std::string model_weight_path(const std::string& path) {
    namespace fs = std::filesystem;
    if (fs::is_directory(path)) return path + "/weights.dnocw";
    return path;
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path);
    out << text;
    if (!out) throw DataError("I/O failure writing file: " + path);
}

struct CommonOpts {
    std::string kit_path;
    int threads = 0;
    bool deterministic = false;
};

void print_summary(const DatasetSummary& summary) {
    std::printf("records: %zu\n", summary.records);
    std::printf("%4s %8s %12s %10s %10s %14s\n", "noc", "count", "mean_peaks", "min_peaks",
                "max_peaks", "mean_template");
    for (int k = 0; k < kMaxNoc; ++k) {
        const NocBucket& b = summary.per_noc[static_cast<std::size_t>(k)];
        if (b.count == 0) continue;
        std::printf("%4d %8zu %12.2f %10zu %10zu %14.1f\n", k + 1, b.count, b.peak_count_mean,
                    b.peak_count_min, b.peak_count_max, b.total_template_mean);
    }
}

// Loads a dataset either from a tensor cache (.dnoc) or from dataset JSONL,
// returning encoded records plus truth NoCs.
struct LoadedData {
    std::vector<EncodedProfile> encoded;
    std::vector<int> truths;
};

LoadedData load_encoded(const std::string& path, const KitConfig& kit, double plp_threshold) {
    LoadedData data;
    if (ends_with(path, ".dnoc")) {
        data.encoded = read_tensor_cache(path);
    } else {
        const std::vector<SimulatedProfile> profiles = load_dataset_jsonl(path);
        data.encoded.reserve(profiles.size());
        for (const SimulatedProfile& p : profiles) {
            data.encoded.push_back(encode_compact(filter_artefact_peaks(p, plp_threshold), kit));
        }
    }
    data.truths.reserve(data.encoded.size());
    for (const EncodedProfile& e : data.encoded) data.truths.push_back(e.noc);
    return data;
}

int run(int argc, char** argv) {
    CLI::App app{"deepNoC: number-of-contributors assignment for STR mixture profiles"};
    app.require_subcommand(1);

    CommonOpts common;

    // ---- simulate ----------------------------------------------------------
    auto* sim = app.add_subcommand("simulate", "Generate a labelled synthetic mixture dataset");
    std::size_t sim_n = 0;
    std::uint64_t sim_seed = default_seed();
    std::string sim_out;
    SimParams params;
    sim->add_option("--kit", common.kit_path, "Kit JSON (defaults to the bundled synthetic kit)");
    sim->add_option("--n", sim_n, "Number of profiles")->required();
    sim->add_option("--seed", sim_seed, "Master seed (default from NOC_SEED)");
    sim->add_option("--out", sim_out, "Output dataset JSONL path")->required();
    sim->add_option("--noc-min", params.noc_min, "Minimum contributors");
    sim->add_option("--noc-max", params.noc_max, "Maximum contributors");
    sim->add_option("--template-low", params.template_rfu_low, "Template range low (rfu)");
    sim->add_option("--template-high", params.template_rfu_high, "Template range high (rfu)");
    sim->add_option("--degradation-max", params.degradation_max, "Max degradation per bp");
    sim->add_option("--cv", params.peak_height_cv, "Peak height coefficient of variation");
    sim->add_option("--artefact-rate", params.artefact_rate, "Expected artefact peaks per profile");
    sim->add_option("--pullup-threshold", params.pullup_threshold_rfu, "Pull-up threshold (rfu)");
    sim->add_option("--noise-floor", params.noise_floor_rfu, "Noise floor (rfu)");
    sim->add_option("--saturation", params.saturation_rfu, "Saturation cap (rfu)");
    sim->add_option("--threads", common.threads, "Worker threads (0 = default)");

    // ---- encode ------------------------------------------------------------
    auto* enc_cmd = app.add_subcommand("encode", "Encode a dataset into the tensor cache format");
    std::string enc_in, enc_out;
    double enc_plp_threshold = kDefaultPlpFilterThreshold;
    enc_cmd->add_option("--kit", common.kit_path, "Kit JSON");
    enc_cmd->add_option("--in", enc_in, "Dataset JSONL")->required();
    enc_cmd->add_option("--out", enc_out, "Output tensor cache (.dnoc)")->required();
    enc_cmd->add_option("--plp-threshold", enc_plp_threshold,
                        "Artefact-probability filter threshold");
    enc_cmd->add_option("--threads", common.threads, "Worker threads (0 = default)");

    // ---- train ---------------------------------------------------------------
    auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
    std::string train_in, train_cfg_path, train_out;
    TrainConfig tcfg;
    std::uint64_t model_seed = 1;
    bool no_secondary = false;
    train_cmd->add_option("--in", train_in, "Dataset (.dnoc tensor cache or .jsonl)")->required();
    train_cmd->add_option("--kit", common.kit_path, "Kit JSON (for .jsonl input)");
    train_cmd->add_option("--config", train_cfg_path, "Training config JSON");
    train_cmd->add_option("--out", train_out, "Output model directory")->required();
    train_cmd->add_option("--epochs", tcfg.epochs, "Training epochs");
    train_cmd->add_option("--batch-size", tcfg.batch_size, "Batch size");
    train_cmd->add_option("--seed", tcfg.seed, "Shuffle/split seed");
    train_cmd->add_option("--model-seed", model_seed, "Weight init seed");
    train_cmd->add_option("--split", tcfg.split_fraction, "Train fraction for the random split");
    train_cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
    train_cmd->add_option("--checkpoint-every", tcfg.checkpoint_every,
                          "Checkpoint period in epochs (0 = off)");
    train_cmd->add_option("--patience", tcfg.patience,
                          "Early stopping patience in epochs (0 = off)");
    train_cmd->add_flag("--no-secondary", no_secondary, "Train the no-secondary-output variant");
    train_cmd->add_flag("--deterministic", common.deterministic,
                        "Bit-reproducible single-threaded gradient accumulation");
    train_cmd->add_option("--threads", common.threads, "Worker threads (0 = default)");

    // ---- finetune -------------------------------------------------------------
    auto* ft = app.add_subcommand("finetune", "Fine-tune a model on laboratory-style profiles");
    std::string ft_model, ft_in, ft_out;
    TrainConfig fcfg;
    fcfg.epochs = 2000;
    ft->add_option("--model", ft_model, "Model directory or weight file")->required();
    ft->add_option("--in", ft_in, "Lab dataset JSONL")->required();
    ft->add_option("--kit", common.kit_path, "Kit JSON");
    ft->add_option("--out", ft_out, "Output model directory")->required();
    ft->add_option("--epochs", fcfg.epochs, "Fine-tune epochs");
    ft->add_option("--batch-size", fcfg.batch_size, "Batch size");
    ft->add_option("--seed", fcfg.seed, "Shuffle seed");
    ft->add_option("--lr", fcfg.learning_rate, "Adam learning rate");
    ft->add_flag("--deterministic", common.deterministic,
                 "Bit-reproducible single-threaded gradient accumulation");
    ft->add_option("--threads", common.threads, "Worker threads (0 = default)");

    // ---- predict ---------------------------------------------------------------
    auto* pred = app.add_subcommand("predict", "Predict NoC for each profile in a dataset");
    std::string pred_model, pred_in, pred_out;
    pred->add_option("--model", pred_model, "Model directory or weight file")->required();
    pred->add_option("--kit", common.kit_path, "Kit JSON");
    pred->add_option("--in", pred_in, "Dataset (.dnoc or .jsonl)")->required();
    pred->add_option("--out", pred_out, "Predictions JSON path")->required();
    pred->add_option("--threads", common.threads, "Worker threads (0 = default)");

    // ---- eval ---------------------------------------------------------------
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a model against ground truth");
    std::string eval_model, eval_in, eval_report_path;
    std::vector<double> eval_thresholds;
    eval_cmd->add_option("--model", eval_model, "Model directory or weight file")->required();
    eval_cmd->add_option("--kit", common.kit_path, "Kit JSON");
    eval_cmd->add_option("--in", eval_in, "Dataset (.dnoc or .jsonl)")->required();
    eval_cmd->add_option("--report", eval_report_path, "Evaluation report JSON path")->required();
    eval_cmd->add_option("--thresholds", eval_thresholds,
                         "Abstention thresholds (default grid 0.1..0.999)");
    eval_cmd->add_option("--threads", common.threads, "Worker threads (0 = default)");

    // ---- explain ---------------------------------------------------------------
    auto* expl = app.add_subcommand("explain", "Render the explainability report for one profile");
    std::string expl_model, expl_in, expl_out;
    std::size_t expl_index = 0;
    expl->add_option("--model", expl_model, "Model directory or weight file")->required();
    expl->add_option("--kit", common.kit_path, "Kit JSON");
    expl->add_option("--in", expl_in, "Dataset JSONL")->required();
    expl->add_option("--index", expl_index, "Record index (0-based)")->required();
    expl->add_option("--out", expl_out, "Output directory")->required();

    // ---- mac ---------------------------------------------------------------
    auto* mac = app.add_subcommand("mac", "Maximum-allele-count baseline NoC per profile");
    std::string mac_in;
    double mac_cutoff = 0.5;
    mac->add_option("--in", mac_in, "Dataset JSONL")->required();
    mac->add_option("--cutoff", mac_cutoff, "plp cutoff for counting peaks");

    CLI11_PARSE(app, argc, argv);

    if (sim->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        params.seed = sim_seed;
        const DatasetSummary summary =
            simulate_dataset(kit, params, sim_n, sim_out, common.threads);
        print_summary(summary);
        return 0;
    }

    if (enc_cmd->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        const std::vector<SimulatedProfile> profiles = load_dataset_jsonl(enc_in);
        std::vector<EncodedProfile> records;
        records.reserve(profiles.size());
        for (const SimulatedProfile& p : profiles) {
            records.push_back(encode_compact(filter_artefact_peaks(p, enc_plp_threshold), kit));
        }
        write_tensor_cache(enc_out, records);
        std::printf("encoded %zu records -> %s\n", records.size(), enc_out.c_str());
        return 0;
    }

    if (train_cmd->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        if (!train_cfg_path.empty()) {
            // Explicit flags override the config file.
            TrainConfig file_cfg = TrainConfig::from_json_file(train_cfg_path);
            if (train_cmd->count("--epochs") == 0) tcfg.epochs = file_cfg.epochs;
            if (train_cmd->count("--batch-size") == 0) tcfg.batch_size = file_cfg.batch_size;
            if (train_cmd->count("--seed") == 0) tcfg.seed = file_cfg.seed;
            if (train_cmd->count("--split") == 0) tcfg.split_fraction = file_cfg.split_fraction;
            if (train_cmd->count("--lr") == 0) tcfg.learning_rate = file_cfg.learning_rate;
            if (train_cmd->count("--checkpoint-every") == 0)
                tcfg.checkpoint_every = file_cfg.checkpoint_every;
            if (train_cmd->count("--patience") == 0) tcfg.patience = file_cfg.patience;
            tcfg.loss_weights = file_cfg.loss_weights;
            if (file_cfg.deterministic) common.deterministic = true;
        }
        tcfg.deterministic = common.deterministic;
        tcfg.threads = common.threads;

        LoadedData data = load_encoded(train_in, kit, kDefaultPlpFilterThreshold);
        MemoryDataset all(std::move(data.encoded));
        auto [train_idx, test_idx] =
            split_random_fraction(all.size(), tcfg.split_fraction, tcfg.seed);
        SubsetDataset train_view(&all, std::move(train_idx));
        SubsetDataset test_view(&all, std::move(test_idx));

        std::filesystem::create_directories(train_out);
        tcfg.checkpoint_dir = train_out;
        DeepNoCModel<float> model = DeepNoCModel<float>::build(model_seed, !no_secondary);
        const TrainHistory history = train(model, train_view, test_view, tcfg);
        model.save_weights(train_out + "/weights.dnocw");
        write_text(train_out + "/model_card.json", model.model_card_json(tcfg.to_json()));
        write_text(train_out + "/history.json", history.to_json());
        if (!history.epochs.empty()) {
            const EpochStats& last = history.epochs.back();
            std::printf("epochs: %zu  final train acc: %.4f  final test acc: %.4f\n",
                        history.epochs.size(), last.train_noc_accuracy, last.test_noc_accuracy);
        }
        return 0;
    }

    if (ft->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        fcfg.deterministic = common.deterministic;
        fcfg.threads = common.threads;
        DeepNoCModel<float> model = DeepNoCModel<float>::load_weights(model_weight_path(ft_model));
        const std::vector<SimulatedProfile> lab = load_dataset_jsonl(ft_in);
        const TrainHistory history = fine_tune(model, lab, kit, fcfg);
        std::filesystem::create_directories(ft_out);
        model.save_weights(ft_out + "/weights.dnocw");
        write_text(ft_out + "/model_card.json", model.model_card_json(fcfg.to_json()));
        write_text(ft_out + "/history.json", history.to_json());
        if (!history.epochs.empty()) {
            std::printf("fine-tune epochs: %zu  final test acc: %.4f\n", history.epochs.size(),
                        history.epochs.back().test_noc_accuracy);
        }
        return 0;
    }

    if (pred->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        DeepNoCModel<float> model = DeepNoCModel<float>::load_weights(model_weight_path(pred_model));
        LoadedData data = load_encoded(pred_in, kit, kDefaultPlpFilterThreshold);
        std::ostringstream out;
        out << "[\n";
        for (std::size_t i = 0; i < data.encoded.size(); ++i) {
            const Prediction p = predict_noc(model, data.encoded[i]);
            out << "  {\"index\": " << i << ", \"noc\": " << p.noc << ", \"probs\": [";
            char buf[32];
            for (int j = 0; j < kMaxNoc; ++j) {
                std::snprintf(buf, sizeof(buf), "%.6f", p.probs[static_cast<std::size_t>(j)]);
                out << (j ? ", " : "") << buf;
            }
            out << "]}" << (i + 1 < data.encoded.size() ? "," : "") << "\n";
        }
        out << "]\n";
        write_text(pred_out, out.str());
        std::printf("wrote %zu predictions -> %s\n", data.encoded.size(), pred_out.c_str());
        return 0;
    }

    if (eval_cmd->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        DeepNoCModel<float> model = DeepNoCModel<float>::load_weights(model_weight_path(eval_model));
        LoadedData data = load_encoded(eval_in, kit, kDefaultPlpFilterThreshold);
        MemoryDataset dataset(std::move(data.encoded));
        const std::vector<double> grid =
            eval_thresholds.empty() ? default_threshold_grid() : eval_thresholds;
        const EvalReport report = evaluate(model, dataset, data.truths, grid, common.threads);
        write_text(eval_report_path, eval_report_json(report));
        std::fputs(format_confusion_text(report.matrix).c_str(), stdout);
        std::printf("overall accuracy: %.4f\n", report.overall_accuracy);
        return 0;
    }

    if (expl->parsed()) {
        const KitConfig kit = load_kit_or_default(common.kit_path);
        DeepNoCModel<float> model = DeepNoCModel<float>::load_weights(model_weight_path(expl_model));
        const std::vector<SimulatedProfile> profiles = load_dataset_jsonl(expl_in);
        if (expl_index >= profiles.size())
            throw DataError("record index " + std::to_string(expl_index) + " out of range (" +
                            expl_in + " has " + std::to_string(profiles.size()) + " records)");
        const SimulatedProfile filtered = filter_artefact_peaks(profiles[expl_index]);
        const EncodedProfile enc = encode_compact(filtered, kit);
        typename DeepNoCModel<float>::Workspace ws;
        const ModelOutputs<float> outputs = model.forward(enc, ws);
        std::filesystem::create_directories(expl_out);
        const std::string base = expl_out + "/report_" + std::to_string(expl_index);
        const ReportPaths paths =
            render_report(filtered, kit, enc, outputs, base + ".svg", base + ".json");
        std::printf("wrote %s and %s\n", paths.svg.c_str(), paths.json.c_str());
        return 0;
    }

    if (mac->parsed()) {
        const std::vector<SimulatedProfile> profiles = load_dataset_jsonl(mac_in);
        for (const SimulatedProfile& p : profiles) {
            std::printf("%d\n", mac_estimate(p, mac_cutoff));
        }
        return 0;
    }

    return 0;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const deepnoc::UsageError& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const deepnoc::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const deepnoc::NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
}

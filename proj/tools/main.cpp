// Command-line front end for the training pipeline. One subcommand per
// pipeline stage; every run is a pure function of its inputs and seed.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "cxr/augment.hpp"
#include "cxr/checkpoint.hpp"
#include "cxr/config.hpp"
#include "cxr/hypersearch.hpp"
#include "cxr/image_io.hpp"
#include "cxr/manifest.hpp"
#include "cxr/metrics.hpp"
#include "cxr/net.hpp"
#include "cxr/split.hpp"
#include "cxr/toygen.hpp"
#include "cxr/trainer.hpp"

namespace {

namespace fs = std::filesystem;

// Thrown for problems the user must fix (bad flags, missing inputs,
// overwrite without --force); mapped to exit code 2.
class usage_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct common_options {
    std::string config;
    std::string manifest;
    std::string split;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> workers;
    bool force = false;
};

cxr::experiment_config load_config(const common_options& opt) {
    cxr::experiment_config cfg;
    if (!opt.config.empty()) cfg = cxr::load_experiment_config(opt.config);
    if (!opt.manifest.empty()) cfg.manifest = opt.manifest;
    if (!opt.split.empty()) cfg.split_file = fs::path(opt.split);
    if (!opt.out.empty()) cfg.out_dir = opt.out;
    if (opt.seed) cfg.seed = *opt.seed;
    if (opt.workers) cfg.workers = *opt.workers;
    return cfg;
}

void refuse_existing(const fs::path& p, bool force) {
    if (!force && fs::exists(p))
        throw usage_error(p.string() + " already exists; pass --force to overwrite");
}

struct resolved_data {
    std::vector<cxr::manifest_record> records;
    cxr::dataset_split split;
    fs::path base_dir;  // manifest directory, for relative image paths
};

resolved_data resolve_data(const cxr::experiment_config& cfg) {
    if (cfg.manifest.empty())
        throw usage_error("no manifest given (set data.manifest in the config or pass --manifest)");
    resolved_data d;
    d.records = cxr::load_manifest(cfg.manifest);
    d.base_dir = cfg.manifest.parent_path();
    if (cfg.split_file) {
        d.split = cxr::load_split(*cfg.split_file);
    } else if (cfg.counts_set) {
        d.split = cxr::split_dataset(d.records, cfg.counts, cfg.split_seed);
    } else {
        throw usage_error(
            "no split given (set data.split or data.train/validation/test, or pass --split)");
    }
    return d;
}

std::vector<cxr::manifest_record> select_records(const resolved_data& d,
                                                 const std::vector<std::string>& ids) {
    std::map<std::string, const cxr::manifest_record*> by_id;
    for (const auto& r : d.records) by_id[r.id] = &r;
    std::vector<cxr::manifest_record> out;
    out.reserve(ids.size());
    for (const auto& id : ids) {
        auto it = by_id.find(id);
        if (it == by_id.end())
            throw usage_error("split references id '" + id + "' that the manifest does not contain");
        out.push_back(*it->second);
    }
    return out;
}

nlohmann::ordered_json config_json(const cxr::experiment_config& cfg) {
    nlohmann::ordered_json j;
    j["arch"] = cfg.arch;
    j["input_size"] = cfg.hp.input_size;
    j["dropout_p"] = cfg.hp.dropout_p;
    j["fc_units"] = cfg.hp.fc_units;
    j["learning_rate"] = cfg.hp.learning_rate;
    j["batch_size"] = cfg.hp.batch_size;
    j["max_epochs"] = cfg.hp.max_epochs;
    j["patience"] = cfg.hp.patience;
    j["freeze_depth"] = cfg.hp.freeze_depth;
    j["augment"] = {{"conventional", cfg.hp.policy.conventional_enabled},
                    {"mixup", cfg.hp.policy.mixup_enabled},
                    {"mixup_alpha", cfg.hp.policy.mixup_alpha},
                    {"ricap", cfg.hp.policy.ricap_enabled},
                    {"ricap_beta", cfg.hp.policy.ricap_beta}};
    j["config_hash"] = cxr::config_hash_hex(cfg);
    return j;
}

// ---- gen-toy ----------------------------------------------------------

int cmd_gen_toy(const common_options& opt, std::size_t n_per_class, std::size_t image_size) {
    const fs::path out = opt.out.empty() ? fs::path("toy") : fs::path(opt.out);
    refuse_existing(out / "manifest.csv", opt.force);
    const std::uint64_t seed = opt.seed.value_or(1);
    const auto records = cxr::generate_toy_dataset(out, {n_per_class, image_size}, seed);
    const auto counts = cxr::class_counts(records);
    std::printf("wrote %zu images (%zu per class) and %s\n", records.size(), n_per_class,
                (out / "manifest.csv").string().c_str());
    std::printf("healthy %zu, non_covid_pneumonia %zu, covid_pneumonia %zu\n", counts[0], counts[1],
                counts[2]);
    return 0;
}

// ---- split ------------------------------------------------------------

int cmd_split(const common_options& opt, const cxr::split_counts& counts) {
    cxr::experiment_config cfg = load_config(opt);
    if (counts.total() > 0) {
        cfg.counts = counts;
        cfg.counts_set = true;
        cfg.split_file.reset();
    }
    if (cfg.manifest.empty())
        throw usage_error("no manifest given (set data.manifest in the config or pass --manifest)");
    if (!cfg.counts_set) throw usage_error("split needs --train/--validation/--test counts");
    if (opt.seed) cfg.split_seed = *opt.seed;

    const fs::path out = opt.out.empty() ? fs::path("split.json") : fs::path(opt.out);
    refuse_existing(out, opt.force);
    const auto records = cxr::load_manifest(cfg.manifest);
    const auto split = cxr::split_dataset(records, cfg.counts, cfg.split_seed);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    cxr::save_split(split, out);
    std::printf("wrote %s: train %zu, validation %zu, test %zu (seed %llu)\n", out.string().c_str(),
                split.train.size(), split.validation.size(), split.test.size(),
                static_cast<unsigned long long>(split.seed));
    return 0;
}

// ---- train ------------------------------------------------------------

int cmd_train(const common_options& opt, const std::string& init_weights, bool record_time) {
    const cxr::experiment_config cfg = load_config(opt);
    const resolved_data data = resolve_data(cfg);
    const cxr::architecture arch = cxr::architecture_from_name(cfg.arch);

    const fs::path run_dir =
        cfg.out_dir / ("run_" + cxr::config_hash_hex(cfg) + "_" + std::to_string(cfg.seed));
    refuse_existing(run_dir / "model.ckpt", opt.force);
    fs::create_directories(run_dir);

    const auto train_set = cxr::make_example_set<float>(select_records(data, data.split.train),
                                                        data.base_dir, cfg.hp.input_size);
    const auto val_set = cxr::make_example_set<float>(select_records(data, data.split.validation),
                                                      data.base_dir, cfg.hp.input_size);

    cxr::model_state<float> model =
        cxr::build_model<float>(cfg.hp, arch, cxr::rng_stream(cfg.seed).substream(0).seed());
    if (!init_weights.empty()) cxr::load_checkpoint(init_weights, model);
    const cxr::fit_result result =
        cxr::fit(model, train_set, val_set, cfg.hp, cfg.seed, cfg.workers, record_time);

    cxr::save_checkpoint(run_dir / "model.ckpt", model);
    cxr::write_training_log(run_dir / "training_log.csv", result.history);
    std::printf("trained %d epoch(s)%s; best epoch %d, val_loss %.6f\n", result.stopped_epoch(),
                result.stopped_early ? " (early stop)" : "", result.best_epoch,
                result.best_val_loss);
    std::printf("artifacts in %s\n", run_dir.string().c_str());
    return 0;
}

// ---- eval -------------------------------------------------------------

int cmd_eval(const common_options& opt, const std::string& model_path) {
    if (model_path.empty()) throw usage_error("eval needs --model pointing to a checkpoint");
    const cxr::experiment_config cfg = load_config(opt);
    const resolved_data data = resolve_data(cfg);
    const cxr::architecture arch = cxr::architecture_from_name(cfg.arch);

    cxr::model_state<float> model = cxr::build_model<float>(cfg.hp, arch, 0);
    cxr::load_checkpoint(model_path, model);

    const auto test_set = cxr::make_example_set<float>(select_records(data, data.split.test),
                                                       data.base_dir, cfg.hp.input_size);
    const auto [loss, cm] = cxr::evaluate_model(model, test_set, cfg.hp.batch_size, cfg.workers);

    const fs::path out = opt.out.empty() ? fs::path(model_path).parent_path() / "eval_report.json"
                                         : fs::path(opt.out);
    refuse_existing(out, opt.force);
    if (out.has_parent_path()) fs::create_directories(out.parent_path());
    cxr::write_report(out, cxr::eval_report_json(loss, cm));
    std::fputs(cxr::render_confusion_text(cm).c_str(), stdout);
    std::printf("test_loss %.6f\nreport written to %s\n", loss, out.string().c_str());
    return 0;
}

// ---- search -----------------------------------------------------------

int cmd_search(const common_options& opt, const std::string& space_path,
               std::optional<int> trials_flag) {
    common_options merged = opt;
    if (!space_path.empty()) {
        if (!merged.config.empty())
            throw usage_error("give either --config or --space, not both");
        merged.config = space_path;
    }
    const cxr::experiment_config cfg = load_config(merged);
    const resolved_data data = resolve_data(cfg);
    const cxr::architecture arch = cxr::architecture_from_name(cfg.arch);
    const int n_trials = trials_flag.value_or(cfg.search_trials);
    const std::uint64_t search_seed = opt.seed.value_or(cfg.search_seed);

    const fs::path store = cfg.out_dir / ("search_" + std::to_string(search_seed));
    if (opt.force && fs::exists(store)) fs::remove_all(store);

    const auto train_records = select_records(data, data.split.train);
    const auto val_records = select_records(data, data.split.validation);
    // example sets per input size, loaded once on first use
    std::map<int, std::pair<cxr::example_set<float>, cxr::example_set<float>>> sets;
    auto sets_for = [&](int input_size) -> const auto& {
        auto it = sets.find(input_size);
        if (it == sets.end()) {
            it = sets.emplace(input_size,
                              std::make_pair(cxr::make_example_set<float>(train_records,
                                                                          data.base_dir, input_size),
                                             cxr::make_example_set<float>(val_records, data.base_dir,
                                                                          input_size)))
                     .first;
        }
        return it->second;
    };

    const auto ranked = cxr::run_search(
        cfg.space, cfg.hp, n_trials, search_seed, store,
        [&](const cxr::trial_config& tc, std::uint64_t fit_seed) {
            const auto& [tr, va] = sets_for(tc.hp.input_size);
            auto [model, fr] = cxr::train_model<float>(tr, va, tc.hp, arch, fit_seed, cfg.workers);
            cxr::trial_fit_result out;
            out.val_loss = fr.best_val_loss;
            out.best_epoch = fr.best_epoch;
            for (const auto& rec : fr.history)
                if (rec.epoch == fr.best_epoch) out.val_accuracy = rec.val_accuracy;
            out.history = fr.history;
            return out;
        });

    nlohmann::ordered_json ranking = nlohmann::ordered_json::array();
    for (const auto& t : ranked) ranking.push_back(cxr::detail::trial_json(t));
    cxr::write_report(store / "ranking.json", ranking);

    const auto& best = ranked.front();
    std::printf("%d trial(s) done; ranking in %s\n", n_trials, (store / "ranking.json").string().c_str());
    std::printf("best: trial %d, val_loss %.6f, val_accuracy %.4f, aug %s, input %d, fc %d, "
                "dropout %.4f, lr %.3g\n",
                best.config.trial_id, best.val_loss, best.val_accuracy,
                cxr::to_string(best.config.preset), best.config.hp.input_size,
                best.config.hp.fc_units, best.config.hp.dropout_p, best.config.hp.learning_rate);
    return 0;
}

// ---- trials -----------------------------------------------------------

int cmd_trials(const common_options& opt, int n_seeds) {
    if (n_seeds < 2) throw usage_error("trials needs --seeds of at least 2");
    const cxr::experiment_config cfg = load_config(opt);
    const resolved_data data = resolve_data(cfg);
    const cxr::architecture arch = cxr::architecture_from_name(cfg.arch);

    const fs::path out_dir = cfg.out_dir / ("trials_" + cxr::config_hash_hex(cfg) + "_" +
                                            std::to_string(cfg.seed));
    refuse_existing(out_dir / "trials_report.json", opt.force);
    fs::create_directories(out_dir);

    const auto train_set = cxr::make_example_set<float>(select_records(data, data.split.train),
                                                        data.base_dir, cfg.hp.input_size);
    const auto val_set = cxr::make_example_set<float>(select_records(data, data.split.validation),
                                                      data.base_dir, cfg.hp.input_size);
    const auto test_set = cxr::make_example_set<float>(select_records(data, data.split.test),
                                                       data.base_dir, cfg.hp.input_size);

    std::vector<std::uint64_t> seeds;
    for (int i = 0; i < n_seeds; ++i) seeds.push_back(cfg.seed + static_cast<std::uint64_t>(i));
    const auto agg =
        cxr::repeated_trials<float>(train_set, val_set, test_set, cfg.hp, arch, seeds, cfg.workers);

    cxr::write_report(out_dir / "trials_report.json", cxr::trials_report_json(config_json(cfg), agg));
    std::printf("%d trial(s): accuracy %.4f +/- %.4f, loss %.4f +/- %.4f\n", n_seeds,
                agg.mean_accuracy, agg.sd_accuracy, agg.mean_loss, agg.sd_loss);
    std::printf("report written to %s\n", (out_dir / "trials_report.json").string().c_str());
    return 0;
}

// ---- augment-preview --------------------------------------------------

int cmd_augment_preview(const common_options& opt, const std::string& image_path, int n) {
    if (image_path.empty()) throw usage_error("augment-preview needs --image");
    if (n < 1) throw usage_error("augment-preview needs --n of at least 1");
    const cxr::experiment_config cfg = load_config(opt);
    if (cfg.hp.policy.ricap_enabled && n < 4)
        throw usage_error("patch composition needs --n of at least 4");

    const cxr::raw_image raw = cxr::read_png(image_path);
    const cxr::raw_image gray = raw.channels == 3 ? cxr::to_grayscale(raw) : raw;
    cxr::image<float> base(1, gray.height, gray.width);
    for (std::size_t i = 0; i < base.data.size(); ++i)
        base.data[i] = static_cast<float>(gray.pixels[i]) / 255.0f;

    cxr::example_batch<float> batch;
    for (int i = 0; i < n; ++i) {
        batch.images.push_back(base);
        batch.labels.push_back(cxr::soft_label::one_hot(0));
    }
    cxr::rng_stream rng(opt.seed.value_or(1));
    cxr::augment_training_batch(batch, cfg.hp.policy, rng, cfg.workers);

    const fs::path out = opt.out.empty() ? fs::path("preview") : fs::path(opt.out);
    refuse_existing(out / "preview_000.png", opt.force);
    fs::create_directories(out);
    std::vector<std::uint8_t> pix(base.height * base.width);
    for (int i = 0; i < n; ++i) {
        for (std::size_t p = 0; p < pix.size(); ++p) {
            float v = batch.images[i].data[p];
            v = v < 0.0f ? 0.0f : (v > 1.0f ? 1.0f : v);
            pix[p] = static_cast<std::uint8_t>(std::lround(v * 255.0));
        }
        char name[48];
        std::snprintf(name, sizeof(name), "preview_%03d.png", i);
        cxr::write_png_gray(out / name, pix.data(), base.width, base.height);
    }
    std::printf("wrote %d augmented sample(s) to %s\n", n, out.string().c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"chest X-ray 3-class classification pipeline"};
    app.require_subcommand(1);

    common_options opt;
    std::size_t n_per_class = 100;
    std::size_t image_size = 64;
    cxr::split_counts counts{};
    std::string init_weights;
    bool record_time = false;
    std::string model_path;
    std::string space_path;
    std::optional<int> trials_flag;
    int n_seeds = 5;
    std::string image_path;
    int preview_n = 8;

    auto add_common = [&](CLI::App* sub, bool with_data) {
        sub->add_option("--config", opt.config, "experiment config file");
        sub->add_option("--seed", opt.seed, "seed override");
        sub->add_option("--workers", opt.workers, "worker thread count");
        sub->add_option("--out", opt.out, "output path override");
        sub->add_flag("--force", opt.force, "overwrite existing outputs");
        if (with_data) {
            sub->add_option("--manifest", opt.manifest, "dataset manifest CSV");
            sub->add_option("--split", opt.split, "dataset split JSON");
        }
    };

    CLI::App* gen = app.add_subcommand("gen-toy", "generate the synthetic pattern dataset");
    add_common(gen, false);
    gen->add_option("--n-per-class", n_per_class, "images per class");
    gen->add_option("--image-size", image_size, "square image size in pixels");

    CLI::App* split_cmd = app.add_subcommand("split", "write a stratified train/val/test split");
    add_common(split_cmd, true);
    split_cmd->add_option("--train", counts.train, "training example count");
    split_cmd->add_option("--validation", counts.validation, "validation example count");
    split_cmd->add_option("--test", counts.test, "test example count");

    CLI::App* train_cmd = app.add_subcommand("train", "train a model on a split");
    add_common(train_cmd, true);
    train_cmd->add_option("--init-weights", init_weights, "checkpoint to initialize from");
    train_cmd->add_flag("--timing", record_time,
                        "record real epoch durations (makes logs non-reproducible)");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    add_common(eval_cmd, true);
    eval_cmd->add_option("--model", model_path, "model checkpoint");

    CLI::App* search_cmd = app.add_subcommand("search", "random hyperparameter search");
    add_common(search_cmd, true);
    search_cmd->add_option("--space", space_path, "config file holding the [search] section");
    search_cmd->add_option("--trials", trials_flag, "number of trials");

    CLI::App* trials_cmd = app.add_subcommand("trials", "repeated training over consecutive seeds");
    add_common(trials_cmd, true);
    trials_cmd->add_option("--seeds", n_seeds, "number of consecutive seeds");

    CLI::App* prev_cmd = app.add_subcommand("augment-preview", "render augmented samples as PNG");
    add_common(prev_cmd, false);
    prev_cmd->add_option("--image", image_path, "source PNG");
    prev_cmd->add_option("--n", preview_n, "number of samples");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(gen)) return cmd_gen_toy(opt, n_per_class, image_size);
        if (app.got_subcommand(split_cmd)) return cmd_split(opt, counts);
        if (app.got_subcommand(train_cmd)) return cmd_train(opt, init_weights, record_time);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(opt, model_path);
        if (app.got_subcommand(search_cmd)) return cmd_search(opt, space_path, trials_flag);
        if (app.got_subcommand(trials_cmd)) return cmd_trials(opt, n_seeds);
        if (app.got_subcommand(prev_cmd)) return cmd_augment_preview(opt, image_path, preview_n);
        std::fprintf(stderr, "error: no subcommand selected\n");
        return 2;
    } catch (const usage_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const cxr::config_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const cxr::manifest_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const cxr::split_error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}

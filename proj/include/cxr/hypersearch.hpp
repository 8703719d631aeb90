#ifndef CXR_HYPERSEARCH_HPP
#define CXR_HYPERSEARCH_HPP

// Plain random search over hyperparameters and augmentation combinations.
// Every trial is addressed by (search_seed, trial_id) alone: the config comes
// from substream(trial_id).substream(0) and the fit runs with the seed of
// substream(trial_id).substream(1), so execution order and restarts cannot
// change any outcome. Finished trials persist as one JSON file each and are
// replayed from disk on resume.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/augment.hpp"
#include "cxr/net.hpp"
#include "cxr/rng.hpp"
#include "cxr/trainer.hpp"

namespace cxr {

class search_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct search_space {
    double dropout_lo = 0.0;
    double dropout_hi = 0.5;
    int fc_lo = 64;
    int fc_hi = 512;
    int fc_step = 32;
    std::vector<int> input_sizes = {192, 220, 224};
    double lr_lo = 1e-5;
    double lr_hi = 1e-3;
    std::vector<augmentation_preset> presets{all_augmentation_presets.begin(),
                                             all_augmentation_presets.end()};
    std::vector<int> freeze_depths = {0};

    // Small inputs for fast synthetic-data runs.
    static search_space desk() {
        search_space s;
        s.input_sizes = {32, 64};
        return s;
    }
};

// Collects every problem instead of stopping at the first.
inline void validate_search_space(const search_space& s) {
    std::string errs;
    auto add = [&](const std::string& m) {
        if (!errs.empty()) errs += "; ";
        errs += m;
    };
    if (!(s.dropout_lo <= s.dropout_hi) || s.dropout_lo < 0.0 || s.dropout_hi >= 1.0)
        add("dropout range must satisfy 0 <= lo <= hi < 1");
    if (s.fc_step < 1) add("fc_step must be at least 1");
    if (s.fc_lo > s.fc_hi || s.fc_lo < 1) add("fc_units range must satisfy 1 <= lo <= hi");
    if (s.input_sizes.empty()) add("input_sizes must be non-empty");
    for (int v : s.input_sizes)
        if (v < 1) add("input_sizes entries must be positive");
    if (!(s.lr_lo > 0.0) || !(s.lr_lo <= s.lr_hi)) add("learning_rate range must satisfy 0 < lo <= hi");
    if (s.presets.empty()) add("presets must be non-empty");
    if (s.freeze_depths.empty()) add("freeze_depths must be non-empty");
    for (int v : s.freeze_depths)
        if (v < 0) add("freeze_depths entries must be non-negative");
    if (!errs.empty()) throw search_error("invalid search space: " + errs);
}

struct trial_config {
    int trial_id = 0;
    hyper_params hp;
    augmentation_preset preset = augmentation_preset::conv_mixup;
};

// Draw order is fixed and documented: dropout, fc_units, input_size,
// learning_rate (log-uniform), preset, freeze_depth. Fields the space does
// not cover (batch size, epochs, patience, mixing strengths) come from base.
inline trial_config sample_config(const search_space& space, const hyper_params& base,
                                  rng_stream rng) {
    validate_search_space(space);
    trial_config t;
    t.hp = base;
    t.hp.dropout_p = rng.uniform(space.dropout_lo, space.dropout_hi);
    const std::uint64_t fc_steps =
        static_cast<std::uint64_t>((space.fc_hi - space.fc_lo) / space.fc_step) + 1;
    t.hp.fc_units = space.fc_lo + space.fc_step * static_cast<int>(rng.below(fc_steps));
    t.hp.input_size = space.input_sizes[rng.below(space.input_sizes.size())];
    t.hp.learning_rate = std::exp(rng.uniform(std::log(space.lr_lo), std::log(space.lr_hi)));
    t.preset = space.presets[rng.below(space.presets.size())];
    t.hp.policy = preset_policy(t.preset, base.policy.mixup_alpha, base.policy.ricap_beta);
    t.hp.freeze_depth = space.freeze_depths[rng.below(space.freeze_depths.size())];
    return t;
}

// What the search needs back from one fit.
struct trial_fit_result {
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    int best_epoch = 0;
    std::vector<epoch_record> history;
};

struct trial_outcome {
    trial_config config;
    std::uint64_t fit_seed = 0;
    bool ok = false;
    std::string error;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    int best_epoch = 0;
};

namespace detail {

inline nlohmann::ordered_json trial_json(const trial_outcome& t) {
    nlohmann::ordered_json j;
    j["trial_id"] = t.config.trial_id;
    j["status"] = t.ok ? "ok" : "failed";
    if (!t.ok) j["error"] = t.error;
    nlohmann::ordered_json cfg;
    cfg["input_size"] = t.config.hp.input_size;
    cfg["dropout_p"] = t.config.hp.dropout_p;
    cfg["fc_units"] = t.config.hp.fc_units;
    cfg["learning_rate"] = t.config.hp.learning_rate;
    cfg["batch_size"] = t.config.hp.batch_size;
    cfg["max_epochs"] = t.config.hp.max_epochs;
    cfg["patience"] = t.config.hp.patience;
    cfg["freeze_depth"] = t.config.hp.freeze_depth;
    cfg["augmentation"] = to_string(t.config.preset);
    cfg["mixup_alpha"] = t.config.hp.policy.mixup_alpha;
    cfg["ricap_beta"] = t.config.hp.policy.ricap_beta;
    j["config"] = std::move(cfg);
    j["fit_seed"] = t.fit_seed;
    j["val_loss"] = t.val_loss;
    j["val_accuracy"] = t.val_accuracy;
    j["best_epoch"] = t.best_epoch;
    j["log"] = "trial_" + std::to_string(t.config.trial_id) + "_log.csv";
    return j;
}

inline trial_outcome trial_from_json(const nlohmann::json& j) {
    trial_outcome t;
    t.config.trial_id = j.at("trial_id").get<int>();
    t.ok = j.at("status").get<std::string>() == "ok";
    if (j.contains("error")) t.error = j.at("error").get<std::string>();
    const auto& cfg = j.at("config");
    t.config.hp.input_size = cfg.at("input_size").get<int>();
    t.config.hp.dropout_p = cfg.at("dropout_p").get<double>();
    t.config.hp.fc_units = cfg.at("fc_units").get<int>();
    t.config.hp.learning_rate = cfg.at("learning_rate").get<double>();
    t.config.hp.batch_size = cfg.at("batch_size").get<int>();
    t.config.hp.max_epochs = cfg.at("max_epochs").get<int>();
    t.config.hp.patience = cfg.at("patience").get<int>();
    t.config.hp.freeze_depth = cfg.at("freeze_depth").get<int>();
    t.config.preset = parse_augmentation_preset(cfg.at("augmentation").get<std::string>());
    t.config.hp.policy = preset_policy(t.config.preset, cfg.at("mixup_alpha").get<double>(),
                                       cfg.at("ricap_beta").get<double>());
    t.fit_seed = j.at("fit_seed").get<std::uint64_t>();
    t.val_loss = j.at("val_loss").get<double>();
    t.val_accuracy = j.at("val_accuracy").get<double>();
    t.best_epoch = j.at("best_epoch").get<int>();
    return t;
}

inline void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::trunc);
        if (!out) throw search_error("cannot open " + tmp.string() + " for writing");
        out << content;
        if (!out) throw search_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace detail

// Successful trials sorted by validation loss ascending, ties by trial_id;
// failed trials follow, by trial_id. The comparison key is what persists in
// the store, so a resumed ranking equals the uninterrupted one.
inline std::vector<trial_outcome> rank_trials(std::vector<trial_outcome> trials) {
    std::sort(trials.begin(), trials.end(), [](const trial_outcome& a, const trial_outcome& b) {
        if (a.ok != b.ok) return a.ok;
        if (a.ok && a.val_loss != b.val_loss) return a.val_loss < b.val_loss;
        return a.config.trial_id < b.config.trial_id;
    });
    return trials;
}

// Runs (or resumes) a random search. fit_trial(config, fit_seed) returns a
// trial_fit_result and may throw; a throwing trial is recorded as failed and
// the search moves on. The search itself fails only when no trial succeeds.
template <typename FitFn>
std::vector<trial_outcome> run_search(const search_space& space, const hyper_params& base,
                                      int n_trials, std::uint64_t search_seed,
                                      const std::filesystem::path& store_dir, FitFn&& fit_trial) {
    if (n_trials < 1) throw search_error("n_trials must be at least 1");
    validate_search_space(space);
    std::filesystem::create_directories(store_dir);

    const rng_stream search_rng(search_seed);
    std::vector<trial_outcome> outcomes;
    for (int id = 0; id < n_trials; ++id) {
        const std::filesystem::path trial_path = store_dir / ("trial_" + std::to_string(id) + ".json");
        if (std::filesystem::exists(trial_path)) {
            std::ifstream in(trial_path);
            nlohmann::json j;
            try {
                in >> j;
                outcomes.push_back(detail::trial_from_json(j));
            } catch (const std::exception& e) {
                throw search_error("unreadable trial store file " + trial_path.string() + ": " +
                                   e.what());
            }
            continue;
        }

        const rng_stream trial_rng = search_rng.substream(static_cast<std::uint64_t>(id));
        trial_outcome t;
        t.config = sample_config(space, base, trial_rng.substream(0));
        t.config.trial_id = id;
        t.fit_seed = trial_rng.substream(1).seed();
        try {
            trial_fit_result r = fit_trial(t.config, t.fit_seed);
            t.ok = true;
            t.val_loss = r.val_loss;
            t.val_accuracy = r.val_accuracy;
            t.best_epoch = r.best_epoch;
            if (!r.history.empty())
                write_training_log(store_dir / ("trial_" + std::to_string(id) + "_log.csv"),
                                   r.history);
        } catch (const std::exception& e) {
            t.ok = false;
            t.error = e.what();
        }
        detail::write_file_atomic(trial_path, detail::trial_json(t).dump(2) + "\n");
        outcomes.push_back(std::move(t));
    }

    const bool any_ok = std::any_of(outcomes.begin(), outcomes.end(),
                                    [](const trial_outcome& t) { return t.ok; });
    if (!any_ok)
        throw search_error("all " + std::to_string(n_trials) + " trials failed; first error: " +
                           (outcomes.empty() ? std::string("none") : outcomes.front().error));
    return rank_trials(std::move(outcomes));
}

}  // namespace cxr

#endif

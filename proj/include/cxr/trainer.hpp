#ifndef CXR_TRAINER_HPP
#define CXR_TRAINER_HPP

// Training loop: shuffled mini-batches with augmentation, RMSprop updates,
// per-epoch validation, early stopping on validation loss, and restoration of
// the best-epoch weights when the loop ends.
//
// Random streams are laid out so a run is a pure function of its seed:
//   run(seed).substream(0)            weight initialisation
//   run(seed).substream(e)            epoch e, 1-based
//     epoch.substream(0)              batch order shuffle
//     epoch.substream(b + 1)          batch b, 0-based
//       batch.substream(i)            affine draw for example i
//       batch.substream(2^32).substream(i)  dropout mask for example i
//       batch, sequential draws       mixup and patch-composite parameters
// Each example's noise comes from its own substream, so results are identical
// for any worker count.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "cxr/augment.hpp"
#include "cxr/image_io.hpp"
#include "cxr/manifest.hpp"
#include "cxr/net.hpp"
#include "cxr/optimizer.hpp"
#include "cxr/rng.hpp"
#include "cxr/tensor.hpp"

namespace cxr {

class training_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::uint64_t dropout_substream = std::uint64_t(1) << 32;

template <typename T = float>
struct example_set {
    std::vector<image<T>> images;
    std::vector<soft_label> labels;
    std::vector<int> classes;  // hard label per example

    std::size_t size() const { return images.size(); }
};

// Loads every record's image at the given square size; relative filepaths are
// resolved against base_dir.
template <typename T = float>
example_set<T> make_example_set(const std::vector<manifest_record>& records,
                                const std::filesystem::path& base_dir, std::size_t input_size) {
    example_set<T> set;
    set.images.reserve(records.size());
    set.labels.reserve(records.size());
    set.classes.reserve(records.size());
    for (const auto& rec : records) {
        std::filesystem::path p(rec.filepath);
        if (p.is_relative()) p = base_dir / p;
        set.images.push_back(load_image<T>(p, input_size, input_size));
        set.labels.push_back(soft_label::one_hot(static_cast<int>(rec.label)));
        set.classes.push_back(static_cast<int>(rec.label));
    }
    return set;
}

struct early_stop_state {
    double best_loss = std::numeric_limits<double>::infinity();
    int best_epoch = 0;
    int epochs_without_improvement = 0;
};

// Incorporates one epoch's validation loss; returns true when training should
// stop. Improvement means strictly lower loss. The stop condition fires once
// the non-improving streak exceeds the patience, so patience 0 stops at the
// first non-improving epoch.
inline bool early_stop_update(early_stop_state& s, int epoch, double val_loss, int patience) {
    if (val_loss < s.best_loss) {
        s.best_loss = val_loss;
        s.best_epoch = epoch;
        s.epochs_without_improvement = 0;
        return false;
    }
    s.epochs_without_improvement += 1;
    return s.epochs_without_improvement > patience;
}

struct epoch_record {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
    double wall_time_s = 0.0;
};

struct fit_result {
    std::vector<epoch_record> history;
    int best_epoch = 0;
    double best_val_loss = std::numeric_limits<double>::infinity();
    bool stopped_early = false;

    int stopped_epoch() const { return history.empty() ? 0 : history.back().epoch; }
};

namespace detail {

template <typename T>
example_batch<T> gather_batch(const example_set<T>& set, const std::vector<std::size_t>& order,
                              std::size_t begin, std::size_t end) {
    example_batch<T> b;
    b.images.reserve(end - begin);
    b.labels.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        b.images.push_back(set.images[order[i]]);
        b.labels.push_back(set.labels[order[i]]);
    }
    return b;
}

}  // namespace detail

// One pass over the training set in a freshly shuffled order. The final
// partial batch is kept. Returns the example-weighted mean training loss.
template <typename T>
double train_one_epoch(model_state<T>& m, const example_set<T>& train, const hyper_params& hp,
                       const rng_stream& epoch_rng, int workers = 1) {
    if (train.size() == 0) throw training_error("training set is empty");
    if (hp.batch_size <= 0) throw training_error("batch_size must be positive");

    rng_stream shuffle_rng = epoch_rng.substream(0);
    const std::vector<std::size_t> order = shuffle_rng.permutation(train.size());

    double total = 0.0;
    std::size_t seen = 0;
    const std::size_t bs = static_cast<std::size_t>(hp.batch_size);
    for (std::size_t begin = 0, b = 0; begin < train.size(); begin += bs, ++b) {
        const std::size_t end = std::min(begin + bs, train.size());
        example_batch<T> batch = detail::gather_batch(train, order, begin, end);
        rng_stream batch_rng = epoch_rng.substream(b + 1);
        augment_training_batch(batch, hp.policy, batch_rng, workers);

        rng_stream drop_rng = batch_rng.substream(dropout_substream);
        forward_cache<T> cache;
        const auto probs = forward(m, batch.images, run_mode::train, &drop_rng, &cache, workers);
        const double loss = loss_softmax_ce(probs, batch.labels);
        if (!std::isfinite(loss))
            throw training_error("training loss is not finite (batch " + std::to_string(b) + ")");
        const auto grads = backward(m, cache, batch.labels, workers);
        rmsprop_step(m, grads, hp.learning_rate);

        total += loss * static_cast<double>(end - begin);
        seen += end - begin;
    }
    return total / static_cast<double>(seen);
}

// Loss and accuracy over a whole set in eval mode, fixed order, no noise.
template <typename T>
std::pair<double, double> evaluate_set(const model_state<T>& m, const example_set<T>& set,
                                       int batch_size, int workers = 1) {
    if (set.size() == 0) throw training_error("evaluation set is empty");
    const std::size_t bs = batch_size > 0 ? static_cast<std::size_t>(batch_size) : set.size();
    double total = 0.0;
    std::size_t correct = 0;
    for (std::size_t begin = 0; begin < set.size(); begin += bs) {
        const std::size_t end = std::min(begin + bs, set.size());
        std::vector<image<T>> images(set.images.begin() + begin, set.images.begin() + end);
        std::vector<soft_label> labels(set.labels.begin() + begin, set.labels.begin() + end);
        const auto probs = forward<T>(m, images, run_mode::eval, nullptr, nullptr, workers);
        total += loss_softmax_ce(probs, labels) * static_cast<double>(end - begin);
        for (std::size_t i = 0; i < probs.size(); ++i)
            if (predict_class3(probs[i]) == set.classes[begin + i]) ++correct;
    }
    return {total / static_cast<double>(set.size()),
            static_cast<double>(correct) / static_cast<double>(set.size())};
}

// Trains an already-built model. Keeps a snapshot of the weights from the
// best validation epoch and restores it before returning; the optimizer
// accumulator is left at its final value. Aborts if any loss stops being
// finite. wall_time_s stays 0 unless record_time is set, so logs from equal
// seeds are byte-identical by default.
template <typename T>
fit_result fit(model_state<T>& m, const example_set<T>& train, const example_set<T>& val,
               const hyper_params& hp, std::uint64_t seed, int workers = 1,
               bool record_time = false) {
    if (hp.max_epochs <= 0) throw training_error("max_epochs must be positive");
    if (hp.patience < 0) throw training_error("patience must be non-negative");

    const rng_stream run(seed);
    fit_result result;
    early_stop_state es;
    std::vector<tensor<T>> best_params;

    for (int e = 1; e <= hp.max_epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        const double train_loss = train_one_epoch(m, train, hp, run.substream(e), workers);
        const auto [val_loss, val_acc] = evaluate_set(m, val, hp.batch_size, workers);
        if (!std::isfinite(val_loss))
            throw training_error("validation loss is not finite (epoch " + std::to_string(e) + ")");
        double dt = 0.0;
        if (record_time)
            dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.history.push_back({e, train_loss, val_loss, val_acc, dt});

        const bool improved = val_loss < es.best_loss;
        const bool stop = early_stop_update(es, e, val_loss, hp.patience);
        if (improved) best_params = m.params;
        if (stop) {
            result.stopped_early = true;
            break;
        }
    }

    m.params = std::move(best_params);
    result.best_epoch = es.best_epoch;
    result.best_val_loss = es.best_loss;
    return result;
}

// Builds the model from the run's init substream, then fits it. This is the
// whole-run entry point: everything downstream of (data, hp, arch, seed) is
// deterministic.
template <typename T = float>
std::pair<model_state<T>, fit_result> train_model(const example_set<T>& train,
                                                  const example_set<T>& val, const hyper_params& hp,
                                                  const architecture& arch, std::uint64_t seed,
                                                  int workers = 1, bool record_time = false) {
    model_state<T> m = build_model<T>(hp, arch, rng_stream(seed).substream(0).seed());
    fit_result r = fit(m, train, val, hp, seed, workers, record_time);
    return {std::move(m), std::move(r)};
}

inline void write_training_log(const std::filesystem::path& path,
                               const std::vector<epoch_record>& history) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw training_error("cannot open " + path.string() + " for writing");
    out << "epoch,train_loss,val_loss,val_accuracy,wall_time_s\n";
    char line[160];
    for (const auto& r : history) {
        std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.3f\n", r.epoch, r.train_loss,
                      r.val_loss, r.val_accuracy, r.wall_time_s);
        out << line;
    }
    if (!out) throw training_error("write failed for " + path.string());
}

}  // namespace cxr

#endif

#ifndef CXR_METRICS_HPP
#define CXR_METRICS_HPP

// Test-set metrics: the 3x3 confusion matrix, accuracy, per-class
// sensitivity, and the repeated-seed trial protocol with mean and sample
// standard deviation aggregation.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/manifest.hpp"
#include "cxr/net.hpp"
#include "cxr/trainer.hpp"

namespace cxr {

class metrics_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Rows are ground truth, columns are predictions, both in class order
// healthy, non_covid_pneumonia, covid_pneumonia.
struct confusion_matrix3 {
    std::array<std::array<std::uint64_t, num_classes>, num_classes> counts{};

    std::uint64_t total() const {
        std::uint64_t n = 0;
        for (const auto& row : counts)
            for (std::uint64_t c : row) n += c;
        return n;
    }

    std::uint64_t row_sum(int c) const {
        std::uint64_t n = 0;
        for (std::uint64_t v : counts[static_cast<std::size_t>(c)]) n += v;
        return n;
    }

    std::uint64_t trace() const {
        std::uint64_t n = 0;
        for (int c = 0; c < num_classes; ++c) n += counts[c][c];
        return n;
    }

    confusion_matrix3& operator+=(const confusion_matrix3& o) {
        for (int i = 0; i < num_classes; ++i)
            for (int j = 0; j < num_classes; ++j) counts[i][j] += o.counts[i][j];
        return *this;
    }

    bool operator==(const confusion_matrix3&) const = default;
};

inline confusion_matrix3 confusion_matrix(const std::vector<int>& truth,
                                          const std::vector<int>& predicted) {
    if (truth.size() != predicted.size())
        throw metrics_error("confusion_matrix: " + std::to_string(truth.size()) + " labels vs " +
                            std::to_string(predicted.size()) + " predictions");
    confusion_matrix3 cm;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (truth[i] < 0 || truth[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes)
            throw metrics_error("confusion_matrix: class index out of range at position " +
                                std::to_string(i));
        cm.counts[truth[i]][predicted[i]] += 1;
    }
    return cm;
}

inline double accuracy(const confusion_matrix3& cm) {
    const std::uint64_t n = cm.total();
    if (n == 0) throw metrics_error("accuracy of an empty confusion matrix");
    return static_cast<double>(cm.trace()) / static_cast<double>(n);
}

inline double sensitivity(const confusion_matrix3& cm, int c) {
    if (c < 0 || c >= num_classes) throw metrics_error("sensitivity: class index out of range");
    const std::uint64_t row = cm.row_sum(c);
    if (row == 0)
        throw metrics_error(std::string("sensitivity: class ") +
                            to_string(static_cast<diagnosis>(c)) + " absent from ground truth");
    return static_cast<double>(cm.counts[c][c]) / static_cast<double>(row);
}

// Eval-mode pass over the test set: mean cross entropy against the hard
// labels and the confusion matrix of argmax predictions. The model is
// untouched.
template <typename T>
std::pair<double, confusion_matrix3> evaluate_model(const model_state<T>& m,
                                                    const example_set<T>& test, int batch_size,
                                                    int workers = 1) {
    if (test.size() == 0) throw metrics_error("evaluate_model: empty test set");
    const std::size_t bs = batch_size > 0 ? static_cast<std::size_t>(batch_size) : test.size();
    double total = 0.0;
    std::vector<int> predicted(test.size());
    for (std::size_t begin = 0; begin < test.size(); begin += bs) {
        const std::size_t end = std::min(begin + bs, test.size());
        std::vector<image<T>> images(test.images.begin() + begin, test.images.begin() + end);
        std::vector<soft_label> labels(test.labels.begin() + begin, test.labels.begin() + end);
        const auto probs = forward<T>(m, images, run_mode::eval, nullptr, nullptr, workers);
        total += loss_softmax_ce(probs, labels) * static_cast<double>(end - begin);
        for (std::size_t i = 0; i < probs.size(); ++i)
            predicted[begin + i] = predict_class3(probs[i]);
    }
    return {total / static_cast<double>(test.size()), confusion_matrix(test.classes, predicted)};
}

// Sample mean and standard deviation (n-1 denominator; a single value has
// sd 0 by convention).
inline std::pair<double, double> mean_sd(const std::vector<double>& xs) {
    if (xs.empty()) throw metrics_error("mean_sd of an empty list");
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = sum / static_cast<double>(xs.size());
    if (xs.size() == 1) return {mean, 0.0};
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(xs.size() - 1))};
}

struct seed_outcome {
    std::uint64_t seed = 0;
    double test_loss = 0.0;
    double test_accuracy = 0.0;
    confusion_matrix3 confusion;
};

struct aggregate_result {
    std::vector<seed_outcome> per_seed;
    double mean_loss = 0.0;
    double sd_loss = 0.0;
    double mean_accuracy = 0.0;
    double sd_accuracy = 0.0;
};

inline aggregate_result aggregate(std::vector<seed_outcome> per_seed) {
    if (per_seed.empty()) throw metrics_error("aggregate of zero trials");
    aggregate_result agg;
    std::vector<double> losses, accs;
    for (const auto& s : per_seed) {
        losses.push_back(s.test_loss);
        accs.push_back(s.test_accuracy);
    }
    std::tie(agg.mean_loss, agg.sd_loss) = mean_sd(losses);
    std::tie(agg.mean_accuracy, agg.sd_accuracy) = mean_sd(accs);
    agg.per_seed = std::move(per_seed);
    return agg;
}

// One full train-and-evaluate per seed on the fixed split; only the seed
// varies between trials. A failing trial is reported with its seed.
template <typename T = float>
aggregate_result repeated_trials(const example_set<T>& train, const example_set<T>& val,
                                 const example_set<T>& test, const hyper_params& hp,
                                 const architecture& arch, const std::vector<std::uint64_t>& seeds,
                                 int workers = 1) {
    if (seeds.size() < 2) throw metrics_error("repeated trials need at least 2 seeds for a sd");
    std::vector<seed_outcome> outcomes;
    for (std::uint64_t seed : seeds) {
        try {
            auto [model, fitres] = train_model<T>(train, val, hp, arch, seed, workers);
            auto [loss, cm] = evaluate_model(model, test, hp.batch_size, workers);
            outcomes.push_back({seed, loss, accuracy(cm), cm});
        } catch (const metrics_error&) {
            throw;
        } catch (const std::exception& e) {
            throw metrics_error("trial with seed " + std::to_string(seed) + " failed: " + e.what());
        }
    }
    return aggregate(std::move(outcomes));
}

namespace detail {

inline std::string format_pct(double fraction) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f%%", fraction * 100.0);
    return buf;
}

}  // namespace detail

// Plain-text table of a confusion matrix with accuracy and per-class
// sensitivity; percentages use two decimal places.
inline std::string render_confusion_text(const confusion_matrix3& cm) {
    std::string out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-22s %10s %10s %10s\n", "truth \\ predicted", "healthy",
                  "non_covid", "covid");
    out += line;
    static const char* row_names[num_classes] = {"healthy", "non_covid_pneumonia",
                                                 "covid_pneumonia"};
    for (int i = 0; i < num_classes; ++i) {
        std::snprintf(line, sizeof(line), "%-22s %10llu %10llu %10llu\n", row_names[i],
                      static_cast<unsigned long long>(cm.counts[i][0]),
                      static_cast<unsigned long long>(cm.counts[i][1]),
                      static_cast<unsigned long long>(cm.counts[i][2]));
        out += line;
    }
    std::snprintf(line, sizeof(line), "accuracy: %s (%llu/%llu)\n",
                  detail::format_pct(accuracy(cm)).c_str(),
                  static_cast<unsigned long long>(cm.trace()),
                  static_cast<unsigned long long>(cm.total()));
    out += line;
    for (int c = 0; c < num_classes; ++c) {
        if (cm.row_sum(c) == 0) {
            std::snprintf(line, sizeof(line), "sensitivity %s: n/a (class absent)\n", row_names[c]);
        } else {
            std::snprintf(line, sizeof(line), "sensitivity %s: %s (%llu/%llu)\n", row_names[c],
                          detail::format_pct(sensitivity(cm, c)).c_str(),
                          static_cast<unsigned long long>(cm.counts[c][c]),
                          static_cast<unsigned long long>(cm.row_sum(c)));
        }
        out += line;
    }
    return out;
}

namespace detail {

inline nlohmann::ordered_json confusion_json(const confusion_matrix3& cm) {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (int i = 0; i < num_classes; ++i)
        rows.push_back({cm.counts[i][0], cm.counts[i][1], cm.counts[i][2]});
    return rows;
}

inline nlohmann::ordered_json sensitivity_json(const confusion_matrix3& cm) {
    nlohmann::ordered_json s;
    for (int c = 0; c < num_classes; ++c) {
        const char* key = to_string(static_cast<diagnosis>(c));
        if (cm.row_sum(c) == 0)
            s[key] = nullptr;
        else
            s[key] = sensitivity(cm, c);
    }
    return s;
}

}  // namespace detail

// Report for a single evaluated model.
inline nlohmann::ordered_json eval_report_json(double test_loss, const confusion_matrix3& cm) {
    nlohmann::ordered_json j;
    j["test_loss"] = test_loss;
    j["test_accuracy"] = accuracy(cm);
    j["confusion_matrix"] = detail::confusion_json(cm);
    j["sensitivity"] = detail::sensitivity_json(cm);
    j["confusion_text"] = render_confusion_text(cm);
    return j;
}

// Report for a repeated-trial run. Sensitivity appears twice because the
// aggregation is ambiguous: once as the mean of per-seed sensitivities and
// once computed from the pooled confusion matrix.
inline nlohmann::ordered_json trials_report_json(const nlohmann::ordered_json& config,
                                                 const aggregate_result& agg) {
    nlohmann::ordered_json j;
    j["config"] = config;
    nlohmann::ordered_json seeds = nlohmann::ordered_json::array();
    nlohmann::ordered_json per_seed = nlohmann::ordered_json::array();
    confusion_matrix3 pooled;
    for (const auto& s : agg.per_seed) {
        seeds.push_back(s.seed);
        nlohmann::ordered_json row;
        row["seed"] = s.seed;
        row["test_loss"] = s.test_loss;
        row["test_accuracy"] = s.test_accuracy;
        row["confusion_matrix"] = detail::confusion_json(s.confusion);
        per_seed.push_back(std::move(row));
        pooled += s.confusion;
    }
    j["seeds"] = std::move(seeds);
    j["per_seed"] = std::move(per_seed);
    j["mean_loss"] = agg.mean_loss;
    j["sd_loss"] = agg.sd_loss;
    j["mean_accuracy"] = agg.mean_accuracy;
    j["sd_accuracy"] = agg.sd_accuracy;

    nlohmann::ordered_json mean_sens;
    for (int c = 0; c < num_classes; ++c) {
        const char* key = to_string(static_cast<diagnosis>(c));
        double sum = 0.0;
        bool defined = true;
        for (const auto& s : agg.per_seed) {
            if (s.confusion.row_sum(c) == 0) {
                defined = false;
                break;
            }
            sum += sensitivity(s.confusion, c);
        }
        if (defined)
            mean_sens[key] = sum / static_cast<double>(agg.per_seed.size());
        else
            mean_sens[key] = nullptr;
    }
    j["mean_sensitivity"] = std::move(mean_sens);
    j["pooled_confusion_matrix"] = detail::confusion_json(pooled);
    j["pooled_sensitivity"] = detail::sensitivity_json(pooled);
    j["pooled_confusion_text"] = render_confusion_text(pooled);
    return j;
}

inline void write_report(const std::filesystem::path& path, const nlohmann::ordered_json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw metrics_error("cannot open " + path.string() + " for writing");
    out << j.dump(2) << "\n";
    if (!out) throw metrics_error("write failed for " + path.string());
}

}  // namespace cxr

#endif

#ifndef CXR_SPLIT_HPP
#define CXR_SPLIT_HPP

// Deterministic stratified train/validation/test splitting.
//
// The manifest ids are shuffled once from the seed, grouped by diagnosis,
// and each class is cut into train/validation/test quotas computed by
// largest-remainder apportionment, so every split's class proportions track
// the whole manifest's within about one example per class.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cxr/manifest.hpp"
#include "cxr/rng.hpp"

namespace cxr {

struct split_counts {
    std::size_t train = 0;
    std::size_t validation = 0;
    std::size_t test = 0;

    std::size_t total() const { return train + validation + test; }
};

struct dataset_split {
    std::uint64_t seed = 0;
    std::vector<std::string> train;
    std::vector<std::string> validation;
    std::vector<std::string> test;
};

class split_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

// Largest-remainder apportionment of `total` units over `weights`; result
// sums to `total` exactly and each entry is within one unit of its quota.
// Ties go to the lower index.
inline std::vector<std::size_t> apportion(std::size_t total, const std::vector<std::size_t>& weights) {
    const double wsum = static_cast<double>(std::accumulate(weights.begin(), weights.end(), std::size_t{0}));
    const std::size_t n = weights.size();
    std::vector<std::size_t> out(n, 0);
    if (total == 0 || wsum == 0) return out;

    std::vector<double> frac(n, 0.0);
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double quota = static_cast<double>(total) * static_cast<double>(weights[i]) / wsum;
        out[i] = static_cast<std::size_t>(quota);
        frac[i] = quota - static_cast<double>(out[i]);
        assigned += out[i];
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return frac[a] > frac[b]; });
    for (std::size_t k = 0; assigned < total; ++k) {
        ++out[order[k % n]];
        ++assigned;
    }
    return out;
}

// Cap each entry at `cap` and hand excess units to entries with slack,
// always to the one with the most remaining room (lowest index on ties).
inline void cap_and_redistribute(std::vector<std::size_t>& v, const std::vector<std::size_t>& cap) {
    std::size_t excess = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] > cap[i]) {
            excess += v[i] - cap[i];
            v[i] = cap[i];
        }
    }
    while (excess > 0) {
        std::size_t best = v.size();
        std::size_t best_slack = 0;
        for (std::size_t i = 0; i < v.size(); ++i) {
            const std::size_t slack = cap[i] - v[i];
            if (slack > best_slack) {
                best_slack = slack;
                best = i;
            }
        }
        if (best == v.size())
            throw split_error("stratification infeasible: class quotas exceed class sizes");
        ++v[best];
        --excess;
    }
}

}  // namespace detail

inline dataset_split split_dataset(const std::vector<manifest_record>& manifest,
                                   const split_counts& counts, std::uint64_t seed) {
    if (counts.total() != manifest.size())
        throw split_error("split counts sum to " + std::to_string(counts.total()) + " but manifest has " +
                          std::to_string(manifest.size()) + " records");

    std::vector<std::size_t> order(manifest.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    rng_stream(seed).shuffle(order.begin(), order.end());

    // Group shuffled ids by class, preserving shuffled order within a class.
    std::vector<std::vector<const std::string*>> by_class(num_classes);
    for (std::size_t idx : order)
        by_class[static_cast<int>(manifest[idx].label)].push_back(&manifest[idx].id);

    std::vector<std::size_t> class_sizes(num_classes);
    for (int c = 0; c < num_classes; ++c) class_sizes[c] = by_class[c].size();

    // Per-class train quota, then train+validation quota; the difference is
    // the validation quota and the remainder is test. Apportioning the
    // cumulative count keeps the residual test split within one unit too.
    std::vector<std::size_t> train_q = detail::apportion(counts.train, class_sizes);
    detail::cap_and_redistribute(train_q, class_sizes);
    std::vector<std::size_t> trainval_q = detail::apportion(counts.train + counts.validation, class_sizes);
    detail::cap_and_redistribute(trainval_q, class_sizes);
    // The two apportionments can disagree by one unit; keep them nested.
    for (int c = 0; c < num_classes; ++c) {
        if (trainval_q[c] < train_q[c]) {
            const std::size_t deficit = train_q[c] - trainval_q[c];
            trainval_q[c] = train_q[c];
            // Take the borrowed units back from classes with trainval slack.
            std::size_t to_remove = deficit;
            while (to_remove > 0) {
                std::size_t best = num_classes;
                std::size_t best_room = 0;
                for (int k = 0; k < num_classes; ++k) {
                    const std::size_t room = trainval_q[k] - train_q[k];
                    if (room > best_room) {
                        best_room = room;
                        best = static_cast<std::size_t>(k);
                    }
                }
                if (best == static_cast<std::size_t>(num_classes))
                    throw split_error("stratification infeasible: cannot nest quotas");
                --trainval_q[best];
                --to_remove;
            }
        }
    }

    dataset_split split;
    split.seed = seed;
    for (int c = 0; c < num_classes; ++c) {
        const auto& ids = by_class[c];
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i < train_q[c]) split.train.push_back(*ids[i]);
            else if (i < trainval_q[c]) split.validation.push_back(*ids[i]);
            else split.test.push_back(*ids[i]);
        }
    }
    return split;
}

inline void save_split(const dataset_split& split, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["seed"] = split.seed;
    j["train"] = split.train;
    j["validation"] = split.validation;
    j["test"] = split.test;
    std::ofstream out(path, std::ios::binary);
    if (!out) throw split_error("cannot write split file: " + path.string());
    out << j.dump(2) << "\n";
}

inline dataset_split load_split(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw split_error("cannot open split file: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw split_error("malformed split file " + path.string() + ": " + e.what());
    }
    dataset_split split;
    try {
        split.seed = j.at("seed").get<std::uint64_t>();
        split.train = j.at("train").get<std::vector<std::string>>();
        split.validation = j.at("validation").get<std::vector<std::string>>();
        split.test = j.at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw split_error("split file " + path.string() + " missing fields: " + e.what());
    }
    return split;
}

}  // namespace cxr

#endif

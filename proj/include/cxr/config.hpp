#ifndef CXR_CONFIG_HPP
#define CXR_CONFIG_HPP

// Experiment configuration: a line-oriented "key = value" file with
// [section] headers and '#' comments. Parsing collects every problem before
// failing, so one pass reports all invalid fields. Absent keys keep their
// defaults; the resulting config is always fully concrete.
//
// Sections and keys:
//   [data]    manifest, split, train, validation, test, split_seed
//   [model]   arch (desk|vgg16), input_size, fc_units, dropout, freeze_depth
//   [train]   learning_rate, batch_size, max_epochs, patience, seed, workers
//   [augment] conventional, mixup, mixup_alpha, ricap, ricap_beta
//   [search]  trials, dropout_lo, dropout_hi, fc_lo, fc_hi, fc_step,
//             input_sizes, lr_lo, lr_hi, presets, freeze_depths, search_seed
//   [out]     dir

#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cxr/augment.hpp"
#include "cxr/hypersearch.hpp"
#include "cxr/net.hpp"
#include "cxr/split.hpp"

namespace cxr {

class config_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct experiment_config {
    std::filesystem::path manifest;
    std::optional<std::filesystem::path> split_file;
    split_counts counts{};
    bool counts_set = false;
    std::uint64_t split_seed = 1;

    std::string arch = "desk";
    hyper_params hp;

    std::uint64_t seed = 1;
    int workers = 1;
    std::filesystem::path out_dir = "runs";

    search_space space = search_space::desk();
    int search_trials = 20;
    std::uint64_t search_seed = 1;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_commas(const std::string& s) {
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        std::size_t comma = s.find(',', pos);
        if (comma == std::string::npos) comma = s.size();
        out.push_back(trim(s.substr(pos, comma - pos)));
        pos = comma + 1;
    }
    return out;
}

// Raw parse result: section.key -> (value, line number), plus parse errors.
struct config_text {
    std::map<std::string, std::pair<std::string, int>> entries;
    std::vector<std::string> errors;
};

inline config_text read_config_text(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw config_error("cannot open config file " + path.string());
    config_text out;
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (line.front() == '[') {
            if (line.back() != ']' || line.size() < 3) {
                out.errors.push_back(where + ": malformed section header '" + line + "'");
                continue;
            }
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos) {
            out.errors.push_back(where + ": expected 'key = value', got '" + line + "'");
            continue;
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty()) {
            out.errors.push_back(where + ": empty key");
            continue;
        }
        if (section.empty()) {
            out.errors.push_back(where + ": key '" + key + "' before any [section]");
            continue;
        }
        const std::string full = section + "." + key;
        if (out.entries.count(full)) {
            out.errors.push_back(where + ": duplicate key '" + full + "'");
            continue;
        }
        out.entries[full] = {value, lineno};
    }
    return out;
}

// Typed binding helpers. Each consumes its key if present and records an
// error (never throws) on a bad value, so binding continues past failures.
struct config_binder {
    config_text& text;
    const std::string file;
    std::vector<std::string> errors;

    std::optional<std::string> take(const std::string& key, int& lineno) {
        auto it = text.entries.find(key);
        if (it == text.entries.end()) return std::nullopt;
        std::string v = it->second.first;
        lineno = it->second.second;
        text.entries.erase(it);
        return v;
    }

    void fail(const std::string& key, int lineno, const std::string& msg) {
        errors.push_back(file + ":" + std::to_string(lineno) + ": " + key + " " + msg);
    }

    void bind_string(const std::string& key, std::string& out) {
        int ln = 0;
        if (auto v = take(key, ln)) out = *v;
    }

    void bind_path(const std::string& key, std::filesystem::path& out) {
        int ln = 0;
        if (auto v = take(key, ln)) out = *v;
    }

    void bind_bool(const std::string& key, bool& out) {
        int ln = 0;
        if (auto v = take(key, ln)) {
            if (*v == "true")
                out = true;
            else if (*v == "false")
                out = false;
            else
                fail(key, ln, "must be 'true' or 'false', got '" + *v + "'");
        }
    }

    bool parse_i64(const std::string& s, std::int64_t& out) {
        const char* b = s.data();
        const char* e = s.data() + s.size();
        auto [p, ec] = std::from_chars(b, e, out);
        return ec == std::errc() && p == e;
    }

    void bind_int(const std::string& key, int& out, std::int64_t lo, std::int64_t hi) {
        int ln = 0;
        if (auto v = take(key, ln)) {
            std::int64_t x = 0;
            if (!parse_i64(*v, x))
                fail(key, ln, "must be an integer, got '" + *v + "'");
            else if (x < lo || x > hi)
                fail(key, ln, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) +
                                  "], got " + *v);
            else
                out = static_cast<int>(x);
        }
    }

    void bind_size(const std::string& key, std::size_t& out) {
        int ln = 0;
        if (auto v = take(key, ln)) {
            std::int64_t x = 0;
            if (!parse_i64(*v, x) || x < 0)
                fail(key, ln, "must be a non-negative integer, got '" + *v + "'");
            else
                out = static_cast<std::size_t>(x);
        }
    }

    void bind_u64(const std::string& key, std::uint64_t& out) {
        int ln = 0;
        if (auto v = take(key, ln)) {
            std::uint64_t x = 0;
            const char* b = v->data();
            const char* e = v->data() + v->size();
            auto [p, ec] = std::from_chars(b, e, x);
            if (ec != std::errc() || p != e)
                fail(key, ln, "must be a non-negative integer, got '" + *v + "'");
            else
                out = x;
        }
    }

    void bind_double(const std::string& key, double& out, double lo, double hi,
                     bool lo_open = false) {
        int ln = 0;
        if (auto v = take(key, ln)) {
            char* endp = nullptr;
            const double x = std::strtod(v->c_str(), &endp);
            if (endp != v->c_str() + v->size() || v->empty()) {
                fail(key, ln, "must be a number, got '" + *v + "'");
            } else if (x < lo || x > hi || (lo_open && x <= lo)) {
                char buf[96];
                std::snprintf(buf, sizeof(buf), "must be in %s%g, %g], got %s", lo_open ? "(" : "[",
                              lo, hi, v->c_str());
                fail(key, ln, buf);
            } else {
                out = x;
            }
        }
    }

    void bind_int_list(const std::string& key, std::vector<int>& out, std::int64_t lo) {
        int ln = 0;
        if (auto v = take(key, ln)) {
            std::vector<int> parsed;
            for (const std::string& item : split_commas(*v)) {
                std::int64_t x = 0;
                if (!parse_i64(item, x) || x < lo) {
                    fail(key, ln, "has invalid entry '" + item + "'");
                    return;
                }
                parsed.push_back(static_cast<int>(x));
            }
            if (parsed.empty()) {
                fail(key, ln, "must list at least one value");
                return;
            }
            out = std::move(parsed);
        }
    }
};

}  // namespace detail

// Parses and validates a config file. Every problem in the file is reported
// in one exception, one per line.
inline experiment_config load_experiment_config(const std::filesystem::path& path) {
    detail::config_text text = detail::read_config_text(path);
    detail::config_binder b{text, path.string(), std::move(text.errors)};

    experiment_config cfg;
    b.bind_path("data.manifest", cfg.manifest);
    {
        std::filesystem::path split;
        b.bind_path("data.split", split);
        if (!split.empty()) cfg.split_file = split;
    }
    {
        const bool had = text.entries.count("data.train") || text.entries.count("data.validation") ||
                         text.entries.count("data.test");
        b.bind_size("data.train", cfg.counts.train);
        b.bind_size("data.validation", cfg.counts.validation);
        b.bind_size("data.test", cfg.counts.test);
        cfg.counts_set = had;
    }
    b.bind_u64("data.split_seed", cfg.split_seed);

    b.bind_string("model.arch", cfg.arch);
    if (cfg.arch != "desk" && cfg.arch != "vgg16")
        b.errors.push_back(path.string() + ": model.arch must be 'desk' or 'vgg16', got '" +
                           cfg.arch + "'");
    b.bind_int("model.input_size", cfg.hp.input_size, 8, 4096);
    b.bind_int("model.fc_units", cfg.hp.fc_units, 1, 65536);
    b.bind_double("model.dropout", cfg.hp.dropout_p, 0.0, 0.999999);
    b.bind_int("model.freeze_depth", cfg.hp.freeze_depth, 0, 64);

    b.bind_double("train.learning_rate", cfg.hp.learning_rate, 0.0, 1.0, /*lo_open=*/true);
    b.bind_int("train.batch_size", cfg.hp.batch_size, 1, 65536);
    b.bind_int("train.max_epochs", cfg.hp.max_epochs, 1, 1000000);
    b.bind_int("train.patience", cfg.hp.patience, 0, 1000000);
    b.bind_u64("train.seed", cfg.seed);
    b.bind_int("train.workers", cfg.workers, 1, 4096);

    b.bind_bool("augment.conventional", cfg.hp.policy.conventional_enabled);
    b.bind_bool("augment.mixup", cfg.hp.policy.mixup_enabled);
    b.bind_double("augment.mixup_alpha", cfg.hp.policy.mixup_alpha, 0.0, 1000.0, /*lo_open=*/true);
    b.bind_bool("augment.ricap", cfg.hp.policy.ricap_enabled);
    b.bind_double("augment.ricap_beta", cfg.hp.policy.ricap_beta, 0.0, 1000.0, /*lo_open=*/true);

    b.bind_int("search.trials", cfg.search_trials, 1, 1000000);
    b.bind_double("search.dropout_lo", cfg.space.dropout_lo, 0.0, 0.999999);
    b.bind_double("search.dropout_hi", cfg.space.dropout_hi, 0.0, 0.999999);
    b.bind_int("search.fc_lo", cfg.space.fc_lo, 1, 65536);
    b.bind_int("search.fc_hi", cfg.space.fc_hi, 1, 65536);
    b.bind_int("search.fc_step", cfg.space.fc_step, 1, 65536);
    b.bind_int_list("search.input_sizes", cfg.space.input_sizes, 8);
    b.bind_double("search.lr_lo", cfg.space.lr_lo, 0.0, 1.0, /*lo_open=*/true);
    b.bind_double("search.lr_hi", cfg.space.lr_hi, 0.0, 1.0, /*lo_open=*/true);
    {
        int ln = 0;
        if (auto v = b.take("search.presets", ln)) {
            std::vector<augmentation_preset> presets;
            bool bad = false;
            for (const std::string& item : detail::split_commas(*v)) {
                try {
                    presets.push_back(parse_augmentation_preset(item));
                } catch (const std::exception& e) {
                    b.fail("search.presets", ln, std::string("entry invalid: ") + e.what());
                    bad = true;
                    break;
                }
            }
            if (!bad && presets.empty())
                b.fail("search.presets", ln, "must list at least one preset");
            else if (!bad)
                cfg.space.presets = std::move(presets);
        }
    }
    b.bind_int_list("search.freeze_depths", cfg.space.freeze_depths, 0);
    b.bind_u64("search.search_seed", cfg.search_seed);

    b.bind_path("out.dir", cfg.out_dir);

    for (const auto& [key, value] : text.entries)
        b.errors.push_back(path.string() + ":" + std::to_string(value.second) + ": unknown key '" +
                           key + "'");

    if (cfg.counts_set && cfg.split_file)
        b.errors.push_back(path.string() +
                           ": give either data.split or data.train/validation/test, not both");
    if (cfg.hp.policy.mixup_enabled && !(cfg.hp.policy.mixup_alpha > 0.0))
        b.errors.push_back(path.string() + ": augment.mixup_alpha must be positive when mixup is on");
    if (cfg.hp.policy.ricap_enabled && !(cfg.hp.policy.ricap_beta > 0.0))
        b.errors.push_back(path.string() + ": augment.ricap_beta must be positive when ricap is on");

    if (!b.errors.empty()) {
        std::string msg = "invalid config " + path.string() + ":";
        for (const auto& e : b.errors) msg += "\n  " + e;
        throw config_error(msg);
    }
    return cfg;
}

// Stable 64-bit FNV-1a digest of the training-relevant fields, used to name
// run directories. Doubles are rendered with enough digits to round-trip.
inline std::uint64_t config_hash(const experiment_config& cfg) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "arch=%s;input=%d;dropout=%.17g;fc=%d;lr=%.17g;batch=%d;epochs=%d;patience=%d;"
                  "freeze=%d;conv=%d;mixup=%d;alpha=%.17g;ricap=%d;beta=%.17g",
                  cfg.arch.c_str(), cfg.hp.input_size, cfg.hp.dropout_p, cfg.hp.fc_units,
                  cfg.hp.learning_rate, cfg.hp.batch_size, cfg.hp.max_epochs, cfg.hp.patience,
                  cfg.hp.freeze_depth, cfg.hp.policy.conventional_enabled ? 1 : 0,
                  cfg.hp.policy.mixup_enabled ? 1 : 0, cfg.hp.policy.mixup_alpha,
                  cfg.hp.policy.ricap_enabled ? 1 : 0, cfg.hp.policy.ricap_beta);
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (const char* p = buf; *p; ++p) {
        h ^= static_cast<unsigned char>(*p);
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string config_hash_hex(const experiment_config& cfg) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(config_hash(cfg)));
    return buf;
}

inline architecture architecture_from_name(const std::string& name) {
    if (name == "desk") return architecture::desk();
    if (name == "vgg16") return architecture::vgg16();
    throw config_error("unknown architecture '" + name + "'");
}

}  // namespace cxr

#endif

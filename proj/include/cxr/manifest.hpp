#ifndef CXR_MANIFEST_HPP
#define CXR_MANIFEST_HPP

// Dataset manifest: one CSV row per image with its diagnosis label and the
// optional patient attributes. Header is exactly
//   id,filepath,label,view,age,sex
// Empty view/age/sex cells mean the attribute is not available.

#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace cxr {

constexpr int num_classes = 3;

enum class diagnosis { healthy = 0, non_covid_pneumonia = 1, covid_pneumonia = 2 };
enum class cxr_view { pa, ap, unknown };
enum class patient_sex { male, female };

inline const char* to_string(diagnosis d) {
    switch (d) {
        case diagnosis::healthy: return "healthy";
        case diagnosis::non_covid_pneumonia: return "non_covid_pneumonia";
        case diagnosis::covid_pneumonia: return "covid_pneumonia";
    }
    return "?";
}

inline const char* to_string(cxr_view v) {
    switch (v) {
        case cxr_view::pa: return "PA";
        case cxr_view::ap: return "AP";
        case cxr_view::unknown: return "";
    }
    return "";
}

inline const char* to_string(patient_sex s) {
    return s == patient_sex::male ? "male" : "female";
}

struct manifest_record {
    std::string id;
    std::string filepath;  // relative to the manifest's directory
    diagnosis label = diagnosis::healthy;
    cxr_view view = cxr_view::unknown;
    std::optional<int> age;
    std::optional<patient_sex> sex;

    bool operator==(const manifest_record&) const = default;
};

class manifest_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

inline std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

[[noreturn]] inline void manifest_fail(const std::filesystem::path& path, std::size_t line_no,
                                       const std::string& what) {
    throw manifest_error(path.string() + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace detail

inline const char* manifest_header() { return "id,filepath,label,view,age,sex"; }

inline std::vector<manifest_record> load_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw manifest_error("cannot open manifest: " + path.string());

    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) detail::manifest_fail(path, 1, "empty file, expected header");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != manifest_header())
        detail::manifest_fail(path, line_no, "bad header, expected '" + std::string(manifest_header()) + "'");

    std::vector<manifest_record> records;
    std::unordered_set<std::string> seen_ids;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;

        const auto f = detail::split_fields(line);
        if (f.size() != 6)
            detail::manifest_fail(path, line_no,
                                  "expected 6 columns, got " + std::to_string(f.size()));

        manifest_record rec;
        rec.id = f[0];
        rec.filepath = f[1];
        if (rec.id.empty()) detail::manifest_fail(path, line_no, "empty id");
        if (rec.filepath.empty()) detail::manifest_fail(path, line_no, "empty filepath");
        if (!seen_ids.insert(rec.id).second)
            detail::manifest_fail(path, line_no, "duplicate id '" + rec.id + "'");

        if (f[2] == "healthy") rec.label = diagnosis::healthy;
        else if (f[2] == "non_covid_pneumonia") rec.label = diagnosis::non_covid_pneumonia;
        else if (f[2] == "covid_pneumonia") rec.label = diagnosis::covid_pneumonia;
        else detail::manifest_fail(path, line_no, "unknown label '" + f[2] + "'");

        if (f[3].empty()) rec.view = cxr_view::unknown;
        else if (f[3] == "PA") rec.view = cxr_view::pa;
        else if (f[3] == "AP") rec.view = cxr_view::ap;
        else detail::manifest_fail(path, line_no, "unknown view '" + f[3] + "'");

        if (!f[4].empty()) {
            int age = 0;
            const auto [p, ec] = std::from_chars(f[4].data(), f[4].data() + f[4].size(), age);
            if (ec != std::errc{} || p != f[4].data() + f[4].size() || age < 0)
                detail::manifest_fail(path, line_no, "bad age '" + f[4] + "'");
            rec.age = age;
        }

        if (!f[5].empty()) {
            if (f[5] == "male") rec.sex = patient_sex::male;
            else if (f[5] == "female") rec.sex = patient_sex::female;
            else detail::manifest_fail(path, line_no, "unknown sex '" + f[5] + "'");
        }

        records.push_back(std::move(rec));
    }
    return records;
}

inline void save_manifest(const std::vector<manifest_record>& records,
                          const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw manifest_error("cannot write manifest: " + path.string());
    out << manifest_header() << "\n";
    for (const auto& r : records) {
        out << r.id << ',' << r.filepath << ',' << to_string(r.label) << ',' << to_string(r.view)
            << ',';
        if (r.age) out << *r.age;
        out << ',';
        if (r.sex) out << to_string(*r.sex);
        out << "\n";
    }
    if (!out) throw manifest_error("failed writing manifest: " + path.string());
}

// Per-class record counts in class order (healthy, non-COVID pneumonia, COVID).
inline std::array<std::size_t, num_classes> class_counts(const std::vector<manifest_record>& records) {
    std::array<std::size_t, num_classes> counts{};
    for (const auto& r : records) ++counts[static_cast<int>(r.label)];
    return counts;
}

}  // namespace cxr

#endif

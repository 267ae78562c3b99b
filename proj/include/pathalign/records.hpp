#pragma once

#include <optional>
#include <string>
#include <vector>

namespace pathalign {

// One disease description gathered from an educational source: free-text
// attributes of four kinds plus the tissue it belongs to.
struct DiseaseRecord {
    std::string name;
    std::vector<std::string> synonyms;
    std::vector<std::string> definitions;
    std::vector<std::string> histology;
    std::vector<std::string> cytology;
    std::string tissue;
    std::optional<std::string> cui;
    std::string source;

    bool operator==(const DiseaseRecord&) const = default;
};

// Backbone node of the tumor classification tree.
struct OncoTreeRecord {
    std::string name;
    std::string cui;
    std::string tissue;
    std::optional<std::string> parent;
    std::size_t level = 0;

    bool operator==(const OncoTreeRecord&) const = default;
};

// One training/eval pair: precomputed image features plus a caption.
struct PairRecord {
    std::string id;
    std::vector<double> image_features;
    std::string caption;
    std::optional<std::string> disease_label;

    bool operator==(const PairRecord&) const = default;
};

struct PatchRecord {
    std::string id;
    std::vector<double> features;
    std::string label;

    bool operator==(const PatchRecord&) const = default;
};

// A slide as a bag of patch feature vectors.
struct WsiRecord {
    std::string slide_id;
    std::string label;
    std::vector<std::vector<double>> patch_features;

    bool operator==(const WsiRecord&) const = default;
};

inline std::string trim_copy(const std::string& s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return "";
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

}  // namespace pathalign

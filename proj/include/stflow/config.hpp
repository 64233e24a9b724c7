#pragma once

#include "stflow/types.hpp"

#include <map>
#include <optional>
#include <string>

namespace stflow {

/// Flat key-value experiment configuration. Section headers `[name]` prefix
/// keys as "name.key"; CLI flags override file values.
struct ExperimentConfig {
    std::string experiment;
    std::map<std::string, std::string> kv;

    bool has(const std::string& key) const { return kv.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { kv[key] = value; }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    long get_long(const std::string& key, long fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    Vec get_vec(const std::string& key, const Vec& fallback) const; // comma separated

    /// Cross-field checks (e.g. 1/p + 1/q = 1 when both are present).
    void validate() const;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_string(const std::string& text);
};

} // namespace stflow

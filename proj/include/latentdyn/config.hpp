#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "errors.hpp"

namespace latentdyn::config {

using nlohmann::json;

namespace detail {

inline const char* kind_name(const json& j) {
    if (j.is_boolean()) return "a boolean";
    if (j.is_number_integer()) return "an integer";
    if (j.is_number()) return "a number";
    if (j.is_string()) return "a string";
    if (j.is_array()) return "an array";
    if (j.is_object()) return "an object";
    return "null";
}

inline bool compatible(const json& def, const json& val) {
    if (def.is_null()) return true;
    if (def.is_number_integer()) return val.is_number_integer();
    if (def.is_number()) return val.is_number();
    return def.type() == val.type();
}

} // namespace detail

/// Layers `user` over `defaults`. Keys must already exist in `defaults` and
/// keep their JSON kind; a null default accepts any value. Nested objects merge.
inline json overlay(const json& defaults, const json& user, const std::string& prefix = "") {
    if (!user.is_object()) throw ConfigError(prefix.empty() ? "config" : prefix, "expected a JSON object");
    json out = defaults;
    for (const auto& [key, val] : user.items()) {
        const std::string field = prefix.empty() ? key : prefix + "." + key;
        if (!defaults.contains(key)) throw ConfigError(field, "unknown key");
        const json& def = defaults.at(key);
        if (!detail::compatible(def, val))
            throw ConfigError(field, std::string("expected ") + detail::kind_name(def) + ", got " + detail::kind_name(val));
        out[key] = def.is_object() ? overlay(def, val, field) : val;
    }
    return out;
}

/// Parses a typed config from merged JSON, naming the field on type failures.
template <class T>
T parse(const json& j, const std::string& section) {
    try {
        return j.get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(section, e.what());
    }
}

} // namespace latentdyn::config

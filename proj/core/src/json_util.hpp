#pragma once

// Private JSON helpers shared by the core sources.

#include <initializer_list>
#include <string>
#include <type_traits>

#include <json.hpp>

#include "w2s/error.hpp"
#include "w2s/model.hpp"

namespace w2s::detail {

using nlohmann::json;

template <class T>
void read_field(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
    if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(where + "." + key + ": must be non-negative");
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected true or false");
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
  }
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(where + "." + key + ": wrong type");
  }
}

inline void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(where + "." + key + ": unknown key");
  }
}

json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const json& j, const std::string& where);

}  // namespace w2s::detail

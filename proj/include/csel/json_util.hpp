#pragma once

// Strict JSON config helpers: unknown keys and type mismatches are
// ConfigErrors naming the offending key.

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "csel/errors.hpp"

namespace csel::json_util {

using nlohmann::json;

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> known,
                                std::string_view what) {
  if (!j.is_object()) throw ConfigError(std::string(what) + ": expected a JSON object");
  for (const auto& item : j.items()) {
    if (std::find(known.begin(), known.end(), item.key()) == known.end())
      throw ConfigError(std::string(what) + ": unknown key \"" + item.key() + "\"");
  }
}

template <class T>
void read_optional(const json& j, const char* key, T& out, std::string_view what) {
  auto it = j.find(key);
  if (it == j.end()) return;
  try {
    out = it->template get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": bad value for \"" + key + "\": " + e.what());
  }
}

}  // namespace csel::json_util

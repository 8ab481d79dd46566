#pragma once

#include <algorithm>
#include <initializer_list>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lacune/error.hpp"

namespace lacune {

using nlohmann::json;

inline void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed, std::string_view what) {
  require(j.is_object(), ErrorCode::config, std::string(what) + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    const bool known = std::find(allowed.begin(), allowed.end(), key) != allowed.end();
    require(known, ErrorCode::config, "unknown key '" + key + "' in " + std::string(what));
  }
}

/// Assigns j[key] to out when present; type errors become config errors.
template <class T>
void read_optional(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::config, std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace lacune

#pragma once

#include <initializer_list>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "deffiller/error.hpp"

namespace deffiller::json_util {

/// Rejects keys outside `allowed` so typos in config documents surface.
inline void check_keys(const nlohmann::json& document, std::initializer_list<std::string_view> allowed,
                       std::string_view where) {
  require(document.is_object(), "{} must be a JSON object", where);
  for (const auto& item : document.items()) {
    bool known = false;
    for (auto key : allowed) known = known || item.key() == key;
    require(known, "unknown key '{}' in {}", item.key(), where);
  }
}

template <typename T>
void read(const nlohmann::json& document, const char* key, T& out) {
  if (document.contains(key)) out = document.at(key).get<T>();
}

}  // namespace deffiller::json_util

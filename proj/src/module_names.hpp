#pragma once

#include <string>

namespace ctlgan::detail {

// libtorch rejects '.' in registered names; dotted public names are stored with "__" instead.
inline std::string registered_name(std::string name) {
  for (size_t pos = 0; (pos = name.find('.', pos)) != std::string::npos; pos += 2) name.replace(pos, 1, "__");
  return name;
}

inline std::string public_name(std::string name) {
  for (size_t pos = 0; (pos = name.find("__", pos)) != std::string::npos; ++pos) name.replace(pos, 2, ".");
  return name;
}

}  // namespace ctlgan::detail

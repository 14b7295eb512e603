#pragma once

#include <compare>
#include <string>
#include <vector>

#include "cvfl/parameter_vector.hpp"

namespace cvfl {

struct ClientId {
  int value = 0;

  friend auto operator<=>(const ClientId&, const ClientId&) = default;
};

inline std::string to_string(ClientId id) { return std::to_string(id.value); }

// One selected client's submitted delta for the round.
struct UpdateRecord {
  ClientId owner;
  ParameterVector delta;
};

// Space-separated list in brackets, e.g. "[3 17 42]".
template <typename T, typename Fn>
std::string bracketed(const std::vector<T>& items, Fn&& fmt) {
  std::string out = "[";
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ' ';
    out += fmt(items[i]);
  }
  out += ']';
  return out;
}

}  // namespace cvfl

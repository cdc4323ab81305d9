#pragma once

#include <array>
#include <optional>
#include <string_view>

namespace gtb {

enum class Split { Train, Val, Test };

inline constexpr std::array<Split, 3> kAllSplits{Split::Train, Split::Val, Split::Test};

constexpr std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline std::optional<Split> parse_split(std::string_view s) {
  for (Split sp : kAllSplits)
    if (split_name(sp) == s) return sp;
  if (s == "validation") return Split::Val;
  return std::nullopt;
}

}  // namespace gtb

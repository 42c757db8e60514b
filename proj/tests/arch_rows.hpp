#pragma once

// Layer strings of four published network rows, with hand-counted layer totals.
namespace arch_rows {

inline constexpr const char* kDvs128 =
    "128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-MP2-0.5DP-512FC-LIF-0.5DP-100FC-LIF-Voting";
inline constexpr const char* kCifar10Dvs =
    "64C3-LIF-128C3-LIF-AP2-256C3-LIF-256C3-LIF-AP2-512C3-LIF-512C3-LIF-AP2-512C3-LIF-512C3-LIF-AP2-10FC-LIF";
inline constexpr const char* kNCaltech =
    "64C3-LIF-MP2-128C3-LIF-MP2-256C3-LIF-MP2-256C3-LIF-MP2-512C3-LIF-0.8DP-1024FC-LIF-0.5DP-101FC-LIF";
inline constexpr const char* kFashion = "128C3-LIF-AP2-128C3-LIF-AP2-0.5DP-512FC-LIF-0.5DP-10FC-LIF";

struct Row {
  const char* spec;
  std::size_t layers;
};
inline constexpr Row kRows[] = {{kDvs128, 22}, {kCifar10Dvs, 22}, {kNCaltech, 20}, {kFashion, 12}};

}  // namespace arch_rows

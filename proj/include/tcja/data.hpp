#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "tcja/tensor.hpp"

namespace tcja {

struct Event {
  std::uint32_t t = 0;  // microseconds
  std::uint16_t x = 0, y = 0;
  std::uint8_t p = 0;  // 0 = OFF, 1 = ON
  bool operator==(const Event&) const = default;
};

struct EventStream {
  std::size_t width = 0, height = 0;
  std::vector<Event> events;
  bool operator==(const EventStream&) const = default;
};

enum class EventFormat { kCsv, kBinary };

// ".csv" -> kCsv, anything else -> kBinary.
EventFormat format_for(const std::filesystem::path& path);

// CSV: "t,x,y,p" per line, '#' comment lines; an optional "# width=W height=H"
// header fixes the resolution, otherwise it is max coordinate + 1.
EventStream parse_events_csv(const std::string& text);
std::string format_events_csv(const EventStream& stream);

// Binary: "TCJAEVT0", u16 width, u16 height, u32 count, then count records of
// u32 t, u16 x, u16 y, u8 p (little-endian, packed).
EventStream parse_events_binary(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> format_events_binary(const EventStream& stream);

// Throws DataError naming the path, line/record and byte offset on failure.
EventStream read_events(const std::filesystem::path& path, EventFormat format);
EventStream read_events(const std::filesystem::path& path);
void write_events(const std::filesystem::path& path, const EventStream& stream, EventFormat format);

// [begin, end) event index ranges of the T slices: floor(N/T) events each,
// the last slice takes the remainder. Throws DataError when N < T.
std::vector<std::pair<std::size_t, std::size_t>> slice_bounds(std::size_t n_events, std::size_t t_steps);

struct FrameSample {
  Tensor<double> frames;       // T x C x H x W
  std::vector<double> target;  // soft label, sums to 1
  std::size_t label = 0;       // argmax of target for hard-labelled data
};

// T x 2 x H x W event counts, channel = polarity.
Tensor<double> integrate_frames(const EventStream& stream, std::size_t t_steps);

// C x H x W image repeated T times.
Tensor<double> replicate_static(const Tensor<double>& image, std::size_t t_steps);

std::vector<double> one_hot(std::size_t label, std::size_t classes);

// Frame-level geometric transforms on T x C x H x W. All fill vacated pixels
// with zeros; rotation and shear move counts forward to the nearest target
// pixel and add collisions, so total mass only drops through clipping.
Tensor<double> hflip(const Tensor<double>& frames);
Tensor<double> roll(const Tensor<double>& frames, long dx, long dy);
Tensor<double> rotate(const Tensor<double>& frames, double degrees);
Tensor<double> shear(const Tensor<double>& frames, double degrees);
Tensor<double> cutout(const Tensor<double>& frames, long cx, long cy, long side);
// lambda * a + (1 - lambda) * b on frames and targets.
FrameSample mixup(const FrameSample& a, const FrameSample& b, double lambda);

struct AugmentPolicy {
  double flip_probability = 0.5;
  bool mixup = true;
  double mixup_alpha = 0.5;  // Beta(alpha, alpha)
  long roll_max = 5;
  double rotate_max = 15.0;
  long cutout_max = 8;
  double shear_max = 8.0;
};

// Flip with probability p, mix with `partner`, then one randomly chosen
// geometric transform.
FrameSample augment(const FrameSample& sample, const FrameSample& partner, std::mt19937_64& rng,
                    const AugmentPolicy& policy);

// Stratified 9:1 split of sample indices, deterministic under seed. Each class
// keeps round(n/10) samples for test. Throws DataError when a class has fewer
// than 10 samples.
struct Split {
  std::vector<std::size_t> train, test;
};
Split split_train_test(const std::vector<std::size_t>& labels, std::uint64_t seed);

struct SyntheticConfig {
  std::size_t classes = 4;  // 2, 4 or 8 directions
  std::size_t height = 16, width = 16;
  std::size_t t_steps = 8;
  std::size_t samples = 100;
  std::uint64_t seed = 0;
  double noise = 0.05;  // noise events per bar event
};

struct SyntheticDataset {
  std::vector<EventStream> streams;
  std::vector<std::size_t> labels;
};

// Bar sweeping across the sensor in direction 2*pi*label/classes. ON events
// on the leading edge, OFF events on the trailing edge, plus uniform noise.
// Each sample draws from its own seed so generation order does not matter.
SyntheticDataset gen_synthetic(const SyntheticConfig& cfg);

// Dataset directory: one event file per sample plus a manifest of
// "path,label" lines (paths relative to the manifest).
struct ManifestEntry {
  std::filesystem::path path;
  std::size_t label = 0;
};
void write_dataset(const std::filesystem::path& dir, const SyntheticDataset& data, EventFormat format);
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest);
std::vector<FrameSample> load_dataset(const std::filesystem::path& manifest, std::size_t t_steps,
                                      std::size_t classes);
std::vector<FrameSample> frames_from(const SyntheticDataset& data, std::size_t t_steps, std::size_t classes);

// T x B x C x H x W batch of the given samples.
template <typename Real>
Tensor<Real> stack_frames(const std::vector<FrameSample>& samples, const std::vector<std::size_t>& indices);

}  // namespace tcja

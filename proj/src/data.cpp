#include "tcja/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>
#include <regex>
#include <sstream>

#include "tcja/errors.hpp"

namespace tcja {

namespace fs = std::filesystem;

namespace {

constexpr char kEventMagic[8] = {'T', 'C', 'J', 'A', 'E', 'V', 'T', '0'};
constexpr std::size_t kHeaderBytes = 16;
constexpr std::size_t kRecordBytes = 9;

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

template <typename T>
T get_le(const std::uint8_t* p) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
  return v;
}

template <typename T>
bool parse_field(std::string_view s, T& out) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  if (s.empty()) return false;
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

void check_events(const EventStream& s, const std::string& unit) {
  for (std::size_t i = 0; i < s.events.size(); ++i) {
    const Event& e = s.events[i];
    if (e.x >= s.width || e.y >= s.height) {
      throw DataError(unit + " " + std::to_string(i) + ": coordinate (" + std::to_string(e.x) + ", " +
                      std::to_string(e.y) + ") outside " + std::to_string(s.width) + "x" + std::to_string(s.height));
    }
    if (e.p > 1) throw DataError(unit + " " + std::to_string(i) + ": polarity must be 0 or 1");
    if (i > 0 && e.t < s.events[i - 1].t) throw DataError(unit + " " + std::to_string(i) + ": timestamp decreases");
  }
}

std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

EventFormat format_for(const fs::path& path) {
  return path.extension() == ".csv" ? EventFormat::kCsv : EventFormat::kBinary;
}

EventStream parse_events_csv(const std::string& text) {
  static const std::regex header(R"(^#\s*width\s*=\s*(\d+)\s+height\s*=\s*(\d+)\s*$)");
  EventStream s;
  bool sized = false;
  std::size_t offset = 0, line_no = 0;
  while (offset < text.size()) {
    std::size_t end = text.find('\n', offset);
    if (end == std::string::npos) end = text.size();
    std::string line = text.substr(offset, end - offset);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    auto fail = [&](const std::string& why) {
      return DataError("line " + std::to_string(line_no) + " (byte offset " + std::to_string(offset) + "): " + why);
    };
    std::smatch m;
    if (line.empty()) {
    } else if (line[0] == '#') {
      if (std::regex_match(line, m, header)) {
        s.width = std::stoul(m[1]);
        s.height = std::stoul(m[2]);
        sized = true;
      }
    } else {
      std::string_view v(line);
      std::string_view fields[4];
      std::size_t n = 0;
      while (n < 4) {
        const std::size_t comma = v.find(',');
        fields[n++] = v.substr(0, comma);
        if (comma == std::string_view::npos) {
          v = {};
          break;
        }
        v.remove_prefix(comma + 1);
      }
      Event e;
      unsigned p = 0;
      if (n != 4 || !v.empty() || !parse_field(fields[0], e.t) || !parse_field(fields[1], e.x) ||
          !parse_field(fields[2], e.y) || !parse_field(fields[3], p) || p > 1) {
        throw fail("expected 't,x,y,p' with p in {0,1}, got '" + line + "'");
      }
      e.p = static_cast<std::uint8_t>(p);
      s.events.push_back(e);
    }
    offset = end + 1;
  }
  if (!sized) {
    for (const Event& e : s.events) {
      s.width = std::max<std::size_t>(s.width, e.x + 1u);
      s.height = std::max<std::size_t>(s.height, e.y + 1u);
    }
  }
  check_events(s, "event");
  return s;
}

std::string format_events_csv(const EventStream& s) {
  std::ostringstream out;
  out << "# width=" << s.width << " height=" << s.height << "\n";
  for (const Event& e : s.events) out << e.t << ',' << e.x << ',' << e.y << ',' << unsigned(e.p) << '\n';
  return out.str();
}

EventStream parse_events_binary(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < kHeaderBytes) {
    throw DataError("header truncated: " + std::to_string(bytes.size()) + " of 16 bytes at byte offset 0");
  }
  if (!std::equal(std::begin(kEventMagic), std::end(kEventMagic), bytes.begin())) {
    throw DataError("bad magic at byte offset 0 (expected TCJAEVT0)");
  }
  EventStream s;
  s.width = get_le<std::uint16_t>(&bytes[8]);
  s.height = get_le<std::uint16_t>(&bytes[10]);
  const std::size_t count = get_le<std::uint32_t>(&bytes[12]);
  const std::size_t need = kHeaderBytes + count * kRecordBytes;
  if (bytes.size() < need) {
    const std::size_t rec = (bytes.size() - kHeaderBytes) / kRecordBytes;
    throw DataError("record " + std::to_string(rec) + " at byte offset " +
                    std::to_string(kHeaderBytes + rec * kRecordBytes) + " truncated (header promises " +
                    std::to_string(count) + " records)");
  }
  if (bytes.size() > need) throw DataError("trailing bytes after last record at byte offset " + std::to_string(need));
  s.events.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint8_t* r = &bytes[kHeaderBytes + i * kRecordBytes];
    s.events[i] = Event{get_le<std::uint32_t>(r), get_le<std::uint16_t>(r + 4), get_le<std::uint16_t>(r + 6), r[8]};
  }
  check_events(s, "record");
  return s;
}

std::vector<std::uint8_t> format_events_binary(const EventStream& s) {
  if (s.width > 0xFFFF || s.height > 0xFFFF) throw DataError("resolution does not fit 16 bits");
  std::vector<std::uint8_t> out(std::begin(kEventMagic), std::end(kEventMagic));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.width));
  put_le<std::uint16_t>(out, static_cast<std::uint16_t>(s.height));
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.events.size()));
  out.reserve(kHeaderBytes + s.events.size() * kRecordBytes);
  for (const Event& e : s.events) {
    put_le(out, e.t);
    put_le(out, e.x);
    put_le(out, e.y);
    out.push_back(e.p);
  }
  return out;
}

EventStream read_events(const fs::path& path, EventFormat format) {
  if (!fs::exists(path)) throw DataError("no such event file: " + path.string());
  try {
    if (format == EventFormat::kCsv) {
      auto bytes = read_bytes(path);
      return parse_events_csv(std::string(bytes.begin(), bytes.end()));
    }
    return parse_events_binary(read_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

EventStream read_events(const fs::path& path) { return read_events(path, format_for(path)); }

void write_events(const fs::path& path, const EventStream& stream, EventFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  if (format == EventFormat::kCsv) {
    out << format_events_csv(stream);
  } else {
    auto bytes = format_events_binary(stream);
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  }
}

std::vector<std::pair<std::size_t, std::size_t>> slice_bounds(std::size_t n, std::size_t t_steps) {
  if (t_steps == 0) throw DataError("t_steps must be positive");
  if (n < t_steps) {
    throw DataError("stream has " + std::to_string(n) + " events, fewer than T = " + std::to_string(t_steps));
  }
  const std::size_t per = n / t_steps;
  std::vector<std::pair<std::size_t, std::size_t>> b(t_steps);
  for (std::size_t j = 0; j < t_steps; ++j) b[j] = {per * j, j + 1 < t_steps ? per * (j + 1) : n};
  return b;
}

Tensor<double> integrate_frames(const EventStream& s, std::size_t t_steps) {
  const auto bounds = slice_bounds(s.events.size(), t_steps);
  Tensor<double> f(Shape{t_steps, 2, s.height, s.width});
  const std::size_t plane = s.height * s.width;
  for (std::size_t j = 0; j < t_steps; ++j) {
    for (std::size_t i = bounds[j].first; i < bounds[j].second; ++i) {
      const Event& e = s.events[i];
      f[(j * 2 + e.p) * plane + e.y * s.width + e.x] += 1.0;
    }
  }
  return f;
}

Tensor<double> replicate_static(const Tensor<double>& image, std::size_t t_steps) {
  if (image.rank() != 3) throw DataError("static image must be C x H x W, got " + to_string(image.shape()));
  Shape shape{t_steps};
  shape.insert(shape.end(), image.shape().begin(), image.shape().end());
  std::vector<double> v;
  v.reserve(t_steps * image.size());
  for (std::size_t t = 0; t < t_steps; ++t) v.insert(v.end(), image.storage().begin(), image.storage().end());
  return Tensor<double>(shape, std::move(v));
}

std::vector<double> one_hot(std::size_t label, std::size_t classes) {
  if (label >= classes) throw DataError("label " + std::to_string(label) + " outside " + std::to_string(classes) + " classes");
  std::vector<double> v(classes, 0.0);
  v[label] = 1.0;
  return v;
}

namespace {

struct Planes {
  std::size_t count, h, w;
};

Planes planes_of(const Tensor<double>& f) {
  if (f.rank() != 4) throw ShapeError("frame transforms expect T x C x H x W, got " + to_string(f.shape()));
  return {f.dim(0) * f.dim(1), f.dim(2), f.dim(3)};
}

// Moves every pixel (x, y) to map(x, y), rounding to the nearest pixel and
// dropping anything that lands outside.
template <typename Map>
Tensor<double> forward_map(const Tensor<double>& f, Map map) {
  const Planes p = planes_of(f);
  Tensor<double> out(f.shape());
  for (std::size_t y = 0; y < p.h; ++y) {
    for (std::size_t x = 0; x < p.w; ++x) {
      auto [fx, fy] = map(static_cast<double>(x), static_cast<double>(y));
      const long tx = std::lround(fx), ty = std::lround(fy);
      if (tx < 0 || ty < 0 || tx >= static_cast<long>(p.w) || ty >= static_cast<long>(p.h)) continue;
      for (std::size_t k = 0; k < p.count; ++k) {
        out[(k * p.h + static_cast<std::size_t>(ty)) * p.w + static_cast<std::size_t>(tx)] +=
            f[(k * p.h + y) * p.w + x];
      }
    }
  }
  return out;
}

}  // namespace

Tensor<double> hflip(const Tensor<double>& f) {
  const Planes p = planes_of(f);
  Tensor<double> out(f.shape());
  for (std::size_t k = 0; k < p.count; ++k)
    for (std::size_t y = 0; y < p.h; ++y)
      for (std::size_t x = 0; x < p.w; ++x) out[(k * p.h + y) * p.w + (p.w - 1 - x)] = f[(k * p.h + y) * p.w + x];
  return out;
}

Tensor<double> roll(const Tensor<double>& f, long dx, long dy) {
  return forward_map(f, [=](double x, double y) { return std::pair{x + dx, y + dy}; });
}

Tensor<double> rotate(const Tensor<double>& f, double degrees) {
  const Planes p = planes_of(f);
  const double cx = (static_cast<double>(p.w) - 1) / 2, cy = (static_cast<double>(p.h) - 1) / 2;
  const double a = degrees * std::numbers::pi / 180.0, c = std::cos(a), s = std::sin(a);
  return forward_map(f, [=](double x, double y) {
    return std::pair{cx + c * (x - cx) - s * (y - cy), cy + s * (x - cx) + c * (y - cy)};
  });
}

Tensor<double> shear(const Tensor<double>& f, double degrees) {
  const Planes p = planes_of(f);
  const double cy = (static_cast<double>(p.h) - 1) / 2;
  const double k = std::tan(degrees * std::numbers::pi / 180.0);
  return forward_map(f, [=](double x, double y) { return std::pair{x + k * (y - cy), y}; });
}

Tensor<double> cutout(const Tensor<double>& f, long cx, long cy, long side) {
  const Planes p = planes_of(f);
  Tensor<double> out = f;
  const long x0 = std::max(0L, cx - side / 2), y0 = std::max(0L, cy - side / 2);
  const long x1 = std::min(static_cast<long>(p.w), cx - side / 2 + side);
  const long y1 = std::min(static_cast<long>(p.h), cy - side / 2 + side);
  for (std::size_t k = 0; k < p.count; ++k)
    for (long y = y0; y < y1; ++y)
      for (long x = x0; x < x1; ++x) out[(k * p.h + static_cast<std::size_t>(y)) * p.w + static_cast<std::size_t>(x)] = 0.0;
  return out;
}

FrameSample mixup(const FrameSample& a, const FrameSample& b, double lambda) {
  if (a.frames.shape() != b.frames.shape() || a.target.size() != b.target.size()) {
    throw ShapeError("mixup of samples with different shapes");
  }
  if (lambda == 1.0) return a;
  FrameSample out = a;
  for (std::size_t i = 0; i < out.frames.size(); ++i) out.frames[i] = lambda * a.frames[i] + (1 - lambda) * b.frames[i];
  for (std::size_t i = 0; i < out.target.size(); ++i) out.target[i] = lambda * a.target[i] + (1 - lambda) * b.target[i];
  out.label = static_cast<std::size_t>(std::max_element(out.target.begin(), out.target.end()) - out.target.begin());
  return out;
}

FrameSample augment(const FrameSample& sample, const FrameSample& partner, std::mt19937_64& rng,
                    const AugmentPolicy& policy) {
  FrameSample out = sample;
  std::bernoulli_distribution flip(policy.flip_probability);
  if (flip(rng)) out.frames = hflip(out.frames);
  if (policy.mixup) {
    std::gamma_distribution<double> g(policy.mixup_alpha, 1.0);
    const double x = g(rng), y = g(rng);
    const double lambda = x + y > 0 ? x / (x + y) : 1.0;
    out = mixup(out, partner, lambda);
  }
  const long h = static_cast<long>(out.frames.dim(2)), w = static_cast<long>(out.frames.dim(3));
  switch (std::uniform_int_distribution<int>(0, 3)(rng)) {
    case 0: {
      std::uniform_int_distribution<long> d(-policy.roll_max, policy.roll_max);
      const long dx = d(rng), dy = d(rng);
      out.frames = roll(out.frames, dx, dy);
      break;
    }
    case 1:
      out.frames = rotate(out.frames, std::uniform_real_distribution<double>(-policy.rotate_max, policy.rotate_max)(rng));
      break;
    case 2: {
      const long side = std::uniform_int_distribution<long>(1, policy.cutout_max)(rng);
      const long cx = std::uniform_int_distribution<long>(0, w - 1)(rng);
      const long cy = std::uniform_int_distribution<long>(0, h - 1)(rng);
      out.frames = cutout(out.frames, cx, cy, side);
      break;
    }
    default:
      out.frames = shear(out.frames, std::uniform_real_distribution<double>(-policy.shear_max, policy.shear_max)(rng));
      break;
  }
  return out;
}

Split split_train_test(const std::vector<std::size_t>& labels, std::uint64_t seed) {
  std::size_t classes = 0;
  for (std::size_t l : labels) classes = std::max(classes, l + 1);
  std::vector<std::vector<std::size_t>> by_class(classes);
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::mt19937_64 rng(seed);
  Split split;
  for (std::size_t c = 0; c < classes; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < 10) {
      throw DataError("class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                      " samples; the 9:1 split needs at least 10");
    }
    std::shuffle(idx.begin(), idx.end(), rng);
    const std::size_t n_test = (idx.size() + 5) / 10;
    split.test.insert(split.test.end(), idx.begin(), idx.begin() + static_cast<long>(n_test));
    split.train.insert(split.train.end(), idx.begin() + static_cast<long>(n_test), idx.end());
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  return split;
}

SyntheticDataset gen_synthetic(const SyntheticConfig& cfg) {
  if (cfg.classes != 2 && cfg.classes != 4 && cfg.classes != 8) {
    throw ConfigError("moving-bar generator supports 2, 4 or 8 classes, got " + std::to_string(cfg.classes));
  }
  if (cfg.height < 2 || cfg.width < 2 || cfg.height > 0xFFFF || cfg.width > 0xFFFF) {
    throw ConfigError("moving-bar resolution must be between 2 and 65535");
  }
  if (cfg.noise < 0) throw ConfigError("noise must be non-negative");
  constexpr std::size_t kTicks = 32;
  constexpr std::uint32_t kTickMicros = 1000;
  const double cx = (static_cast<double>(cfg.width) - 1) / 2, cy = (static_cast<double>(cfg.height) - 1) / 2;

  SyntheticDataset data;
  for (std::size_t n = 0; n < cfg.samples; ++n) {
    std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                      static_cast<std::uint32_t>(n)};
    std::mt19937_64 rng(seq);
    const std::size_t label = n % cfg.classes;
    const double angle = 2 * std::numbers::pi * static_cast<double>(label) / static_cast<double>(cfg.classes);
    const double ux = std::cos(angle), uy = std::sin(angle);
    const double thickness = std::uniform_real_distribution<double>(1.5, 3.0)(rng);
    const double jitter = std::uniform_real_distribution<double>(-1.0, 1.0)(rng);

    // Projection onto the motion direction, and its extent over the sensor.
    std::vector<double> proj(cfg.width * cfg.height);
    double reach = 0;
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const double s = (static_cast<double>(x) - cx) * ux + (static_cast<double>(y) - cy) * uy;
        proj[y * cfg.width + x] = s;
        reach = std::max(reach, std::abs(s));
      }
    }
    auto covered = [&](std::size_t k, std::size_t i) {
      const double front = -reach + jitter + (2 * reach + thickness) * static_cast<double>(k) / (kTicks - 1);
      return proj[i] < front && proj[i] >= front - thickness;
    };

    EventStream s;
    s.width = cfg.width;
    s.height = cfg.height;
    std::uniform_int_distribution<std::uint32_t> within(0, kTickMicros - 1);
    for (std::size_t k = 0; k < kTicks; ++k) {
      for (std::size_t i = 0; i < proj.size(); ++i) {
        const bool now = covered(k, i), before = k > 0 && covered(k - 1, i);
        if (now == before) continue;
        s.events.push_back(Event{static_cast<std::uint32_t>(k * kTickMicros) + within(rng),
                                 static_cast<std::uint16_t>(i % cfg.width), static_cast<std::uint16_t>(i / cfg.width),
                                 static_cast<std::uint8_t>(now ? 1 : 0)});
      }
    }
    const auto n_noise = static_cast<std::size_t>(std::lround(cfg.noise * static_cast<double>(s.events.size())));
    std::uniform_int_distribution<std::uint32_t> when(0, kTicks * kTickMicros - 1);
    std::uniform_int_distribution<std::size_t> px(0, cfg.width - 1), py(0, cfg.height - 1);
    std::bernoulli_distribution pol(0.5);
    for (std::size_t k = 0; k < n_noise; ++k) {
      Event e;
      e.t = when(rng);
      e.x = static_cast<std::uint16_t>(px(rng));
      e.y = static_cast<std::uint16_t>(py(rng));
      e.p = pol(rng) ? 1 : 0;
      s.events.push_back(e);
    }
    std::stable_sort(s.events.begin(), s.events.end(), [](const Event& a, const Event& b) { return a.t < b.t; });
    if (s.events.size() < cfg.t_steps) {
      throw ConfigError("moving-bar sample " + std::to_string(n) + " has fewer events than T = " +
                        std::to_string(cfg.t_steps));
    }
    data.streams.push_back(std::move(s));
    data.labels.push_back(label);
  }
  return data;
}

void write_dataset(const fs::path& dir, const SyntheticDataset& data, EventFormat format) {
  std::error_code ec;
  fs::create_directories(dir / "samples", ec);
  if (ec) throw DataError("cannot create " + (dir / "samples").string() + ": " + ec.message());
  std::ofstream manifest(dir / "manifest.csv");
  if (!manifest) throw DataError("cannot write " + (dir / "manifest.csv").string());
  const char* ext = format == EventFormat::kCsv ? ".csv" : ".bin";
  for (std::size_t i = 0; i < data.streams.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "sample_%05zu%s", i, ext);
    const fs::path rel = fs::path("samples") / name;
    write_events(dir / rel, data.streams[i], format);
    manifest << rel.generic_string() << ',' << data.labels[i] << '\n';
  }
}

std::vector<ManifestEntry> read_manifest(const fs::path& manifest) {
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest " + manifest.string());
  std::vector<ManifestEntry> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto comma = line.rfind(',');
    std::size_t label = 0;
    if (comma == std::string::npos || comma == 0 || !parse_field(std::string_view(line).substr(comma + 1), label)) {
      throw DataError(manifest.string() + " line " + std::to_string(line_no) + ": expected 'path,label'");
    }
    out.push_back({manifest.parent_path() / line.substr(0, comma), label});
  }
  return out;
}

std::vector<FrameSample> load_dataset(const fs::path& manifest, std::size_t t_steps, std::size_t classes) {
  std::vector<FrameSample> out;
  for (const auto& entry : read_manifest(manifest)) {
    FrameSample s;
    s.frames = integrate_frames(read_events(entry.path), t_steps);
    s.label = entry.label;
    s.target = one_hot(entry.label, classes);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<FrameSample> frames_from(const SyntheticDataset& data, std::size_t t_steps, std::size_t classes) {
  std::vector<FrameSample> out;
  out.reserve(data.streams.size());
  for (std::size_t i = 0; i < data.streams.size(); ++i) {
    out.push_back({integrate_frames(data.streams[i], t_steps), one_hot(data.labels[i], classes), data.labels[i]});
  }
  return out;
}

template <typename Real>
Tensor<Real> stack_frames(const std::vector<FrameSample>& samples, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ShapeError("empty batch");
  const Shape& s0 = samples.at(indices[0]).frames.shape();
  const std::size_t t_steps = s0[0], per = numel(s0) / t_steps, batch = indices.size();
  Shape shape{t_steps, batch};
  shape.insert(shape.end(), s0.begin() + 1, s0.end());
  Tensor<Real> out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const auto& f = samples.at(indices[b]).frames;
    if (f.shape() != s0) throw ShapeError("batch mixes frame shapes " + to_string(s0) + " and " + to_string(f.shape()));
    for (std::size_t t = 0; t < t_steps; ++t)
      for (std::size_t k = 0; k < per; ++k) out[(t * batch + b) * per + k] = static_cast<Real>(f[t * per + k]);
  }
  return out;
}

template Tensor<float> stack_frames<float>(const std::vector<FrameSample>&, const std::vector<std::size_t>&);
template Tensor<double> stack_frames<double>(const std::vector<FrameSample>&, const std::vector<std::size_t>&);

}  // namespace tcja

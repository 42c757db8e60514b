#include "tcja/training.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numeric>
#include <sstream>

#include "tcja/errors.hpp"
#include "tcja/ops.hpp"

namespace tcja {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "adam") return OptimizerKind::kAdam;
  if (name == "sgd") return OptimizerKind::kSgd;
  throw ConfigError("unknown optimizer '" + name + "' (expected adam or sgd)");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw ConfigError("lr must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (precision != "float" && precision != "double") {
    throw ConfigError("precision must be 'float' or 'double', got '" + precision + "'");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && eps > 0)) throw ConfigError("invalid Adam constants");
}

template <typename Real>
DiffTensor<Real> smse_loss(const DiffTensor<Real>& outputs, const Tensor<Real>& target) {
  const Shape& os = outputs.shape();
  if (os.size() != target.rank() + 1 || !std::equal(target.shape().begin(), target.shape().end(), os.begin() + 1)) {
    throw ShapeError("smse_loss: outputs " + to_string(os) + " do not match target " + to_string(target.shape()) +
                     " with a leading time axis");
  }
  Shape b{1};
  b.insert(b.end(), target.shape().begin(), target.shape().end());
  auto diff = sub(outputs, outputs.tape().leaf(target.reshaped(b)));
  return mean(mul(diff, diff));
}

namespace {

template <typename Real>
std::vector<double> rates_of(const Tensor<Real>& outputs, std::size_t b, std::size_t batch) {
  const std::size_t steps = outputs.dim(0), classes = outputs.shape().back();
  std::vector<double> r(classes, 0.0);
  for (std::size_t t = 0; t < steps; ++t)
    for (std::size_t c = 0; c < classes; ++c) r[c] += outputs[(t * batch + b) * classes + c];
  for (auto& v : r) v /= static_cast<double>(steps);
  return r;
}

std::size_t argmax_first(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

template <typename Real>
std::size_t predict_label(const Tensor<Real>& outputs) {
  if (outputs.rank() != 2 || outputs.dim(0) == 0) throw ShapeError("predict_label expects T x C, T >= 1");
  return argmax_first(rates_of(outputs, 0, 1));
}

template <typename Real>
std::vector<std::size_t> predict_labels(const Tensor<Real>& outputs) {
  if (outputs.rank() != 3 || outputs.dim(0) == 0) throw ShapeError("predict_labels expects T x B x C, T >= 1");
  std::vector<std::size_t> out;
  for (std::size_t b = 0; b < outputs.dim(1); ++b) out.push_back(argmax_first(rates_of(outputs, b, outputs.dim(1))));
  return out;
}

template <typename Real>
void Optimizer<Real>::step(std::vector<Parameter<Real>>& params) {
  for (const auto& p : params) {
    if (!p.grad_ready) throw GraphError("parameter " + p.name + " received no gradient");
  }
  ++t_;
  if (cfg_.optimizer == OptimizerKind::kSgd) {
    for (auto& p : params)
      for (std::size_t i = 0; i < p.value.size(); ++i)
        p.value[i] = static_cast<Real>(p.value[i] - cfg_.lr * p.grad[i]);
    return;
  }
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    auto& m = m_.try_emplace(p.name, p.value.shape()).first->second;
    auto& v = v_.try_emplace(p.name, p.value.shape()).first->second;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      const double mi = cfg_.beta1 * m[i] + (1 - cfg_.beta1) * g;
      const double vi = cfg_.beta2 * v[i] + (1 - cfg_.beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      p.value[i] = static_cast<Real>(p.value[i] - cfg_.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg_.eps));
    }
  }
}

template <typename Real>
EvalResult evaluate(Network<Real>& net, const std::vector<FrameSample>& samples, std::size_t batch_size) {
  EvalResult r;
  const std::size_t classes = net.config().num_classes;
  r.per_class_accuracy.assign(classes, 0.0);
  r.per_class_count.assign(classes, 0);
  if (samples.empty()) return r;
  if (batch_size == 0) batch_size = 1;
  std::size_t correct = 0;
  std::vector<std::size_t> per_class_correct(classes, 0);
  for (std::size_t start = 0; start < samples.size(); start += batch_size) {
    std::vector<std::size_t> idx(std::min(batch_size, samples.size() - start));
    std::iota(idx.begin(), idx.end(), start);
    Tape<Real> tape;
    ForwardCapture<Real> cap;
    auto out = net.forward(tape, stack_frames<Real>(samples, idx), false, nullptr, &cap);
    if (r.firing_rates.empty()) r.firing_rates.assign(cap.firing_rates.size(), 0.0);
    for (std::size_t k = 0; k < cap.firing_rates.size(); ++k) r.firing_rates[k] += cap.firing_rates[k] * idx.size();
    for (std::size_t b = 0; b < idx.size(); ++b) {
      auto rates = rates_of(out.value(), b, idx.size());
      const std::size_t pred = argmax_first(rates);
      const std::size_t truth = samples[idx[b]].label;
      r.predictions.push_back(pred);
      r.class_rates.push_back(std::move(rates));
      if (truth < classes) ++r.per_class_count[truth];
      if (pred == truth) {
        ++correct;
        ++per_class_correct[truth];
      }
    }
  }
  for (auto& v : r.firing_rates) v /= static_cast<double>(samples.size());
  r.accuracy = static_cast<double>(correct) / static_cast<double>(samples.size());
  for (std::size_t c = 0; c < classes; ++c) {
    if (r.per_class_count[c] > 0) {
      r.per_class_accuracy[c] = static_cast<double>(per_class_correct[c]) / static_cast<double>(r.per_class_count[c]);
    }
  }
  return r;
}

std::string metrics_csv(const std::vector<EpochMetrics>& history) {
  std::string out = "epoch,train_loss,test_acc,wall_seconds\n";
  char line[160];
  for (const auto& m : history) {
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.3f\n", m.epoch, m.train_loss, m.test_acc, m.wall_seconds);
    out += line;
  }
  return out;
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

}  // namespace

template <typename Real>
TrainResult train(Network<Real>& net, const std::vector<FrameSample>& train_set,
                  const std::vector<FrameSample>& test_set, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  if (train_set.empty() && cfg.epochs > 0) throw DataError("training set is empty");
  Optimizer<Real> opt(cfg);
  TrainState state;
  state.rng.seed(cfg.seed);
  TrainResult result;
  const bool persist = !options.output_dir.empty();
  if (persist) {
    std::error_code ec;
    fs::create_directories(options.output_dir, ec);
    if (ec) throw DataError("cannot create " + options.output_dir.string() + ": " + ec.message());
    const auto initial = serialize(make_checkpoint(net, &opt, state, options.config_json));
    write_checkpoint(options.output_dir / "best.ckpt", deserialize(initial));
    write_checkpoint(options.output_dir / "last.ckpt", deserialize(initial));
    write_text(options.output_dir / "metrics.csv", metrics_csv({}));
  }

  const std::size_t classes = net.config().num_classes;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t global_batch = 0;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), state.rng);
    double loss_sum = 0.0;
    for (std::size_t first = 0; first < order.size(); first += cfg.batch_size, ++global_batch) {
      std::vector<std::size_t> idx(order.begin() + static_cast<long>(first),
                                   order.begin() + static_cast<long>(std::min(order.size(), first + cfg.batch_size)));
      std::vector<FrameSample> augmented;
      const std::vector<FrameSample>* source = &train_set;
      std::vector<std::size_t> batch_idx = idx;
      if (cfg.augment) {
        std::uniform_int_distribution<std::size_t> pick(0, train_set.size() - 1);
        for (std::size_t i : idx) augmented.push_back(augment(train_set[i], train_set[pick(state.rng)], state.rng, cfg.augment_policy));
        std::iota(batch_idx.begin(), batch_idx.end(), 0);
        source = &augmented;
      }
      Tensor<Real> target(Shape{idx.size(), classes});
      for (std::size_t b = 0; b < batch_idx.size(); ++b) {
        const auto& t = (*source)[batch_idx[b]].target;
        if (t.size() != classes) throw DataError("sample target has " + std::to_string(t.size()) + " classes");
        for (std::size_t c = 0; c < classes; ++c) target[b * classes + c] = static_cast<Real>(t[c]);
      }
      Tape<Real> tape;
      net.zero_grad();
      auto out = net.forward(tape, stack_frames<Real>(*source, batch_idx), true, &state.rng);
      auto loss = smse_loss(out, target);
      const double lv = loss.value()[0];
      if (!std::isfinite(lv)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                               std::to_string(global_batch),
                           global_batch);
      }
      tape.backward(loss);
      opt.step(net.parameters());
      loss_sum += lv * static_cast<double>(idx.size());
    }
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(train_set.size());
    m.test_acc = evaluate(net, test_set).accuracy;
    m.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(m);
    state.epoch = epoch;
    const bool improved = m.test_acc > state.best_acc;
    if (improved) {
      state.best_acc = m.test_acc;
      result.best_acc = m.test_acc;
      result.best_epoch = epoch;
    }
    if (options.verbose) {
      std::fprintf(stderr, "epoch %zu  loss %.5f  test_acc %.4f  (%.1fs)\n", epoch, m.train_loss, m.test_acc,
                   m.wall_seconds);
    }
    if (persist) {
      auto ckpt = make_checkpoint(net, &opt, state, options.config_json);
      if (improved) write_checkpoint(options.output_dir / "best.ckpt", ckpt);
      write_checkpoint(options.output_dir / "last.ckpt", ckpt);
      write_text(options.output_dir / "metrics.csv", metrics_csv(result.history));
    }
  }
  return result;
}

// ---- checkpoints ----

namespace {

constexpr char kCkptMagic[8] = {'T', 'C', 'J', 'A', 'C', 'K', 'P', 'T'};

std::size_t dtype_size(DType d) {
  switch (d) {
    case DType::kF32: return 4;
    case DType::kF64: return 8;
    case DType::kU8: return 1;
    case DType::kU64: return 8;
  }
  return 0;
}

template <typename Real>
constexpr DType dtype_of() {
  return sizeof(Real) == 4 ? DType::kF32 : DType::kF64;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& b) : b_(b) {}
  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, b_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::vector<std::uint8_t> bytes(std::size_t n, const char* what) {
    need(n, what);
    std::vector<std::uint8_t> v(b_.begin() + static_cast<long>(pos_), b_.begin() + static_cast<long>(pos_ + n));
    pos_ += n;
    return v;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == b_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (b_.size() - pos_ < n) {
      throw CheckpointError(std::string("checkpoint truncated reading ") + what + " at byte offset " +
                            std::to_string(pos_));
    }
  }
  const std::vector<std::uint8_t>& b_;
  std::size_t pos_ = 0;
};

template <typename T>
CheckpointRecord record_of(const std::string& name, DType dtype, const Shape& shape, const T* data) {
  CheckpointRecord r;
  r.name = name;
  r.dtype = dtype;
  for (std::size_t d : shape) r.dims.push_back(static_cast<std::uint32_t>(d));
  const auto* p = reinterpret_cast<const std::uint8_t*>(data);
  r.bytes.assign(p, p + numel(shape) * sizeof(T));
  return r;
}

CheckpointRecord text_record(const std::string& name, const std::string& text) {
  return record_of(name, DType::kU8, Shape{text.size()}, text.data());
}

CheckpointRecord u64_record(const std::string& name, std::uint64_t v) {
  return record_of(name, DType::kU64, Shape{}, &v);
}

std::uint64_t u64_of(const CheckpointRecord& r) {
  if (r.dtype != DType::kU64 || r.bytes.size() != 8) throw CheckpointError("record " + r.name + " is not a u64");
  std::uint64_t v;
  std::memcpy(&v, r.bytes.data(), 8);
  return v;
}

template <typename Real>
void copy_into(const CheckpointRecord& r, Tensor<Real>& dst) {
  if (r.dtype != dtype_of<Real>()) {
    throw CheckpointError("record " + r.name + " has dtype code " + std::to_string(static_cast<int>(r.dtype)) +
                          ", expected " + std::to_string(static_cast<int>(dtype_of<Real>())));
  }
  Shape shape(r.dims.begin(), r.dims.end());
  if (shape != dst.shape()) {
    throw CheckpointError("record " + r.name + " has shape " + to_string(shape) + ", network expects " +
                          to_string(dst.shape()));
  }
  std::memcpy(dst.data(), r.bytes.data(), r.bytes.size());
}

}  // namespace

const CheckpointRecord* Checkpoint::find(const std::string& name) const {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

std::string Checkpoint::text(const std::string& name) const {
  const auto* r = find(name);
  if (!r) return "";
  if (r->dtype != DType::kU8) throw CheckpointError("record " + name + " is not text");
  return std::string(r->bytes.begin(), r->bytes.end());
}

std::vector<std::uint8_t> serialize(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(std::begin(kCkptMagic), std::end(kCkptMagic));
  put<std::uint16_t>(out, ckpt.version);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.arch.size()));
  out.insert(out.end(), ckpt.arch.begin(), ckpt.arch.end());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.records.size()));
  for (const auto& r : ckpt.records) {
    put<std::uint16_t>(out, static_cast<std::uint16_t>(r.name.size()));
    out.insert(out.end(), r.name.begin(), r.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(r.dims.size()));
    for (auto d : r.dims) put<std::uint32_t>(out, d);
    out.insert(out.end(), r.bytes.begin(), r.bytes.end());
  }
  return out;
}

Checkpoint deserialize(const std::vector<std::uint8_t>& bytes) {
  Reader in(bytes);
  auto magic = in.bytes(8, "magic");
  if (!std::equal(magic.begin(), magic.end(), std::begin(kCkptMagic))) {
    throw CheckpointError("bad checkpoint magic (expected TCJACKPT)");
  }
  Checkpoint c;
  c.version = in.get<std::uint16_t>("version");
  if (c.version != 1) throw CheckpointError("unsupported checkpoint version " + std::to_string(c.version));
  const auto arch_len = in.get<std::uint32_t>("arch length");
  auto arch = in.bytes(arch_len, "arch string");
  c.arch.assign(arch.begin(), arch.end());
  const auto count = in.get<std::uint32_t>("record count");
  for (std::uint32_t k = 0; k < count; ++k) {
    CheckpointRecord r;
    const auto name_len = in.get<std::uint16_t>("record name length");
    auto name = in.bytes(name_len, "record name");
    r.name.assign(name.begin(), name.end());
    const auto code = in.get<std::uint8_t>("dtype");
    if (code > 3) {
      throw CheckpointError("record " + r.name + ": unknown dtype code " + std::to_string(code) + " at byte offset " +
                            std::to_string(in.pos() - 1));
    }
    r.dtype = static_cast<DType>(code);
    const auto rank = in.get<std::uint8_t>("rank");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < rank; ++d) {
      r.dims.push_back(in.get<std::uint32_t>("dims"));
      n *= r.dims.back();
    }
    r.bytes = in.bytes(n * dtype_size(r.dtype), "tensor values");
    c.records.push_back(std::move(r));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint at byte offset " + std::to_string(in.pos()));
  return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
  const auto bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint read_checkpoint(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), {});
  try {
    return deserialize(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

template <typename Real>
Checkpoint make_checkpoint(const Network<Real>& net, Optimizer<Real>* opt, const TrainState& state,
                           const std::string& config_json) {
  Checkpoint c;
  c.arch = render(net.arch());
  for (const auto& p : net.parameters()) c.records.push_back(record_of(p.name, dtype_of<Real>(), p.value.shape(), p.value.data()));
  if (opt) {
    for (auto* moments : {&opt->first_moments(), &opt->second_moments()}) {
      const std::string prefix = moments == &opt->first_moments() ? "adam.m/" : "adam.v/";
      for (const auto& p : net.parameters()) {
        auto it = moments->find(p.name);
        const Tensor<Real> zeros(p.value.shape());
        const Tensor<Real>& t = it == moments->end() ? zeros : it->second;
        c.records.push_back(record_of(prefix + p.name, dtype_of<Real>(), t.shape(), t.data()));
      }
    }
    c.records.push_back(u64_record("meta/optimizer_steps", opt->steps()));
  }
  c.records.push_back(u64_record("meta/epoch", state.epoch));
  c.records.push_back(record_of("meta/best_acc", DType::kF64, Shape{}, &state.best_acc));
  std::ostringstream rng;
  rng << state.rng;
  c.records.push_back(text_record("meta/rng", rng.str()));
  c.records.push_back(text_record("meta/config", config_json));
  return c;
}

template <typename Real>
void restore_checkpoint(const Checkpoint& ckpt, Network<Real>& net, Optimizer<Real>* opt, TrainState* state) {
  const std::string arch = render(net.arch());
  if (ckpt.arch != arch) throw CheckpointError("checkpoint arch '" + ckpt.arch + "' does not match network '" + arch + "'");
  std::size_t tensor_records = 0;
  for (const auto& r : ckpt.records)
    tensor_records += r.name.find('/') == std::string::npos;
  if (tensor_records != net.parameters().size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensor_records) + " parameters, network has " +
                          std::to_string(net.parameters().size()));
  }
  for (auto& p : net.parameters()) {
    const auto* r = ckpt.find(p.name);
    if (!r) throw CheckpointError("checkpoint lacks parameter " + p.name);
    copy_into(*r, p.value);
  }
  if (opt) {
    for (const auto& p : net.parameters()) {
      for (auto [prefix, moments] : {std::pair{"adam.m/", &opt->first_moments()}, std::pair{"adam.v/", &opt->second_moments()}}) {
        const auto* r = ckpt.find(prefix + p.name);
        if (!r) throw CheckpointError("checkpoint lacks optimizer state " + std::string(prefix) + p.name);
        Tensor<Real> t(p.value.shape());
        copy_into(*r, t);
        (*moments)[p.name] = std::move(t);
      }
    }
    const auto* steps = ckpt.find("meta/optimizer_steps");
    if (!steps) throw CheckpointError("checkpoint lacks meta/optimizer_steps");
    opt->set_steps(u64_of(*steps));
  }
  if (state) {
    const auto* epoch = ckpt.find("meta/epoch");
    const auto* best = ckpt.find("meta/best_acc");
    if (!epoch || !best || best->bytes.size() != 8) throw CheckpointError("checkpoint lacks training state");
    state->epoch = u64_of(*epoch);
    std::memcpy(&state->best_acc, best->bytes.data(), 8);
    std::istringstream rng(ckpt.text("meta/rng"));
    rng >> state->rng;
    if (!rng) throw CheckpointError("checkpoint rng state is malformed");
  }
}

#define TCJA_INSTANTIATE_TRAINING(Real)                                                                         \
  template DiffTensor<Real> smse_loss(const DiffTensor<Real>&, const Tensor<Real>&);                            \
  template std::size_t predict_label(const Tensor<Real>&);                                                      \
  template std::vector<std::size_t> predict_labels(const Tensor<Real>&);                                        \
  template class Optimizer<Real>;                                                                               \
  template EvalResult evaluate(Network<Real>&, const std::vector<FrameSample>&, std::size_t);                    \
  template TrainResult train(Network<Real>&, const std::vector<FrameSample>&, const std::vector<FrameSample>&,  \
                             const TrainConfig&, const TrainOptions&);                                          \
  template Checkpoint make_checkpoint(const Network<Real>&, Optimizer<Real>*, const TrainState&,                \
                                      const std::string&);                                                      \
  template void restore_checkpoint(const Checkpoint&, Network<Real>&, Optimizer<Real>*, TrainState*);

TCJA_INSTANTIATE_TRAINING(float)
TCJA_INSTANTIATE_TRAINING(double)

}  // namespace tcja

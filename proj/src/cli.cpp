#include "tcja/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>

#include "tcja/attention.hpp"
#include "tcja/errors.hpp"
#include "tcja/ops.hpp"

namespace tcja {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

constexpr const char* kDefaultArch = "16C3-LIF-MP2-TCJA-16C3-LIF-MP2-40FC-LIF-Voting";

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; });
    if (!known) throw ConfigError("unknown key '" + (where == "config" ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_field(const json& obj, const char* key, T& dst) {
  if (obj.contains(key)) dst = obj.at(key).get<T>();
}

std::string resolve_path(const std::string& p, const fs::path& base) {
  if (p.empty()) return p;
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return fs::absolute(path).lexically_normal().string();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

}  // namespace

void RunConfig::validate() const {
  parse_arch(network.arch);
  network.lif.validate();
  train.validate();
  if (network.time_steps == 0) throw ConfigError("time_steps must be positive");
  if (network.num_classes < 2) throw ConfigError("num_classes must be at least 2");
  if (network.in_channels != 2) throw ConfigError("event input has 2 polarity channels, got input.channels = " +
                                                  std::to_string(network.in_channels));
  if (data.source == "synthetic") {
    if (data.train_samples == 0 || data.test_samples == 0) throw ConfigError("synthetic sample counts must be positive");
    if (!(data.noise >= 0)) throw ConfigError("data.noise must be non-negative");
  } else if (data.source == "manifest") {
    const bool single = !data.manifest.empty();
    const bool pair = !data.train_manifest.empty() && !data.test_manifest.empty();
    if (single == pair) throw ConfigError("manifest data needs either data.manifest or both data.train and data.test");
  } else {
    throw ConfigError("data.source must be 'synthetic' or 'manifest', got '" + data.source + "'");
  }
  if (output_dir.empty()) throw ConfigError("output_dir is empty");
}

RunConfig parse_run_config(const std::string& json_text, const fs::path& base_dir) {
  RunConfig cfg;
  cfg.network.arch = kDefaultArch;
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  try {
    check_keys(root, "config", {"arch", "input", "time_steps", "num_classes", "lif", "tcja", "train", "data", "output_dir"});
    read_field(root, "arch", cfg.network.arch);
    read_field(root, "time_steps", cfg.network.time_steps);
    read_field(root, "num_classes", cfg.network.num_classes);
    if (root.contains("output_dir")) cfg.output_dir = root.at("output_dir").get<std::string>();
    if (root.contains("input")) {
      const auto& in = root.at("input");
      check_keys(in, "input", {"channels", "height", "width"});
      read_field(in, "channels", cfg.network.in_channels);
      read_field(in, "height", cfg.network.height);
      read_field(in, "width", cfg.network.width);
    }
    if (root.contains("lif")) {
      const auto& l = root.at("lif");
      check_keys(l, "lif", {"tau", "v_reset", "v_threshold", "surrogate", "alpha", "gamma", "detach_reset"});
      auto& lif = cfg.network.lif;
      read_field(l, "tau", lif.tau);
      read_field(l, "v_reset", lif.v_reset);
      read_field(l, "v_threshold", lif.v_threshold);
      if (l.contains("surrogate")) lif.surrogate = parse_surrogate(l.at("surrogate").get<std::string>());
      read_field(l, "alpha", lif.alpha);
      read_field(l, "gamma", lif.gamma);
      read_field(l, "detach_reset", lif.detach_reset);
    }
    if (root.contains("tcja")) {
      const auto& t = root.at("tcja");
      check_keys(t, "tcja", {"k_t", "k_c", "fusion"});
      read_field(t, "k_t", cfg.network.k_t);
      read_field(t, "k_c", cfg.network.k_c);
      if (t.contains("fusion")) cfg.network.fusion = parse_fusion(t.at("fusion").get<std::string>());
    }
    if (root.contains("train")) {
      const auto& t = root.at("train");
      check_keys(t, "train", {"lr", "batch_size", "epochs", "seed", "precision", "optimizer", "beta1", "beta2", "eps",
                              "augment"});
      auto& tr = cfg.train;
      read_field(t, "lr", tr.lr);
      read_field(t, "batch_size", tr.batch_size);
      read_field(t, "epochs", tr.epochs);
      read_field(t, "seed", tr.seed);
      read_field(t, "precision", tr.precision);
      if (t.contains("optimizer")) tr.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
      read_field(t, "beta1", tr.beta1);
      read_field(t, "beta2", tr.beta2);
      read_field(t, "eps", tr.eps);
      read_field(t, "augment", tr.augment);
    }
    if (root.contains("data")) {
      const auto& d = root.at("data");
      check_keys(d, "data", {"source", "train_samples", "test_samples", "seed", "noise", "manifest", "train", "test"});
      auto& dc = cfg.data;
      read_field(d, "source", dc.source);
      read_field(d, "train_samples", dc.train_samples);
      read_field(d, "test_samples", dc.test_samples);
      read_field(d, "seed", dc.seed);
      read_field(d, "noise", dc.noise);
      read_field(d, "manifest", dc.manifest);
      read_field(d, "train", dc.train_manifest);
      read_field(d, "test", dc.test_manifest);
      dc.manifest = resolve_path(dc.manifest, base_dir);
      dc.train_manifest = resolve_path(dc.train_manifest, base_dir);
      dc.test_manifest = resolve_path(dc.test_manifest, base_dir);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_run_config(ss.str(), fs::absolute(path).parent_path());
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string dump_run_config(const RunConfig& cfg, bool include_output_dir) {
  const auto& n = cfg.network;
  const auto& t = cfg.train;
  const auto& d = cfg.data;
  json root;
  root["arch"] = n.arch;
  root["input"] = {{"channels", n.in_channels}, {"height", n.height}, {"width", n.width}};
  root["time_steps"] = n.time_steps;
  root["num_classes"] = n.num_classes;
  root["lif"] = {{"tau", n.lif.tau},
                 {"v_reset", n.lif.v_reset},
                 {"v_threshold", n.lif.v_threshold},
                 {"surrogate", to_string(n.lif.surrogate)},
                 {"alpha", n.lif.alpha},
                 {"gamma", n.lif.gamma},
                 {"detach_reset", n.lif.detach_reset}};
  root["tcja"] = {{"k_t", n.k_t}, {"k_c", n.k_c}, {"fusion", to_string(n.fusion)}};
  root["train"] = {{"lr", t.lr},
                   {"batch_size", t.batch_size},
                   {"epochs", t.epochs},
                   {"seed", t.seed},
                   {"precision", t.precision},
                   {"optimizer", to_string(t.optimizer)},
                   {"beta1", t.beta1},
                   {"beta2", t.beta2},
                   {"eps", t.eps},
                   {"augment", t.augment}};
  json data = {{"source", d.source}};
  if (d.source == "synthetic") {
    data["train_samples"] = d.train_samples;
    data["test_samples"] = d.test_samples;
    data["seed"] = d.seed;
    data["noise"] = d.noise;
  } else if (!d.manifest.empty()) {
    data["manifest"] = d.manifest;
  } else {
    data["train"] = d.train_manifest;
    data["test"] = d.test_manifest;
  }
  root["data"] = data;
  if (include_output_dir) root["output_dir"] = cfg.output_dir;
  return root.dump(2) + "\n";
}

Datasets load_datasets(const RunConfig& cfg) {
  const auto& n = cfg.network;
  Datasets out;
  if (cfg.data.source == "synthetic") {
    SyntheticConfig sc;
    sc.classes = n.num_classes;
    sc.height = n.height;
    sc.width = n.width;
    sc.t_steps = n.time_steps;
    sc.samples = cfg.data.train_samples + cfg.data.test_samples;
    sc.seed = cfg.data.seed;
    sc.noise = cfg.data.noise;
    auto all = frames_from(gen_synthetic(sc), n.time_steps, n.num_classes);
    const auto cut = static_cast<long>(cfg.data.train_samples);
    out.train.assign(std::make_move_iterator(all.begin()), std::make_move_iterator(all.begin() + cut));
    out.test.assign(std::make_move_iterator(all.begin() + cut), std::make_move_iterator(all.end()));
  } else if (!cfg.data.manifest.empty()) {
    auto all = load_dataset(cfg.data.manifest, n.time_steps, n.num_classes);
    std::vector<std::size_t> labels;
    for (const auto& s : all) labels.push_back(s.label);
    const auto split = split_train_test(labels, cfg.train.seed);
    for (auto i : split.train) out.train.push_back(all[i]);
    for (auto i : split.test) out.test.push_back(all[i]);
  } else {
    out.train = load_dataset(cfg.data.train_manifest, n.time_steps, n.num_classes);
    out.test = load_dataset(cfg.data.test_manifest, n.time_steps, n.num_classes);
  }
  for (const auto* set : {&out.train, &out.test}) {
    for (const auto& s : *set) {
      if (s.frames.dim(2) != n.height || s.frames.dim(3) != n.width) {
        throw DataError("sample frames are " + std::to_string(s.frames.dim(2)) + "x" + std::to_string(s.frames.dim(3)) +
                        ", config expects " + std::to_string(n.height) + "x" + std::to_string(n.width));
      }
      if (s.label >= n.num_classes) throw DataError("label " + std::to_string(s.label) + " out of range");
    }
  }
  return out;
}

// ---- commands ----

namespace {

template <typename Real>
int train_with(const RunConfig& cfg, bool quiet, std::ostream& out) {
  const auto data = load_datasets(cfg);
  Network<Real> net(cfg.network, cfg.train.seed);
  TrainOptions opts;
  opts.output_dir = cfg.output_dir;
  opts.config_json = dump_run_config(cfg, false);
  opts.verbose = !quiet;
  const auto result = train(net, data.train, data.test, cfg.train, opts);
  out << "parameters " << net.parameter_count() << " (tcja " << net.tcja_parameter_count() << ")\n";
  if (result.history.empty()) {
    out << "no epochs run; initial checkpoint written to " << cfg.output_dir << "\n";
  } else {
    out << "best test_acc " << fmt("%.4f", result.best_acc) << " at epoch " << result.best_epoch << ", final "
        << fmt("%.4f", result.history.back().test_acc) << "\n";
  }
  return exit_code::kOk;
}

// Config stored in a checkpoint, or CheckpointError.
RunConfig checkpoint_config(const Checkpoint& ckpt) {
  if (!ckpt.find("meta/config")) throw CheckpointError("checkpoint has no meta/config record");
  try {
    RunConfig cfg = parse_run_config(ckpt.text("meta/config"), fs::current_path());
    cfg.validate();
    return cfg;
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config unusable: ") + e.what());
  }
}

std::vector<FrameSample> eval_samples(const RunConfig& cfg, const std::string& manifest) {
  if (manifest.empty()) return load_datasets(cfg).test;
  auto s = load_dataset(manifest, cfg.network.time_steps, cfg.network.num_classes);
  for (const auto& x : s) {
    if (x.frames.dim(2) != cfg.network.height || x.frames.dim(3) != cfg.network.width) {
      throw DataError(manifest + ": frame size does not match the network input");
    }
  }
  return s;
}

template <typename Real>
int eval_with(const RunConfig& cfg, const Checkpoint& ckpt, const std::vector<FrameSample>& samples,
              const fs::path& predictions, std::ostream& out) {
  Network<Real> net(cfg.network, cfg.train.seed);
  restore_checkpoint(ckpt, net);
  const auto r = evaluate(net, samples);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) correct += r.predictions[i] == samples[i].label;
  out << "accuracy " << fmt("%.4f", r.accuracy) << " (" << correct << "/" << samples.size() << ")\n";
  out << "class  count  accuracy\n";
  for (std::size_t c = 0; c < r.per_class_count.size(); ++c) {
    char line[64];
    std::snprintf(line, sizeof line, "%5zu  %5zu  %.4f\n", c, r.per_class_count[c], r.per_class_accuracy[c]);
    out << line;
  }
  for (std::size_t l = 0; l < r.firing_rates.size(); ++l) {
    out << "lif " << l << " firing rate " << fmt("%.4f", r.firing_rates[l]) << "\n";
  }
  std::ostringstream csv;
  csv << "sample_id,true,predicted";
  for (std::size_t c = 0; c < cfg.network.num_classes; ++c) csv << ",rate_" << c;
  csv << "\n";
  for (std::size_t i = 0; i < samples.size(); ++i) {
    csv << i << "," << samples[i].label << "," << r.predictions[i];
    for (double v : r.class_rates[i]) csv << "," << fmt("%.10g", v);
    csv << "\n";
  }
  if (predictions.has_parent_path()) fs::create_directories(predictions.parent_path());
  write_text(predictions, csv.str());
  out << "predictions written to " << predictions.string() << "\n";
  return exit_code::kOk;
}

std::string matrix_csv(const Tensor<double>& m) {
  std::ostringstream s;
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = 0; j < cols; ++j) s << (j ? "," : "") << fmt("%.17g", m[i * cols + j]);
    s << "\n";
  }
  return s.str();
}

// P5 heatmap, each entry drawn as a scale x scale block. Fixed range maps
// [lo, hi] to [0, 255]; otherwise the matrix's own min/max are used.
std::string matrix_pgm(const Tensor<double>& m, std::size_t scale, bool fixed, double lo, double hi) {
  const std::size_t rows = m.dim(0), cols = m.dim(1);
  if (!fixed) {
    const auto [mn, mx] = std::minmax_element(m.values().begin(), m.values().end());
    lo = *mn;
    hi = *mx;
  }
  std::string img = "P5\n" + std::to_string(cols * scale) + " " + std::to_string(rows * scale) + "\n255\n";
  for (std::size_t i = 0; i < rows * scale; ++i) {
    for (std::size_t j = 0; j < cols * scale; ++j) {
      const double v = m[(i / scale) * cols + j / scale];
      const double u = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      img.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(u, 0.0, 1.0) * 255.0))));
    }
  }
  return img;
}

template <typename Real>
Tensor<double> first_of_batch(const Tensor<Real>& maps) {
  const std::size_t c = maps.dim(1), t = maps.dim(2);
  Tensor<double> m(Shape{c, t});
  for (std::size_t i = 0; i < c * t; ++i) m[i] = static_cast<double>(maps[i]);
  return m;
}

template <typename Real>
int inspect_with(const RunConfig& cfg, const Checkpoint& ckpt, const std::vector<FrameSample>& samples,
                 std::size_t sample, const fs::path& dir, std::size_t scale, std::ostream& out) {
  Network<Real> net(cfg.network, cfg.train.seed);
  restore_checkpoint(ckpt, net);
  if (sample >= samples.size()) {
    throw DataError("sample " + std::to_string(sample) + " out of range (dataset has " +
                    std::to_string(samples.size()) + ")");
  }
  Tape<Real> tape;
  ForwardCapture<Real> cap;
  net.forward(tape, stack_frames<Real>(samples, {sample}), false, nullptr, &cap);
  fs::create_directories(dir);
  for (std::size_t b = 0; b < cap.tcja_layers.size(); ++b) {
    const std::string stem = "block" + std::to_string(b) + "_layer" + std::to_string(cap.tcja_layers[b]);
    const std::pair<const char*, const Tensor<Real>*> maps[] = {
        {"T", &cap.t_maps[b]}, {"C", &cap.c_maps[b]}, {"F", &cap.f_maps[b]}};
    for (const auto& [tag, tensor] : maps) {
      const auto m = first_of_batch(*tensor);
      const bool is_f = std::string(tag) == "F";
      write_text(dir / (stem + "_" + tag + ".csv"), matrix_csv(m));
      write_text(dir / (stem + "_" + tag + ".pgm"), matrix_pgm(m, scale, is_f, 0.0, 1.0));
    }
    out << stem << ": " << cap.f_maps[b].dim(1) << " channels x " << cap.f_maps[b].dim(2) << " steps\n";
  }
  out << "sample " << sample << " (label " << samples[sample].label << "), maps written to " << dir.string() << "\n";
  return exit_code::kOk;
}

int run_bench(const std::vector<std::size_t>& channels, const std::vector<std::size_t>& steps,
              const std::vector<std::size_t>& kernels, std::size_t repeats, std::uint64_t seed, const fs::path& output,
              std::ostream& out) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random = [&](Shape s) {
    Tensor<double> t(s);
    for (auto& v : t.storage()) v = u(rng);
    return t;
  };
  using Clock = std::chrono::steady_clock;
  auto time_min = [&](auto&& op) {
    long long best = -1;
    for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
      Tape<double> tape;
      const auto t0 = Clock::now();
      op(tape);
      const auto ns = std::chrono::duration_cast<std::chrono::nanoseconds>(Clock::now() - t0).count();
      best = best < 0 ? ns : std::min<long long>(best, ns);
    }
    return std::max<long long>(best, 1);
  };
  std::ostringstream csv;
  csv << "c,t,k,op,nanos,params\n";
  out << "c,t,k,tla_params,cla_params,tcja_params,fc_baseline,ratio\n";
  for (auto c : channels) {
    for (auto t : steps) {
      for (auto k : kernels) {
        if (k == 0 || k >= t || k >= c) continue;
        const auto pc = param_count(c, t, k, k);
        const auto z = random({c, t}), w = random({c, c, k}), e = random({t, t, k});
        const auto ta = random({c, t}), ca = random({c, t});
        const auto ns_tla = time_min([&](Tape<double>& tp) { tla(tp.leaf(z), tp.leaf(w)); });
        const auto ns_cla = time_min([&](Tape<double>& tp) { cla(tp.leaf(z), tp.leaf(e)); });
        const auto ns_ccf = time_min([&](Tape<double>& tp) { ccf(tp.leaf(ta), tp.leaf(ca), Fusion::kMultiply); });
        const auto row = std::to_string(c) + "," + std::to_string(t) + "," + std::to_string(k) + ",";
        csv << row << "tla," << ns_tla << "," << pc.tla << "\n";
        csv << row << "cla," << ns_cla << "," << pc.cla << "\n";
        csv << row << "ccf," << ns_ccf << ",0\n";
        out << row << pc.tla << "," << pc.cla << "," << pc.tcja() << "," << pc.fc_baseline << ","
            << fmt("%.6f", static_cast<double>(pc.tcja()) / static_cast<double>(pc.fc_baseline)) << "\n";
      }
    }
  }
  if (output.has_parent_path()) fs::create_directories(output.parent_path());
  write_text(output, csv.str());
  out << "timings written to " << output.string() << "\n";
  return exit_code::kOk;
}

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const ShapeError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_code::kConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return exit_code::kNumeric;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return exit_code::kCheckpoint;
  } catch (const fs::filesystem_error& e) {
    err << "data error: " << e.what() << "\n";
    return exit_code::kData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code::kConfig;
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"TCJA spiking network trainer"};
  app.require_subcommand(1);

  // train
  auto* train_cmd = app.add_subcommand("train", "train a network from a JSON run config");
  std::string config_path, output, arch, precision, optimizer, fusion, surrogate, manifest, train_manifest,
      test_manifest;
  std::size_t epochs = 0, batch = 0, k_t = 0, k_c = 0, train_samples = 0, test_samples = 0;
  double lr = 0;
  std::uint64_t seed = 0, data_seed = 0;
  bool augment = false, quiet = false;
  train_cmd->add_option("--config", config_path, "run config JSON")->check(CLI::ExistingFile);
  auto* o_output = train_cmd->add_option("--output", output, "output directory");
  auto* o_arch = train_cmd->add_option("--arch", arch, "architecture spec");
  auto* o_epochs = train_cmd->add_option("--epochs", epochs);
  auto* o_lr = train_cmd->add_option("--lr", lr);
  auto* o_batch = train_cmd->add_option("--batch-size", batch);
  auto* o_seed = train_cmd->add_option("--seed", seed);
  auto* o_precision = train_cmd->add_option("--precision", precision, "float or double");
  auto* o_optimizer = train_cmd->add_option("--optimizer", optimizer, "adam or sgd");
  auto* o_fusion = train_cmd->add_option("--fusion", fusion, "multiply or add");
  auto* o_kt = train_cmd->add_option("--k-t", k_t);
  auto* o_kc = train_cmd->add_option("--k-c", k_c);
  auto* o_surrogate = train_cmd->add_option("--surrogate", surrogate, "atan or triangle");
  auto* o_augment = train_cmd->add_option("--augment", augment, "true or false");
  auto* o_data_seed = train_cmd->add_option("--data-seed", data_seed);
  auto* o_train_samples = train_cmd->add_option("--train-samples", train_samples);
  auto* o_test_samples = train_cmd->add_option("--test-samples", test_samples);
  auto* o_manifest = train_cmd->add_option("--manifest", manifest, "single manifest, split 9:1");
  auto* o_train_manifest = train_cmd->add_option("--train-manifest", train_manifest);
  auto* o_test_manifest = train_cmd->add_option("--test-manifest", test_manifest);
  train_cmd->add_flag("--quiet", quiet, "no per-epoch log");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string ckpt_path, data_manifest, eval_config, predictions;
  eval_cmd->add_option("--checkpoint", ckpt_path)->required();
  eval_cmd->add_option("--data", data_manifest, "manifest to evaluate (default: the run's test split)");
  eval_cmd->add_option("--config", eval_config, "build the network from this config instead of the checkpoint's");
  eval_cmd->add_option("--output", predictions, "predictions CSV (default: predictions.csv next to the checkpoint)");

  // inspect-attention
  auto* inspect_cmd = app.add_subcommand("inspect-attention", "dump TCJA attention maps for one sample");
  std::size_t sample = 0, scale = 8;
  std::string inspect_dir;
  inspect_cmd->add_option("--checkpoint", ckpt_path)->required();
  inspect_cmd->add_option("--sample", sample, "index into the evaluation set");
  inspect_cmd->add_option("--data", data_manifest, "manifest to draw the sample from");
  inspect_cmd->add_option("--output", inspect_dir, "output directory (default: attention/ next to the checkpoint)");
  inspect_cmd->add_option("--pgm-scale", scale, "pixels per map entry")->check(CLI::PositiveNumber);

  // bench
  auto* bench_cmd = app.add_subcommand("bench", "time tla/cla/ccf over a grid of C, T, K");
  std::vector<std::size_t> b_channels{8, 16, 32, 64}, b_steps{8, 16}, b_kernels{2, 4};
  std::size_t repeats = 20;
  std::uint64_t bench_seed = 0;
  std::string bench_out = "bench.csv";
  bench_cmd->add_option("--channels", b_channels)->delimiter(',');
  bench_cmd->add_option("--steps", b_steps)->delimiter(',');
  bench_cmd->add_option("--kernels", b_kernels)->delimiter(',');
  bench_cmd->add_option("--repeats", repeats);
  bench_cmd->add_option("--seed", bench_seed);
  bench_cmd->add_option("--output", bench_out);

  // gen-synthetic
  auto* gen_cmd = app.add_subcommand("gen-synthetic", "write a moving-bar event dataset");
  SyntheticConfig sc;
  sc.samples = 500;
  sc.seed = 1;
  std::string gen_dir, gen_format = "bin";
  gen_cmd->add_option("--output", gen_dir)->required();
  gen_cmd->add_option("--classes", sc.classes);
  gen_cmd->add_option("--height", sc.height);
  gen_cmd->add_option("--width", sc.width);
  gen_cmd->add_option("--t-steps", sc.t_steps);
  gen_cmd->add_option("--samples", sc.samples);
  gen_cmd->add_option("--seed", sc.seed);
  gen_cmd->add_option("--noise", sc.noise);
  gen_cmd->add_option("--format", gen_format)->check(CLI::IsMember({"bin", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_code::kOk : exit_code::kConfig;
  }

  if (train_cmd->parsed()) {
    return guarded(err, [&] {
      RunConfig cfg;
      if (!config_path.empty()) {
        cfg = load_run_config(config_path);
      } else {
        cfg = parse_run_config("{}", fs::current_path());
      }
      const auto cwd = fs::current_path();
      if (o_output->count()) cfg.output_dir = output;
      if (o_arch->count()) cfg.network.arch = arch;
      if (o_epochs->count()) cfg.train.epochs = epochs;
      if (o_lr->count()) cfg.train.lr = lr;
      if (o_batch->count()) cfg.train.batch_size = batch;
      if (o_seed->count()) cfg.train.seed = seed;
      if (o_precision->count()) cfg.train.precision = precision;
      if (o_optimizer->count()) cfg.train.optimizer = parse_optimizer(optimizer);
      if (o_fusion->count()) cfg.network.fusion = parse_fusion(fusion);
      if (o_kt->count()) cfg.network.k_t = k_t;
      if (o_kc->count()) cfg.network.k_c = k_c;
      if (o_surrogate->count()) cfg.network.lif.surrogate = parse_surrogate(surrogate);
      if (o_augment->count()) cfg.train.augment = augment;
      if (o_data_seed->count()) cfg.data.seed = data_seed;
      if (o_train_samples->count()) cfg.data.train_samples = train_samples;
      if (o_test_samples->count()) cfg.data.test_samples = test_samples;
      if (o_manifest->count()) {
        cfg.data = DataConfig{};
        cfg.data.source = "manifest";
        cfg.data.manifest = resolve_path(manifest, cwd);
      }
      if (o_train_manifest->count() || o_test_manifest->count()) {
        cfg.data = DataConfig{};
        cfg.data.source = "manifest";
        cfg.data.train_manifest = resolve_path(train_manifest, cwd);
        cfg.data.test_manifest = resolve_path(test_manifest, cwd);
      }
      cfg.validate();
      fs::create_directories(cfg.output_dir);
      write_text(fs::path(cfg.output_dir) / "config.json", dump_run_config(cfg));
      return cfg.train.precision == "double" ? train_with<double>(cfg, quiet, out) : train_with<float>(cfg, quiet, out);
    });
  }

  auto load_for_checkpoint = [&](Checkpoint& ckpt, RunConfig& cfg) {
    ckpt = read_checkpoint(ckpt_path);
    cfg = checkpoint_config(ckpt);
    if (!eval_config.empty()) {
      cfg = load_run_config(eval_config);
      cfg.validate();
    }
  };
  const fs::path ckpt_dir = fs::path(ckpt_path).parent_path();

  if (eval_cmd->parsed()) {
    return guarded(err, [&] {
      Checkpoint ckpt;
      RunConfig cfg;
      load_for_checkpoint(ckpt, cfg);
      const auto samples = eval_samples(cfg, data_manifest);
      const fs::path pred = predictions.empty() ? ckpt_dir / "predictions.csv" : fs::path(predictions);
      return cfg.train.precision == "double" ? eval_with<double>(cfg, ckpt, samples, pred, out)
                                             : eval_with<float>(cfg, ckpt, samples, pred, out);
    });
  }

  if (inspect_cmd->parsed()) {
    return guarded(err, [&] {
      Checkpoint ckpt;
      RunConfig cfg;
      load_for_checkpoint(ckpt, cfg);
      {
        Network<float> probe(cfg.network, 0);
        if (probe.tcja_blocks() == 0) {
          err << "network '" << cfg.network.arch << "' has no TCJA block; there are no attention maps to inspect\n";
          return exit_code::kNoTcja;
        }
      }
      const auto samples = eval_samples(cfg, data_manifest);
      const fs::path dir = inspect_dir.empty() ? ckpt_dir / "attention" : fs::path(inspect_dir);
      return cfg.train.precision == "double" ? inspect_with<double>(cfg, ckpt, samples, sample, dir, scale, out)
                                             : inspect_with<float>(cfg, ckpt, samples, sample, dir, scale, out);
    });
  }

  if (bench_cmd->parsed()) {
    return guarded(err, [&] { return run_bench(b_channels, b_steps, b_kernels, repeats, bench_seed, bench_out, out); });
  }

  if (gen_cmd->parsed()) {
    return guarded(err, [&] {
      const auto data = gen_synthetic(sc);
      write_dataset(gen_dir, data, gen_format == "csv" ? EventFormat::kCsv : EventFormat::kBinary);
      out << "wrote " << data.streams.size() << " samples (" << sc.classes << " classes) to " << gen_dir
          << "/manifest.csv\n";
      return exit_code::kOk;
    });
  }
  return exit_code::kConfig;
}

}  // namespace tcja

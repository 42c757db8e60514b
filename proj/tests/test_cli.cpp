#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "tcja/cli.hpp"
#include "tcja/errors.hpp"

using namespace tcja;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "tcja");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

fs::path scratch(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / ("tcja_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

void put(const fs::path& p, const std::string& text) { std::ofstream(p, std::ios::binary) << text; }

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> split(const std::string& line, char sep = ',') {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, sep)) out.push_back(cell);
  return out;
}

std::string strip_timing(const std::string& csv) {
  std::string out;
  for (const auto& l : lines(csv)) out += l.substr(0, l.rfind(',')) + "\n";
  return out;
}

const char* kSmallRun = R"({
  "train": {"epochs": 2, "seed": 5, "batch_size": 8},
  "data": {"train_samples": 24, "test_samples": 12, "seed": 2}
})";

// Writes a checkpoint for `cfg` after letting `edit` change the weights.
template <typename Edit>
void checkpoint_for(const RunConfig& cfg, const fs::path& path, Edit edit) {
  Network<double> net(cfg.network, cfg.train.seed);
  edit(net);
  write_checkpoint(path, make_checkpoint<double>(net, nullptr, TrainState{}, dump_run_config(cfg, false)));
}

}  // namespace

TEST_CASE("run config: defaults, unknown keys, paths, round trip") {
  const auto base = fs::path("/data/runs");
  const RunConfig d = parse_run_config("{}", base);
  CHECK(d.network.arch == "16C3-LIF-MP2-TCJA-16C3-LIF-MP2-40FC-LIF-Voting");
  CHECK(d.data.source == "synthetic");
  CHECK_NOTHROW(d.validate());

  CHECK_THROWS_AS(parse_run_config(R"({"epochs": 3})", base), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"epoch": 3}})", base), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"lif": {"tau": 2, "leak": 1}})", base), ConfigError);
  CHECK_THROWS_AS(parse_run_config(R"({"train": {"lr": "fast"}})", base), ConfigError);
  CHECK_THROWS_AS(parse_run_config("{not json", base), ConfigError);
  try {
    parse_run_config(R"({"tcja": {"k_t": 2, "kt": 2}})", base);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("tcja.kt") != std::string::npos);
  }

  const RunConfig m = parse_run_config(R"({"data": {"source": "manifest", "manifest": "ds/manifest.csv"}})", base);
  CHECK(m.data.manifest == "/data/runs/ds/manifest.csv");
  RunConfig bad = m;
  bad.data.train_manifest = "x";
  bad.data.test_manifest = "y";
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  RunConfig c = parse_run_config(R"({
    "arch": "8C3-LIF-MP2-TCJA-8FC-LIF-Voting", "time_steps": 6, "num_classes": 2,
    "lif": {"tau": 3.0, "surrogate": "triangle", "detach_reset": false},
    "tcja": {"k_t": 2, "k_c": 3, "fusion": "add"},
    "train": {"lr": 0.01, "optimizer": "sgd", "precision": "double"},
    "output_dir": "somewhere"})",
                                 base);
  const std::string dumped = dump_run_config(c);
  CHECK(dump_run_config(parse_run_config(dumped, "/elsewhere")) == dumped);
  CHECK(dump_run_config(c, false).find("somewhere") == std::string::npos);
  CHECK(c.network.fusion == Fusion::kAdd);
  CHECK(c.network.lif.surrogate == Surrogate::kTriangle);
  CHECK(c.train.optimizer == OptimizerKind::kSgd);
}

TEST_CASE("train --epochs 0 writes a checkpoint and an empty history") {
  const auto dir = scratch("epochs0");
  put(dir / "run.json", kSmallRun);
  const auto r = cli({"train", "--config", (dir / "run.json").string(), "--epochs", "0", "--output",
                      (dir / "out").string(), "--quiet"});
  REQUIRE(r.code == 0);
  CHECK(slurp(dir / "out/metrics.csv") == "epoch,train_loss,test_acc,wall_seconds\n");
  CHECK(fs::exists(dir / "out/best.ckpt"));
  CHECK(fs::exists(dir / "out/last.ckpt"));
  const RunConfig echoed = load_run_config(dir / "out/config.json");
  CHECK(echoed.train.epochs == 0);  // flag overrides the file
  CHECK(echoed.train.seed == 5);
}

TEST_CASE("error exit codes") {
  const auto dir = scratch("errors");
  put(dir / "run.json", kSmallRun);
  const auto cfg = (dir / "run.json").string();

  SUBCASE("missing dataset path -> 2 naming the path") {
    const auto missing = (dir / "nowhere/manifest.csv").string();
    const auto r = cli({"train", "--config", cfg, "--manifest", missing, "--output", (dir / "o").string()});
    CHECK(r.code == exit_code::kData);
    CHECK(r.err.find(missing) != std::string::npos);
  }
  SUBCASE("unknown key -> 1") {
    put(dir / "bad.json", R"({"train": {"epochs": 1, "momentum": 0.9}})");
    const auto r = cli({"train", "--config", (dir / "bad.json").string()});
    CHECK(r.code == exit_code::kConfig);
    CHECK(r.err.find("train.momentum") != std::string::npos);
  }
  SUBCASE("bad arch and bad flag -> 1") {
    CHECK(cli({"train", "--config", cfg, "--arch", "16C3-LIFF", "--output", (dir / "o").string()}).code ==
          exit_code::kConfig);
    CHECK(cli({"train", "--config", cfg, "--epochs", "many"}).code == exit_code::kConfig);
    CHECK(cli({"frobnicate"}).code == exit_code::kConfig);
  }
  SUBCASE("diverging loss -> 3") {
    const auto r = cli({"train", "--config", cfg, "--arch", "4C3-LIF-MP2-4FC", "--lr", "1e300", "--precision",
                        "double", "--epochs", "3", "--output", (dir / "nan").string(), "--quiet"});
    CHECK(r.code == exit_code::kNumeric);
    CHECK(r.err.find("non-finite loss") != std::string::npos);
  }
  SUBCASE("corrupted checkpoint magic -> 4") {
    REQUIRE(cli({"train", "--config", cfg, "--epochs", "0", "--output", (dir / "c").string(), "--quiet"}).code == 0);
    std::string bytes = slurp(dir / "c/last.ckpt");
    bytes[0] = 'X';
    put(dir / "c/last.ckpt", bytes);
    CHECK(cli({"eval", "--checkpoint", (dir / "c/last.ckpt").string()}).code == exit_code::kCheckpoint);
    CHECK(cli({"eval", "--checkpoint", (dir / "c/none.ckpt").string()}).code == exit_code::kCheckpoint);
  }
  SUBCASE("checkpoint / arch mismatch -> 4") {
    REQUIRE(cli({"train", "--config", cfg, "--epochs", "0", "--output", (dir / "m").string(), "--quiet"}).code == 0);
    put(dir / "other.json", R"({"arch": "8C3-LIF-MP2-TCJA-8C3-LIF-MP2-40FC-LIF-Voting",
                               "data": {"train_samples": 24, "test_samples": 12}})");
    const auto r = cli({"eval", "--checkpoint", (dir / "m/last.ckpt").string(), "--config",
                        (dir / "other.json").string()});
    CHECK(r.code == exit_code::kCheckpoint);
  }
}

TEST_CASE("train is reproducible and eval reproduces the logged accuracy") {
  const auto dir = scratch("repro");
  put(dir / "run.json", kSmallRun);
  const auto cfg = (dir / "run.json").string();
  REQUIRE(cli({"train", "--config", cfg, "--output", (dir / "a").string(), "--quiet"}).code == 0);
  REQUIRE(cli({"train", "--config", cfg, "--output", (dir / "b").string(), "--quiet"}).code == 0);
  // Re-run from the echoed config.
  REQUIRE(cli({"train", "--config", (dir / "a/config.json").string(), "--output", (dir / "c").string(), "--quiet"})
              .code == 0);
  for (const char* run : {"b", "c"}) {
    CHECK(strip_timing(slurp(dir / "a/metrics.csv")) == strip_timing(slurp(dir / run / "metrics.csv")));
    CHECK(slurp(dir / "a/last.ckpt") == slurp(dir / run / "last.ckpt"));
    CHECK(slurp(dir / "a/best.ckpt") == slurp(dir / run / "best.ckpt"));
  }

  const auto metrics = lines(slurp(dir / "a/metrics.csv"));
  REQUIRE(metrics.size() == 3);
  const double logged = std::stod(split(metrics.back())[2]);
  const auto r = cli({"eval", "--checkpoint", (dir / "a/last.ckpt").string()});
  REQUIRE(r.code == 0);
  char expect[32];
  std::snprintf(expect, sizeof expect, "accuracy %.4f", logged);
  CHECK(r.out.find(expect) != std::string::npos);
  const auto pred = lines(slurp(dir / "a/predictions.csv"));
  REQUIRE(pred.size() == 12 + 1);
  CHECK(pred[0] == "sample_id,true,predicted,rate_0,rate_1,rate_2,rate_3");
  std::size_t correct = 0;
  for (std::size_t i = 1; i < pred.size(); ++i) {
    const auto cells = split(pred[i]);
    REQUIRE(cells.size() == 7);
    correct += cells[1] == cells[2];
  }
  CHECK(static_cast<double>(correct) / 12.0 == doctest::Approx(logged).epsilon(1e-12));
}

TEST_CASE("gen-synthetic then train from the manifest") {
  const auto dir = scratch("gen");
  REQUIRE(cli({"gen-synthetic", "--output", (dir / "ds").string(), "--samples", "40", "--seed", "9"}).code == 0);
  CHECK(lines(slurp(dir / "ds/manifest.csv")).size() == 40);
  const auto r = cli({"train", "--manifest", (dir / "ds/manifest.csv").string(), "--epochs", "1", "--output",
                      (dir / "run").string(), "--quiet"});
  REQUIRE(r.code == 0);
  const RunConfig echoed = load_run_config(dir / "run/config.json");
  CHECK(echoed.data.source == "manifest");
  CHECK(fs::path(echoed.data.manifest).is_absolute());
  // Eval on the whole manifest: one prediction per sample.
  REQUIRE(cli({"eval", "--checkpoint", (dir / "run/last.ckpt").string(), "--data",
               (dir / "ds/manifest.csv").string(), "--output", (dir / "p.csv").string()})
              .code == 0);
  CHECK(lines(slurp(dir / "p.csv")).size() == 41);
  CHECK(cli({"gen-synthetic", "--output", (dir / "bad").string(), "--classes", "3"}).code == exit_code::kConfig);
}

TEST_CASE("inspect-attention") {
  const auto dir = scratch("inspect");
  RunConfig cfg = parse_run_config(R"({"arch": "8C3-LIF-MP2-TCJA-8FC-LIF-Voting", "tcja": {"k_t": 3, "k_c": 2},
      "train": {"precision": "double", "seed": 4}, "data": {"train_samples": 8, "test_samples": 8, "seed": 6}})",
                                   dir);

  SUBCASE("no TCJA block -> 5") {
    RunConfig plain = cfg;
    plain.network.arch = "8C3-LIF-MP2-8FC-LIF-Voting";
    checkpoint_for(plain, dir / "plain.ckpt", [](Network<double>&) {});
    const auto r = cli({"inspect-attention", "--checkpoint", (dir / "plain.ckpt").string()});
    CHECK(r.code == exit_code::kNoTcja);
    CHECK(r.err.find("no TCJA block") != std::string::npos);
  }

  SUBCASE("zero kernels give a uniform 0.5 heatmap") {
    checkpoint_for(cfg, dir / "zero.ckpt", [](Network<double>& net) {
      net.find("layer0.weight")->value.fill(0.3);
      net.find("layer3.temporal")->value.fill(0.0);
      net.find("layer3.channel")->value.fill(0.0);
    });
    REQUIRE(cli({"inspect-attention", "--checkpoint", (dir / "zero.ckpt").string(), "--output",
                 (dir / "zero").string(), "--pgm-scale", "2"})
                .code == 0);
    const std::string pgm = slurp(dir / "zero/block0_layer3_F.pgm");
    const std::string header = "P5\n16 16\n255\n";  // T=8 columns, C=8 rows, scale 2
    REQUIRE(pgm.size() == header.size() + 256);
    CHECK(pgm.substr(0, header.size()) == header);
    for (std::size_t i = header.size(); i < pgm.size(); ++i) CHECK(static_cast<unsigned char>(pgm[i]) == 128);
  }

  SUBCASE("maps match the oracle pipeline on a firing network") {
    checkpoint_for(cfg, dir / "fire.ckpt", [](Network<double>& net) {
      for (auto& v : net.find("layer0.weight")->value.storage()) v *= 25.0;
    });
    const std::size_t sample = 3;
    REQUIRE(cli({"inspect-attention", "--checkpoint", (dir / "fire.ckpt").string(), "--sample",
                 std::to_string(sample), "--output", (dir / "fire").string()})
                .code == 0);

    Network<double> net(cfg.network, cfg.train.seed);
    restore_checkpoint(read_checkpoint(dir / "fire.ckpt"), net);
    const auto test = load_datasets(cfg).test;
    Tape<double> tape;
    ForwardCapture<double> cap;
    cap.keep_outputs = true;
    net.forward(tape, stack_frames<double>(test, {sample}), false, nullptr, &cap);
    const auto& x = cap.outputs[2];  // T x 1 x C x H x W entering the TCJA layer
    const std::size_t T = 8, C = 8, H = 8, W = 8;
    const oracle::Vec xv(x.values().begin(), x.values().end());
    const oracle::Vec wk(net.find("layer3.temporal")->value.values().begin(),
                         net.find("layer3.temporal")->value.values().end());
    const oracle::Vec ek(net.find("layer3.channel")->value.values().begin(),
                         net.find("layer3.channel")->value.values().end());
    const auto z = oracle::squeeze(xv, T, C, H, W);
    double zsum = 0;
    for (double v : z) zsum += v;
    REQUIRE(zsum > 0);  // the block sees spikes
    const auto tm = oracle::tla(z, C, T, wk, 3);
    const auto cm = oracle::cla(z, C, T, ek, 2);
    const auto f = oracle::ccf(tm, cm, true);

    const std::pair<const char*, const oracle::Vec*> expect[] = {{"T", &tm}, {"C", &cm}, {"F", &f}};
    for (const auto& [tag, ref] : expect) {
      const auto rows = lines(slurp(dir / "fire" / (std::string("block0_layer3_") + tag + ".csv")));
      REQUIRE(rows.size() == C);
      for (std::size_t i = 0; i < C; ++i) {
        const auto cells = split(rows[i]);
        REQUIRE(cells.size() == T);
        for (std::size_t j = 0; j < T; ++j) {
          const double v = std::stod(cells[j]);
          CHECK(std::abs(v - (*ref)[i * T + j]) <= 1e-12);
          if (std::string(tag) == "F") CHECK((v > 0.0 && v < 1.0));
        }
      }
    }
    CHECK(cli({"inspect-attention", "--checkpoint", (dir / "fire.ckpt").string(), "--sample", "99"}).code ==
          exit_code::kData);
  }
}

TEST_CASE("bench params column follows param_count") {
  const auto dir = scratch("bench");
  const auto r = cli({"bench", "--channels", "4,8,16", "--steps", "6,12", "--kernels", "2,3", "--repeats", "2",
                      "--output", (dir / "b.csv").string()});
  REQUIRE(r.code == 0);
  const auto rows = lines(slurp(dir / "b.csv"));
  REQUIRE(rows.size() == 1 + 3 * 2 * 2 * 3);
  CHECK(rows[0] == "c,t,k,op,nanos,params");
  std::map<std::tuple<std::size_t, std::size_t, std::size_t>, std::size_t> tla_params;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto cells = split(rows[i]);
    REQUIRE(cells.size() == 6);
    const std::size_t c = std::stoul(cells[0]), t = std::stoul(cells[1]), k = std::stoul(cells[2]);
    const auto pc = param_count(c, t, k, k);
    const std::size_t params = std::stoul(cells[5]);
    CHECK(std::stoll(cells[4]) > 0);
    if (cells[3] == "tla") {
      CHECK(params == pc.tla);
      tla_params[{c, t, k}] = params;
    } else if (cells[3] == "cla") {
      CHECK(params == pc.cla);
    } else {
      CHECK(cells[3] == "ccf");
      CHECK(params == 0);
    }
  }
  for (const auto& [key, p] : tla_params) {
    const auto [c, t, k] = key;
    if (tla_params.count({2 * c, t, k})) CHECK(tla_params[{2 * c, t, k}] == 4 * p);
  }
  CHECK(r.out.find("fc_baseline") != std::string::npos);
}

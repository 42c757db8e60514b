#include <random>

#include "arch_rows.hpp"
#include "doctest.h"
#include "gradcheck.hpp"
#include "oracles.hpp"
#include "tcja/network.hpp"

using namespace tcja;
using gradcheck::random_tensor;

namespace {


std::string error_of(const std::string& spec) {
  try {
    parse_arch(spec);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

NetworkConfig small_config(const std::string& arch) {
  NetworkConfig cfg;
  cfg.arch = arch;
  cfg.in_channels = 2;
  cfg.height = 8;
  cfg.width = 8;
  cfg.time_steps = 6;
  cfg.num_classes = 4;
  return cfg;
}

}  // namespace

TEST_CASE("parse_arch examples") {
  auto a = parse_arch("128C3-LIF-MP2");
  REQUIRE(a.layers.size() == 3);
  CHECK(a.layers[0] == LayerSpec{LayerKind::kConv, 128, 3, 0.0});
  CHECK(a.layers[1].kind == LayerKind::kLif);
  CHECK(a.layers[2] == LayerSpec{LayerKind::kMaxPool, 0, 2, 0.0});

  auto b = parse_arch("0.5DP-512FC-LIF");
  REQUIRE(b.layers.size() == 3);
  CHECK(b.layers[0] == LayerSpec{LayerKind::kDropout, 0, 0, 0.5});
  CHECK(b.layers[1] == LayerSpec{LayerKind::kFc, 512, 0, 0.0});

  auto c = parse_arch("16C3-LIF-AP2-TCJA-40FC-LIF-Voting");
  CHECK(c.layers[2].kind == LayerKind::kAvgPool);
  CHECK(c.layers[3].kind == LayerKind::kTcja);
  CHECK(c.layers[6].kind == LayerKind::kVoting);

  CHECK_THROWS_AS(parse_arch(""), ConfigError);
  CHECK(error_of("").find("empty") != std::string::npos);
}

TEST_CASE("parse_arch errors name the token and position") {
  auto msg = error_of("16C3-LIF-XP2-LIF");
  CHECK(msg.find("'XP2'") != std::string::npos);
  CHECK(msg.find("position 3") != std::string::npos);

  CHECK(error_of("abcC3-LIF").find("malformed numeric prefix") != std::string::npos);
  CHECK(error_of("1.5.2DP").find("malformed numeric prefix") != std::string::npos);
  CHECK(error_of("x12FC").find("malformed numeric prefix") != std::string::npos);
  CHECK(error_of("0C3").find("malformed numeric prefix") != std::string::npos);
  CHECK(error_of("1.5DP").find("< 1") != std::string::npos);
  CHECK(error_of("MPx").find("'MPx'") != std::string::npos);
  CHECK(error_of("16C3--LIF").find("position 2") != std::string::npos);
  CHECK(error_of("LIF-16C3").find("LIF must follow") != std::string::npos);
  CHECK(error_of("16C3-MP2-LIF").find("position 3") != std::string::npos);
}

TEST_CASE("published architecture rows parse and round-trip") {
  for (const auto& [row, count] : arch_rows::kRows) {
    auto spec = parse_arch(row);
    CHECK(spec.layers.size() == count);
    CHECK(render(spec) == row);
    CHECK(parse_arch(render(spec)) == spec);
  }
}

TEST_CASE("voting_layer examples") {
  Tape<double> tape;
  auto uniform = voting_layer(tape.leaf(Tensor<double>(Shape{3, 110}, 0.3)), 11);
  CHECK(uniform.shape() == Shape{3, 11});
  for (double v : uniform.value().values()) CHECK(v == doctest::Approx(0.3).epsilon(1e-12));

  Tensor<double> onehot(Shape{1, 40});
  for (std::size_t k = 20; k < 30; ++k) onehot[k] = 1.0;
  auto votes = voting_layer(tape.leaf(onehot), 4);
  CHECK(votes.value().storage() == std::vector<double>{0, 0, 1, 0});

  std::mt19937_64 rng(71);
  std::bernoulli_distribution coin(0.4);
  Tensor<double> spikes(Shape{5, 2, 30});
  for (auto& v : spikes.values()) v = coin(rng) ? 1.0 : 0.0;
  auto out = voting_layer(tape.leaf(spikes), 3);
  for (std::size_t row = 0; row < 10; ++row) {
    for (std::size_t cls = 0; cls < 3; ++cls) {
      double acc = 0;
      for (std::size_t k = 0; k < 10; ++k) acc += spikes[row * 30 + cls * 10 + k];
      CHECK(std::abs(out.value()[row * 3 + cls] - acc / 10) <= 1e-15);
    }
  }
  CHECK_THROWS_AS(voting_layer(tape.leaf(Tensor<double>(Shape{2, 10})), 3), ShapeError);
}

TEST_CASE("spiking_dropout examples") {
  std::mt19937_64 rng(73);
  Tape<double> tape;
  auto xt = random_tensor({5, 3, 4}, rng, 0.5, 1.5);
  auto x = tape.leaf(xt);

  auto mask0 = dropout_mask<double>(Shape{3, 4}, 0.0, rng);
  CHECK(spiking_dropout(x, 0.0, mask0, true).value() == xt);

  auto mask = dropout_mask<double>(Shape{3, 4}, 0.5, rng);
  CHECK(spiking_dropout(x, 0.5, mask, false).value() == xt);

  auto y = spiking_dropout(x, 0.5, mask, true);
  bool dropped = false, kept = false;
  for (std::size_t k = 0; k < 12; ++k) {
    const double first = y.value()[k] / xt[k];
    const double last = y.value()[4 * 12 + k] / xt[4 * 12 + k];
    CHECK(first == doctest::Approx(last).epsilon(1e-12));
    CHECK((first == doctest::Approx(0.0) || first == doctest::Approx(2.0)));
    dropped = dropped || first == 0.0;
    kept = kept || first > 0.0;
  }
  CHECK(dropped);
  CHECK(kept);

  CHECK_THROWS_AS(dropout_mask<double>(Shape{3}, 1.0, rng), ConfigError);
  CHECK_THROWS_AS(dropout_mask<double>(Shape{3}, -0.1, rng), ConfigError);
  CHECK_THROWS_AS(spiking_dropout(x, 0.5, Tensor<double>(Shape{4, 3}), true), ShapeError);
}

TEST_CASE("network with zero weights emits no spikes") {
  Network<double> net(small_config("4C3-LIF-MP2-TCJA-8C3-LIF-MP2-8FC-LIF-Voting"), 1);
  for (auto& p : net.parameters()) p.value.fill(0.0);
  std::mt19937_64 rng(75);
  Tape<double> tape;
  auto out = net.forward(tape, random_tensor({6, 3, 2, 8, 8}, rng, 0.0, 3.0), false);
  CHECK(out.shape() == Shape{6, 3, 4});
  for (double v : out.value().values()) CHECK(v == 0.0);
}

TEST_CASE("conv-LIF layer matches the composed conv and recurrence oracles") {
  NetworkConfig cfg = small_config("3C3-LIF-MP2-12FC-LIF-Voting");
  cfg.time_steps = 7;
  cfg.num_classes = 3;
  Network<double> net(cfg, 2);
  std::mt19937_64 rng(77);
  // Scale up the conv weights so neurons actually fire.
  for (auto& v : net.parameters()[0].value.values()) v *= 4.0;
  auto x = random_tensor({7, 2, 2, 8, 8}, rng, 0.0, 2.0);
  Tape<double> tape;
  ForwardCapture<double> cap;
  cap.keep_outputs = true;
  net.forward(tape, x, false, nullptr, &cap);

  std::size_t oh = 0, ow = 0;
  auto conv = oracle::conv2d(x.storage(), 14, 2, 8, 8, net.parameters()[0].value.storage(), 3, 3, 3, 1, 1, oh, ow);
  REQUIRE(oh == 8);
  const std::size_t per_step = 2 * 3 * 64;
  std::size_t fired = 0;
  for (std::size_t n = 0; n < per_step; ++n) {
    std::vector<double> drive(7);
    for (std::size_t t = 0; t < 7; ++t) drive[t] = conv[t * per_step + n];
    auto ref = oracle::lif(drive, 2.0, 0.0, 1.0);
    for (std::size_t t = 0; t < 7; ++t) {
      CHECK(std::abs(cap.outputs[0][t * per_step + n] - drive[t]) <= 1e-12);
      CHECK(cap.outputs[1][t * per_step + n] == ref.s[t]);
      fired += ref.s[t] > 0;
    }
  }
  CHECK(fired > 0);

  // Constant drive 1.5 reproduces the lif_sequence example per neuron.
  NetworkConfig one = small_config("1C1-LIF-MP2-1FC-LIF");
  one.in_channels = 1;
  one.height = one.width = 2;
  one.time_steps = 4;
  one.num_classes = 1;
  Network<double> unit(one, 3);
  unit.parameters()[0].value.fill(1.5);
  Tape<double> t2;
  ForwardCapture<double> c2;
  c2.keep_outputs = true;
  unit.forward(t2, Tensor<double>(Shape{4, 1, 1, 2, 2}, 1.0), false, nullptr, &c2);
  for (std::size_t t = 0; t < 4; ++t)
    for (std::size_t k = 0; k < 4; ++k) CHECK(c2.outputs[1][t * 4 + k] == (t % 2 == 1 ? 1.0 : 0.0));
}

TEST_CASE("zero-kernel TCJA halves the activations it feeds into pooling") {
  NetworkConfig with = small_config("4C3-LIF-TCJA-AP2-16FC-LIF-Voting");
  NetworkConfig without = small_config("4C3-LIF-AP2-16FC-LIF-Voting");
  Network<double> a(with, 5), b(without, 5);
  b.parameters()[0].value = a.parameters()[0].value;
  a.find("layer2.temporal")->value.fill(0.0);
  a.find("layer2.channel")->value.fill(0.0);
  std::mt19937_64 rng(79);
  auto x = random_tensor({6, 2, 2, 8, 8}, rng, 0.0, 3.0);
  Tape<double> tape;
  ForwardCapture<double> ca, cb;
  ca.keep_outputs = cb.keep_outputs = true;
  a.forward(tape, x, false, nullptr, &ca);
  b.forward(tape, x, false, nullptr, &cb);
  const auto& pooled_a = ca.outputs[3];
  const auto& pooled_b = cb.outputs[2];
  REQUIRE(pooled_a.shape() == pooled_b.shape());
  double mass = 0;
  for (std::size_t i = 0; i < pooled_a.size(); ++i) {
    CHECK(pooled_a[i] == 0.5 * pooled_b[i]);
    mass += pooled_b[i];
  }
  CHECK(mass > 0);
  for (double v : ca.f_maps[0].values()) CHECK(v == 0.5);
}

TEST_CASE("parameter counts follow the closed form") {
  NetworkConfig desk = small_config("16C3-LIF-MP2-TCJA-16C3-LIF-MP2-40FC-LIF-Voting");
  desk.height = desk.width = 16;
  desk.time_steps = 8;
  Network<float> net(desk, 1);
  const std::size_t conv = 16 * 2 * 9 + 16 * 16 * 9;
  const std::size_t fc = 16 * 4 * 4 * 40 + 40;
  const std::size_t tcja = 16 * 16 * 4 + 8 * 8 * 4;
  CHECK(net.parameter_count() == conv + fc + tcja);
  CHECK(net.tcja_parameter_count() == tcja);
  CHECK(net.tcja_blocks() == 1);

  // DVS128 row, 128x128 input, 11 classes via 110FC, T = 20.
  NetworkConfig dvs;
  dvs.arch = arch_rows::kDvs128;
  dvs.in_channels = 2;
  dvs.height = dvs.width = 128;
  dvs.time_steps = 20;
  dvs.num_classes = 10;
  Network<float> base(dvs, 1);
  const std::size_t base_count = 2 * 128 * 9 + 4 * 128 * 128 * 9 + (2048 * 512 + 512) + (512 * 100 + 100);
  CHECK(base.parameter_count() == base_count);
  CHECK(base_count == 1692516);

  // TCJA before the last two pooling layers.
  dvs.arch =
      "128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-MP2-128C3-LIF-TCJA-MP2-128C3-LIF-TCJA-MP2-0.5DP-512FC-LIF-0.5DP-"
      "100FC-LIF-Voting";
  Network<float> boosted(dvs, 1);
  const std::size_t per_block = 128 * 128 * 4 + 20 * 20 * 4;
  CHECK(boosted.parameter_count() - base_count == 2 * per_block);
  CHECK(boosted.tcja_parameter_count() == 2 * per_block);
  const double cla_pct = 100.0 * (2 * 20 * 20 * 4) / static_cast<double>(base_count);
  const double tla_pct = 100.0 * (2 * 128 * 128 * 4) / static_cast<double>(base_count);
  CHECK(cla_pct == doctest::Approx(0.189).epsilon(0.005));
  CHECK(tla_pct == doctest::Approx(7.744).epsilon(0.0005));
}

TEST_CASE("build and forward report the failing layer") {
  auto build_error = [](const std::string& arch) -> std::string {
    try {
      Network<double> net(small_config(arch), 1);
    } catch (const std::exception& e) {
      return e.what();
    }
    return "";
  };
  CHECK(build_error("4C3-LIF-MP3-8FC-LIF-Voting").find("layer 2") != std::string::npos);
  CHECK(build_error("4C3-LIF-MP2-6FC-LIF-Voting").find("layer 5") != std::string::npos);
  CHECK(build_error("4C3-LIF-MP2-8FC-LIF").find("expected 4") != std::string::npos);
  CHECK(build_error("8FC-LIF-TCJA-4FC-LIF").find("layer 2") != std::string::npos);

  NetworkConfig cfg = small_config("4C3-LIF-MP2-8FC-LIF-Voting");
  Network<double> net(cfg, 1);
  Tape<double> tape;
  CHECK_THROWS_AS(net.forward(tape, Tensor<double>(Shape{6, 1, 2, 8, 7}), false), ShapeError);
  CHECK_THROWS_AS(net.forward(tape, Tensor<double>(Shape{5, 1, 2, 8, 8}), false), ShapeError);
}

TEST_CASE("outputs are binary, deterministic, and trainable") {
  NetworkConfig cfg = small_config("4C3-LIF-MP2-TCJA-0.3DP-8C3-LIF-MP2-0.5DP-4FC-LIF");
  Network<double> net(cfg, 9);
  std::mt19937_64 data_rng(81);
  auto x = random_tensor({6, 2, 2, 8, 8}, data_rng, 0.0, 4.0);
  std::vector<Tensor<double>> runs;
  for (int r = 0; r < 2; ++r) {
    std::mt19937_64 rng(5);
    Tape<double> tape;
    auto out = net.forward(tape, x, true, &rng);
    for (double v : out.value().values()) CHECK((v == 0.0 || v == 1.0));
    runs.push_back(out.value());
    net.zero_grad();
    tape.backward(sum(out));
    for (const auto& p : net.parameters()) CHECK(p.grad_ready);
  }
  CHECK(runs[0] == runs[1]);

  Tape<double> tape;
  ForwardCapture<double> cap;
  net.forward(tape, x, false, nullptr, &cap);
  CHECK(cap.lif_layers == std::vector<std::size_t>{1, 6, 10});
  CHECK(cap.tcja_layers == std::vector<std::size_t>{3});
  CHECK(cap.f_maps[0].shape() == Shape{2, 4, 6});
  for (double r : cap.firing_rates) CHECK((r >= 0.0 && r <= 1.0));
}

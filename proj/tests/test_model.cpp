#include <cmath>
#include <fstream>

#include <doctest.h>

#include "support.hpp"
#include "toolgcn/error.hpp"
#include "toolgcn/gradcheck.hpp"
#include "toolgcn/model.hpp"
#include "toolgcn/pipeline.hpp"

using namespace toolgcn;
using namespace testutil;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.channels = {4, 4, 8};
  c.strides = {1, 1, 2};
  return c;
}

Tensor random_batch(const ModelConfig& c, std::size_t n, std::size_t t, Rng& rng) {
  return random_tensor({n, c.in_channels, t, c.joints, c.instances}, rng, 0.5);
}

// Swaps the two tool instances of every sample.
Tensor swap_instances(const Tensor& b) {
  Tensor out = b;
  const std::size_t M = b.dim(4);
  const std::size_t rows = b.size() / M;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t m = 0; m < M; ++m) out[r * M + m] = b[r * M + (M - 1 - m)];
  return out;
}

// Gives every normalization layer non-trivial running statistics.
void randomize_stats(ModelParams& p, Rng& rng) {
  for (auto& e : p.entries()) {
    if (e.name.ends_with("running_mean"))
      for (double& x : e.value.data()) x = 0.2 * rng.normal();
    if (e.name.ends_with("running_var"))
      for (double& x : e.value.data()) x = rng.uniform(0.5, 2.0);
    if (e.name.ends_with(".gamma") || e.name.ends_with(".beta"))
      for (double& x : e.value.data()) x += 0.1 * rng.normal();
  }
}

double eval_bn(double x, double mean, double var, double gamma, double beta) {
  return (x - mean) / std::sqrt(var + 1e-5) * gamma + beta;
}

}  // namespace

TEST_CASE("identity unit reduces to the activation") {
  Rng rng(51);
  const std::size_t C = 3;
  Tensor x = random_tensor({2, C, 6, 5}, rng);
  Tensor gw({1, C, C}), tw({C, C, 1, 1});
  for (std::size_t c = 0; c < C; ++c) {
    gw.at({0, c, c}) = 1.0;
    tw.at({c, c, 0, 0}) = 1.0;
  }
  UnitConfig u{C, C, 1, 1, false, false, 0.0};
  Tape tape;
  UnitParams p;
  p.gcn_weight = tape.constant(gw);
  p.tcn_weight = tape.constant(tw);
  Tensor eye({1, 5, 5});
  for (std::size_t v = 0; v < 5; ++v) eye.at({0, v, v}) = 1.0;
  const Tensor y = tape.value(stgcn_unit_forward(tape, tape.constant(x), eye, u, p, {}));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
}

TEST_CASE("strided unit halves the time axis") {
  ModelConfig c;
  c.channels = {4, 8};
  c.strides = {1, 2};
  StgcnModel model(c, default_tool_skeleton(), 3);
  Tape tape(false);
  auto bound = model.bind(tape);
  Rng rng(52);
  Var x = tape.constant(random_tensor({2, 4, 90, 5}, rng));
  const auto units = c.units();
  UnitParams p;
  p.gcn_weight = tape.constant(Tensor({3, 8, 4}, 0.1));
  p.tcn_weight = tape.constant(Tensor({8, 8, 9, 1}, 0.1));
  p.res_weight = tape.constant(Tensor({8, 4, 1, 1}, 0.1));
  UnitConfig u = units[1];
  u.batch_norm = false;
  const Tensor y = tape.value(stgcn_unit_forward(tape, x, model.graph().static_stack, u, p, {}));
  CHECK(y.shape() == Shape{2, 8, 45, 5});
  CHECK_THROWS_AS(stgcn_unit_forward(tape, x, Tensor({3, 4, 4}), u, p, {}), ValidationError);
}

TEST_CASE("unit gradients pass the gradient check") {
  Rng rng(53);
  const Tensor x = random_tensor({2, 3, 12, 5}, rng);
  const GraphContext g = GraphContext::make(default_tool_skeleton(), PartitionConfig{});
  for (bool shapes_differ : {false, true}) {
    const std::size_t Co = shapes_differ ? 4 : 3, stride = shapes_differ ? 2 : 1;
    UnitConfig u{3, Co, 5, stride, true, true, 0.0};
    std::vector<NamedTensor> params{{"x", x},
                                    {"gcn", random_tensor({3, Co, 3}, rng, 0.5)},
                                    {"tcn", random_tensor({Co, Co, 5, 1}, rng, 0.3)},
                                    {"g1", random_tensor({Co}, rng)},
                                    {"b1", random_tensor({Co}, rng)},
                                    {"g2", random_tensor({Co}, rng)},
                                    {"b2", random_tensor({Co}, rng)}};
    if (shapes_differ) {
      params.push_back({"res", random_tensor({Co, 3, 1, 1}, rng)});
      params.push_back({"rg", random_tensor({Co}, rng)});
      params.push_back({"rb", random_tensor({Co}, rng)});
    }
    const ScalarFunction f = [&](Tape& t, std::span<const Var> v) {
      UnitParams p;
      p.gcn_weight = v[1];
      p.tcn_weight = v[2];
      p.bn1_gamma = v[3];
      p.bn1_beta = v[4];
      p.bn2_gamma = v[5];
      p.bn2_beta = v[6];
      if (shapes_differ) {
        p.res_weight = v[7];
        p.res_gamma = v[8];
        p.res_beta = v[9];
      }
      ForwardOptions o;
      o.mode = ops::Mode::kTrain;
      return weighted_sum(t, stgcn_unit_forward(t, v[0], g.static_stack, u, p, o));
    };
    GradCheckOptions opts;
    opts.tol = 1e-4;
    const GradCheckReport r = grad_check(f, params, opts);
    CHECK_MESSAGE(r.passed, r.summary());
  }
}

TEST_CASE("identity adjacency makes the unit a per-joint temporal network") {
  // Independent reference: channel mix, eval normalization, ReLU, direct
  // temporal convolution, eval normalization, 1x1 residual, ReLU, per joint.
  Rng rng(54);
  const std::size_t B = 2, C = 3, O = 4, T = 11, V = 5, K = 5, S = 2;
  const Tensor x = random_tensor({B, C, T, V}, rng);
  const Tensor gw = random_tensor({1, O, C}, rng), tw = random_tensor({O, O, K, 1}, rng);
  const Tensor rw = random_tensor({O, C, 1, 1}, rng);
  auto stats = [&] {
    ops::BatchNormStats s{random_tensor({O}, rng, 0.3), Tensor({O})};
    for (double& v : s.var.data()) v = rng.uniform(0.5, 2.0);
    return s;
  };
  ops::BatchNormStats s1 = stats(), s2 = stats(), s3 = stats();
  const Tensor g1 = random_tensor({O}, rng), b1 = random_tensor({O}, rng), g2 = random_tensor({O}, rng),
               b2 = random_tensor({O}, rng), g3 = random_tensor({O}, rng), b3 = random_tensor({O}, rng);

  Tensor eye({1, V, V});
  for (std::size_t v = 0; v < V; ++v) eye.at({0, v, v}) = 1.0;
  UnitConfig u{C, O, K, S, true, true, 0.0};
  Tape tape(false);
  UnitParams p;
  p.gcn_weight = tape.constant(gw);
  p.tcn_weight = tape.constant(tw);
  p.res_weight = tape.constant(rw);
  p.bn1_gamma = tape.constant(g1), p.bn1_beta = tape.constant(b1), p.bn1_stats = &s1;
  p.bn2_gamma = tape.constant(g2), p.bn2_beta = tape.constant(b2), p.bn2_stats = &s2;
  p.res_gamma = tape.constant(g3), p.res_beta = tape.constant(b3), p.res_stats = &s3;
  const Tensor y = tape.value(stgcn_unit_forward(tape, tape.constant(x), eye, u, p, {}));

  const std::size_t To = (T - 1) / S + 1;
  REQUIRE(y.shape() == Shape{B, O, To, V});
  double worst = 0.0;
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t v = 0; v < V; ++v) {
      std::vector<std::vector<double>> h(O, std::vector<double>(T));
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t t = 0; t < T; ++t) {
          double acc = 0.0;
          for (std::size_t c = 0; c < C; ++c) acc += gw.at({0, o, c}) * x.at({b, c, t, v});
          h[o][t] = std::max(0.0, eval_bn(acc, s1.mean[o], s1.var[o], g1[o], b1[o]));
        }
      for (std::size_t o = 0; o < O; ++o)
        for (std::size_t t = 0; t < To; ++t) {
          double acc = 0.0;
          for (std::size_t i = 0; i < O; ++i)
            for (std::size_t k = 0; k < K; ++k) {
              const long src = static_cast<long>(t * S + k) - static_cast<long>((K - 1) / 2);
              if (src >= 0 && src < static_cast<long>(T)) acc += tw.at({o, i, k, 0}) * h[i][src];
            }
          double res = 0.0;
          for (std::size_t c = 0; c < C; ++c) res += rw.at({o, c, 0, 0}) * x.at({b, c, t * S, v});
          const double want = std::max(0.0, eval_bn(acc, s2.mean[o], s2.var[o], g2[o], b2[o]) +
                                                eval_bn(res, s3.mean[o], s3.var[o], g3[o], b3[o]));
          worst = std::max(worst, std::abs(want - y.at({b, o, t, v})));
        }
    }
  CHECK(worst <= 1e-9);
}

TEST_CASE("uniform single-partition model runs") {
  ModelConfig c = small_config();
  c.graph.strategy = PartitionStrategy::kUniform;
  StgcnModel model(c, default_tool_skeleton(), 4);
  CHECK(model.params().at("unit1.gcn.weight").dim(0) == 1);
  Rng rng(55);
  const Tensor logits = model.predict(random_batch(c, 3, 16, rng));
  CHECK(logits.shape() == Shape{3, 10});
  CHECK(logits.all_finite());
}

TEST_CASE("default model forward") {
  const ModelConfig c;
  REQUIRE(c.channels.size() == 9);
  StgcnModel model(c, default_tool_skeleton(), 5);
  Rng rng(56);
  const Tensor batch = random_batch(c, 2, 90, rng);
  const Tensor a = model.predict(batch);
  CHECK(a.shape() == Shape{2, 10});
  CHECK(a.all_finite());
  CHECK(model.predict(batch) == a);
  // Same sample twice in a batch gives identical rows.
  Tensor twice({2, 3, 90, 5, 2});
  const std::size_t block = twice.size() / 2;
  std::copy(batch.ptr(), batch.ptr() + block, twice.ptr());
  std::copy(batch.ptr(), batch.ptr() + block, twice.ptr() + block);
  const Tensor b = model.predict(twice);
  for (std::size_t k = 0; k < 10; ++k) CHECK(b.at({0, k}) == b.at({1, k}));
}

TEST_CASE("logits are invariant under swapping the tool instances") {
  for (auto mode : {PartitionMode::kStatic, PartitionMode::kPerFrame}) {
    ModelConfig c = small_config();
    c.graph.mode = mode;
    StgcnModel model(c, default_tool_skeleton(), 6);
    Rng rng(57);
    randomize_stats(model.params(), rng);
    for (int trial = 0; trial < 5; ++trial) {
      const Tensor batch = random_batch(c, 4, 20, rng);
      const Tensor a = model.predict(batch), b = model.predict(swap_instances(batch));
      CHECK(max_abs_diff(a, b) <= 1e-12);
      for (std::size_t n = 0; n < 4; ++n) {
        std::vector<double> ra(a.ptr() + n * 10, a.ptr() + n * 10 + 10), rb(b.ptr() + n * 10, b.ptr() + n * 10 + 10);
        CHECK(std::max_element(ra.begin(), ra.end()) - ra.begin() == std::max_element(rb.begin(), rb.end()) - rb.begin());
      }
    }
  }
}

TEST_CASE("per-frame partitioning changes the network function") {
  ModelConfig c = small_config();
  StgcnModel fixed(c, default_tool_skeleton(), 7);
  c.graph.mode = PartitionMode::kPerFrame;
  StgcnModel moving(c, default_tool_skeleton(), 7);
  Rng rng(58);
  const Tensor batch = random_batch(c, 2, 10, rng);
  CHECK(max_abs_diff(fixed.predict(batch), moving.predict(batch)) > 1e-6);
}

TEST_CASE("end-to-end gradients of a small model") {
  for (auto mode : {PartitionMode::kStatic, PartitionMode::kPerFrame}) {
    ModelConfig c = small_config();
    c.graph.mode = mode;
    GradCheckConfig g;
    g.max_elements = 0;
    const GradCheckReport r = model_grad_check(c, default_tool_skeleton(), g, 12);
    CHECK_MESSAGE(r.passed, r.summary());
    CHECK(r.checked + r.kinks == StgcnModel(c, default_tool_skeleton(), 1).params().trainable_count());
    CHECK(r.kinks * 100 < r.checked);
  }
}

TEST_CASE("initialization") {
  const ModelConfig c;
  const ModelParams p = init_params(c, 9);
  CHECK(p == init_params(c, 9));
  CHECK_FALSE(p == init_params(c, 10));
  CHECK(p.at("input_bn.gamma").shape() == Shape{15});
  CHECK(p.at("unit1.gcn.weight").shape() == Shape{3, 64, 3});
  CHECK(p.at("unit4.tcn.weight").shape() == Shape{128, 128, 9, 1});
  CHECK(p.contains("unit4.res.weight"));
  CHECK_FALSE(p.contains("unit5.res.weight"));
  CHECK_FALSE(p.contains("unit1.res.weight"));
  CHECK(p.at("head.weight").shape() == Shape{10, 256});
  // He-normal spread of the largest temporal kernel.
  const Tensor& w = p.at("unit8.tcn.weight");
  double sq = 0.0;
  for (double x : w.data()) sq += x * x;
  CHECK(std::sqrt(sq / w.size()) == doctest::Approx(std::sqrt(2.0 / (256 * 9))).epsilon(0.01));
  const double bound = 1.0 / std::sqrt(256.0);
  for (double x : p.at("head.weight").data()) CHECK(std::abs(x) <= bound);
  for (double x : p.at("unit2.bn1.running_var").data()) CHECK(x == 1.0);
}

TEST_CASE("model config JSON") {
  ModelConfig c = small_config();
  c.graph.normalization = Normalization::kSymmetric;
  const ModelConfig back = ModelConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.digest() == c.digest());
  CHECK(ModelConfig{}.digest() != c.digest());
  nlohmann::json j = c.to_json();
  j["graph"]["alhpa"] = 0.1;
  CHECK_THROWS_WITH_AS(ModelConfig::from_json(j), doctest::Contains("alhpa"), ValidationError);
  j = c.to_json();
  j["temporal_kernel"] = 4;
  CHECK_THROWS_AS(ModelConfig::from_json(j), ValidationError);
}

TEST_CASE("non-finite activations name their location") {
  ModelConfig c = small_config();
  StgcnModel model(c, default_tool_skeleton(), 8);
  Rng rng(59);
  Tensor batch = random_batch(c, 2, 12, rng);
  model.params().at("unit2.tcn.weight")[3] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_WITH_AS(model.predict(batch), doctest::Contains("unit 2"), NumericalError);
  StgcnModel clean(c, default_tool_skeleton(), 8);
  batch[5] = std::nan("");
  CHECK_THROWS_WITH_AS(clean.predict(batch), doctest::Contains("input normalization"), NumericalError);
}

TEST_CASE("parameter files") {
  TempDir dir("params");
  const ModelConfig c = small_config();
  StgcnModel model(c, default_tool_skeleton(), 11);
  Rng rng(60);
  randomize_stats(model.params(), rng);
  save_params(model.params(), c, dir / "p.bin");
  CHECK(load_params(dir / "p.bin", c) == model.params());
  CHECK(read_params_config(dir / "p.bin").to_json() == c.to_json());
  CHECK_FALSE(std::filesystem::exists(dir / "p.bin.tmp"));

  SUBCASE("wrong joint count") {
    ModelConfig other = c;
    other.joints = 6;
    CHECK_THROWS_WITH_AS(load_params(dir / "p.bin", other), doctest::Contains("joints"), ValidationError);
  }
  SUBCASE("corrupted byte") {
    std::string bytes = read_file(dir / "p.bin");
    bytes[bytes.size() / 2] ^= 0x01;
    std::ofstream(dir / "bad.bin", std::ios::binary) << bytes;
    CHECK_THROWS_WITH_AS(load_params(dir / "bad.bin", c), doctest::Contains("checksum"), IoError);
  }
  SUBCASE("bad magic") {
    std::string bytes = read_file(dir / "p.bin");
    bytes[0] = 'X';
    std::ofstream(dir / "bad.bin", std::ios::binary) << bytes;
    CHECK_THROWS_AS(load_params(dir / "bad.bin", c), IoError);
  }
  SUBCASE("truncated") {
    std::string bytes = read_file(dir / "p.bin");
    std::ofstream(dir / "bad.bin", std::ios::binary) << bytes.substr(0, bytes.size() - 20);
    CHECK_THROWS_AS(load_params(dir / "bad.bin", c), IoError);
  }
  SUBCASE("missing") { CHECK_THROWS_AS(load_params(dir / "none.bin", c), IoError); }
}

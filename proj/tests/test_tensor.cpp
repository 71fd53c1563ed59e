#include "doctest.h"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "momaplan/tensor.hpp"

using namespace momaplan::ad;

namespace {

using Builder = std::function<Var<double>(Tape<double>&, ParamSet<double>&)>;

// Largest relative mismatch between tape gradients and central differences.
double gradient_error(ParamSet<double>& params, const Builder& build, double h = 1e-6) {
  params.zero_grad();
  Tape<double> tape;
  tape.backward(build(tape, params));
  double worst = 0.0;
  for (auto& p : params.all()) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      Tape<double> tp(false);
      const double fp = build(tp, params).item();
      p.value[i] = keep - h;
      Tape<double> tm(false);
      const double fm = build(tm, params).item();
      p.value[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      worst = std::max(worst, std::abs(fd - p.grad[i]) / std::max(1.0, std::abs(fd)));
    }
  }
  return worst;
}

ParamSet<double> random_params(std::uint64_t seed, const std::vector<std::pair<std::string, Shape>>& spec) {
  std::mt19937_64 rng(seed);
  ParamSet<double> ps;
  for (const auto& [name, shape] : spec) ps.add_uniform(name, shape, 1.0, rng);
  return ps;
}

// Weighted sum so every output element gets a distinct upstream gradient.
template <typename T>
Var<T> probe(Tape<T>& tape, const Var<T>& x) {
  std::vector<T> w(x.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(0.3 + 0.17 * std::sin(1.7 * i));
  return sum(mul(x, tape.constant(x.shape(), w)));
}

}  // namespace

TEST_CASE("per-op gradients match central differences") {
  auto ps = random_params(1, {{"a", {4, 6}}, {"b", {6, 3}}, {"c", {4, 6}}, {"r", {6}}, {"g", {6}}, {"s", {1}},
                               {"e", {5, 6}}, {"k", {7, 6}}});
  const std::vector<std::pair<const char*, Builder>> ops = {
      {"matmul", [](auto& t, auto& p) { return probe(t, matmul(t.param(p.get("a")), t.param(p.get("b")))); }},
      {"matmul_nt", [](auto& t, auto& p) { return probe(t, matmul_nt(t.param(p.get("a")), t.param(p.get("k")))); }},
      {"add", [](auto& t, auto& p) { return probe(t, add(t.param(p.get("a")), t.param(p.get("c")))); }},
      {"add_bcast", [](auto& t, auto& p) { return probe(t, add(t.param(p.get("a")), t.param(p.get("r")))); }},
      {"sub", [](auto& t, auto& p) { return probe(t, sub(t.param(p.get("a")), t.param(p.get("r")))); }},
      {"mul", [](auto& t, auto& p) { return probe(t, mul(t.param(p.get("a")), t.param(p.get("c")))); }},
      {"mul_scalar", [](auto& t, auto& p) { return probe(t, mul(t.param(p.get("a")), t.param(p.get("s")))); }},
      {"scale", [](auto& t, auto& p) { return probe(t, add_scalar(scale(t.param(p.get("a")), -2.5), 0.3)); }},
      {"square", [](auto& t, auto& p) { return probe(t, square(t.param(p.get("a")))); }},
      {"relu", [](auto& t, auto& p) { return probe(t, relu(t.param(p.get("a")))); }},
      {"gelu", [](auto& t, auto& p) { return probe(t, gelu(t.param(p.get("a")))); }},
      {"exp_log", [](auto& t, auto& p) { return probe(t, log(add_scalar(exp(t.param(p.get("a"))), 1.0))); }},
      {"softmax", [](auto& t, auto& p) { return probe(t, softmax(t.param(p.get("a")))); }},
      {"layer_norm",
       [](auto& t, auto& p) {
         return probe(t, layer_norm(t.param(p.get("a")), t.param(p.get("g")), t.param(p.get("r"))));
       }},
      {"concat0", [](auto& t, auto& p) { return probe(t, concat<double>({t.param(p.get("a")), t.param(p.get("e"))}, 0)); }},
      {"concat1",
       [](auto& t, auto& p) { return probe(t, concat<double>({t.param(p.get("a")), t.param(p.get("c"))}, 1)); }},
      {"slice0", [](auto& t, auto& p) { return probe(t, slice(t.param(p.get("a")), 0, 1, 3)); }},
      {"slice1", [](auto& t, auto& p) { return probe(t, slice(t.param(p.get("a")), 1, 2, 5)); }},
      {"transpose", [](auto& t, auto& p) { return probe(t, transpose(t.param(p.get("a")))); }},
      {"reshape", [](auto& t, auto& p) { return probe(t, reshape(t.param(p.get("a")), {3, 8})); }},
      {"embedding", [](auto& t, auto& p) { return probe(t, embedding(t.param(p.get("e")), {4, 0, 4, 2})); }},
      {"mean", [](auto& t, auto& p) { return scale(mean(square(t.param(p.get("a")))), 3.0); }},
      {"mean_rows", [](auto& t, auto& p) { return probe(t, mean_rows(t.param(p.get("a")))); }},
      {"group_max",
       [](auto& t, auto& p) { return probe(t, group_max(t.param(p.get("k")), {0, 1, 0, 2, 1, 0, 2}, 4)); }},
      {"element", [](auto& t, auto& p) { return mul(element(t.param(p.get("a")), 7), element(t.param(p.get("c")), 3)); }},
      {"external",
       [](auto& t, auto& p) {
         auto x = t.param(p.get("r"));
         double v = 0.0;
         std::vector<double> g(6);
         for (int i = 0; i < 6; ++i) {
           v += std::sin(x.value()[i]);
           g[i] = std::cos(x.value()[i]);
         }
         return external_scalar(x, v, g);
       }},
  };
  for (const auto& [name, build] : ops) {
    INFO(name);
    CHECK(gradient_error(ps, build) < 1e-6);
  }
}

TEST_CASE("random graphs up to depth six match finite differences") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 60; ++trial) {
    const int depth = 1 + trial % 6;
    std::vector<int> ops(depth);
    for (auto& o : ops) o = static_cast<int>(rng() % 9);
    auto ps = random_params(100 + trial, {{"x", {5, 4}}, {"w", {4, 4}}, {"b", {4}}, {"g", {4}}, {"y", {5, 4}}});
    Builder build = [ops](Tape<double>& t, ParamSet<double>& p) {
      Var<double> x = t.param(p.get("x"));
      const Var<double> w = t.param(p.get("w")), b = t.param(p.get("b")), g = t.param(p.get("g")),
                        y = t.param(p.get("y"));
      for (int o : ops) {
        switch (o) {
          case 0: x = matmul(x, w); break;
          case 1: x = add(x, b); break;
          case 2: x = gelu(x); break;
          case 3: x = softmax(x); break;
          case 4: x = layer_norm(x, g, b); break;
          case 5: x = mul(x, y); break;
          case 6: x = transpose(matmul_nt(w, x)); break;
          case 7: x = sub(x, scale(y, 0.5)); break;
          default: x = slice(concat<double>({x, y}, 1), 1, 2, 6); break;
        }
      }
      return probe(t, x);
    };
    INFO("trial " << trial);
    CHECK(gradient_error(ps, build) < 1e-6);
  }
}

TEST_CASE("f32 gradients agree with the f64 shadow") {
  std::mt19937_64 rng(3);
  ParamSet<float> pf;
  pf.add_uniform("w1", {6, 8}, 0.5, rng);
  pf.add_uniform("b1", {8}, 0.5, rng);
  pf.add_uniform("w2", {8, 3}, 0.5, rng);
  pf.add_constant("g", {8}, 1.0);
  pf.add_constant("z", {8}, 0.0);
  std::vector<float> xin(4 * 6);
  for (auto& v : xin) v = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
  auto net = [&xin](auto& t, auto& p) {
    using T = typename std::decay_t<decltype(p.all().front().value)>::value_type;
    auto x = t.constant({4, 6}, std::vector<T>(xin.begin(), xin.end()));
    auto h = gelu(layer_norm(add(matmul(x, t.param(p.get("w1"))), t.param(p.get("b1"))), t.param(p.get("g")),
                             t.param(p.get("z"))));
    return mean(square(softmax(matmul(h, t.param(p.get("w2"))))));
  };
  Tape<float> tape;
  tape.backward(net(tape, pf));
  ParamSet<double> pd = pf.cast<double>();
  const double h = 1e-3;
  for (auto& p : pd.all()) {
    const auto& gf = pf.get(p.name).grad;
    double gmax = 0.0;
    for (float v : gf) gmax = std::max(gmax, std::abs(static_cast<double>(v)));
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double keep = p.value[i];
      p.value[i] = keep + h;
      Tape<double> a(false);
      const double fp = net(a, pd).item();
      p.value[i] = keep - h;
      Tape<double> b(false);
      const double fm = net(b, pd).item();
      p.value[i] = keep;
      const double fd = (fp - fm) / (2 * h);
      CHECK(std::abs(fd - gf[i]) <= 1e-3 * std::max(gmax, 1e-3));
    }
  }
}

TEST_CASE("softmax rows and group max invariance") {
  Tape<float> t(false);
  std::vector<float> v(3 * 5);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(10.0 * std::sin(i * 1.3));
  const auto s = softmax(t.constant({3, 5}, v));
  for (int r = 0; r < 3; ++r) {
    double acc = 0.0;
    for (int j = 0; j < 5; ++j) acc += s.value()[r * 5 + j];
    CHECK(std::abs(acc - 1.0) < 1e-6);
  }
  std::vector<float> pts{1, 9, 2, 3, -4, 5, 7, 0};
  std::vector<float> perm{7, 0, -4, 5, 2, 3, 1, 9};
  const auto a = group_max(t.constant({4, 2}, pts), {0, 1, 0, 1}, 3);
  const auto b = group_max(t.constant({4, 2}, perm), {1, 0, 1, 0}, 3);
  CHECK(a.value() == b.value());
  CHECK(a.value()[4] == 0.0f);
}

TEST_CASE("shape errors are reported") {
  Tape<double> t;
  const auto a = t.input({2, 3}, std::vector<double>(6, 1.0));
  const auto b = t.input({2, 3}, std::vector<double>(6, 1.0));
  CHECK_THROWS_AS(matmul(a, b), std::invalid_argument);
  CHECK_THROWS_AS(add(a, t.input({2}, {1.0, 2.0})), std::invalid_argument);
  CHECK_THROWS_AS(slice(a, 1, 2, 5), std::invalid_argument);
  CHECK_THROWS_AS(t.input({2, 2}, {1.0}), std::invalid_argument);
}

TEST_CASE("adam update rules") {
  AdamConfig cfg;
  cfg.lr = 1e-2;
  ParamSet<double> ps;
  auto& p = ps.add("p", {4});
  p.value = {0.5, -1.0, 2.0, 0.0};
  const std::vector<double> g{0.3, -2.0, 1e-3, 5.0};

  AdamState zero;
  p.grad.assign(4, 0.0);
  auto before = p.value;
  adam_step(ps, zero, cfg);
  CHECK(p.value == before);

  AdamState st;
  p.grad = g;
  adam_step(ps, st, cfg);
  for (int i = 0; i < 4; ++i) {
    CHECK(p.value[i] - before[i] == doctest::Approx(-cfg.lr * g[i] / (std::abs(g[i]) + cfg.eps)).epsilon(1e-12));
  }
  // decay of moments under a zero gradient after a nonzero one
  const double m_prev = st.m[0][0];
  p.grad.assign(4, 0.0);
  adam_step(ps, st, cfg);
  CHECK(st.m[0][0] == doctest::Approx(cfg.beta1 * m_prev));

  AdamState run;
  for (int k = 0; k < 5000; ++k) {
    before = p.value;
    p.grad = g;
    adam_step(ps, run, cfg);
  }
  for (int i = 0; i < 4; ++i) {
    const double sign = g[i] > 0 ? 1.0 : -1.0;
    CHECK(std::abs((before[i] - p.value[i]) - cfg.lr * sign) < 1e-6);
  }
}

TEST_CASE("forward and backward are bitwise repeatable") {
  auto run = [] {
    std::mt19937_64 rng(5);
    ParamSet<float> ps;
    ps.add_uniform("w", {8, 8}, 0.4, rng);
    Tape<float> t;
    auto x = t.constant({3, 8}, std::vector<float>(24, 0.25f));
    auto w = t.param(ps.get("w"));
    t.backward(mean(square(gelu(matmul(softmax(matmul(x, w)), w)))));
    return ps.get("w").grad;
  };
  CHECK(run() == run());
}

TEST_CASE("weights file round trips bit-exactly") {
  std::mt19937_64 rng(9);
  ParamSet<float> ps;
  ps.add_uniform("enc.w", {7, 5}, 1.0, rng);
  ps.add_uniform("enc.b", {5}, 1.0, rng);
  ps.add_uniform("cube", {2, 3, 4}, 1.0, rng);
  const auto dir = std::filesystem::temp_directory_path();
  const std::string f1 = (dir / "momaplan_w1.bin").string(), f2 = (dir / "momaplan_w2.bin").string();
  save_weights(ps, f1);
  ParamSet<float> back = read_weights(f1);
  REQUIRE(back.all().size() == 3);
  for (const auto& p : ps.all()) {
    CHECK(back.get(p.name).shape == p.shape);
    CHECK(std::memcmp(back.get(p.name).value.data(), p.value.data(), p.value.size() * 4) == 0);
  }
  save_weights(back, f2);
  std::ifstream a(f1, std::ios::binary), b(f2, std::ios::binary);
  std::stringstream sa, sb;
  sa << a.rdbuf();
  sb << b.rdbuf();
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().substr(0, 4) == "NMWT");

  ParamSet<float> target;
  target.add("enc.w", {7, 5});
  target.add("enc.b", {5});
  target.add("cube", {2, 3, 4});
  load_weights(target, f1);
  CHECK(target.get("cube").value == ps.get("cube").value);
  ParamSet<float> wrong;
  wrong.add("enc.w", {5, 7});
  wrong.add("enc.b", {5});
  wrong.add("cube", {2, 3, 4});
  CHECK_THROWS(load_weights(wrong, f1));
  std::filesystem::remove(f1);
  std::filesystem::remove(f2);
}

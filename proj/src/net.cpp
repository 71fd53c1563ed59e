#include "momaplan/net.hpp"

#include <algorithm>
#include <stdexcept>
#include <tuple>

#include "momaplan/path.hpp"

namespace momaplan {

using namespace ad;

void NetConfig::check() const {
  if (d_model <= 0 || heads <= 0 || d_model % heads != 0) throw std::invalid_argument("d_model must be a positive multiple of heads");
  if (ff <= 0 || point_hidden <= 0 || fusion_blocks < 0 || layers < 1) throw std::invalid_argument("invalid layer widths");
  if (point_tokens < 1 || !(grid > 0.0)) throw std::invalid_argument("invalid point grouping");
  if (n_tau < 2 || n_joints < 1 || n_primitives < 1 || t_max < 1) throw std::invalid_argument("invalid network shape");
}

nlohmann::json NetConfig::to_json() const {
  return {{"d_model", d_model}, {"heads", heads},         {"ff", ff},
          {"fusion_blocks", fusion_blocks}, {"layers", layers}, {"G", point_tokens},
          {"grid", grid},       {"point_hidden", point_hidden}, {"n_tau", n_tau},
          {"n_joints", n_joints}, {"K", n_primitives},    {"t_max", t_max}};
}

NetConfig NetConfig::from_json(const nlohmann::json& j) {
  NetConfig c;
  c.d_model = j.value("d_model", c.d_model);
  c.heads = j.value("heads", c.heads);
  c.ff = j.value("ff", c.ff);
  c.fusion_blocks = j.value("fusion_blocks", c.fusion_blocks);
  c.layers = j.value("layers", c.layers);
  c.point_tokens = j.value("G", c.point_tokens);
  c.grid = j.value("grid", c.grid);
  c.point_hidden = j.value("point_hidden", c.point_hidden);
  c.n_tau = j.value("n_tau", c.n_tau);
  c.n_joints = j.value("n_joints", c.n_joints);
  c.n_primitives = j.value("K", c.n_primitives);
  c.t_max = j.value("t_max", c.t_max);
  c.check();
  return c;
}

NetConfig NetConfig::toy() {
  NetConfig c;
  c.d_model = 32;
  c.heads = 4;
  c.ff = 64;
  c.point_tokens = 32;
  c.point_hidden = 32;
  return c;
}

PreparedInput prepare_input(const Eigen::MatrixX3d& task_points, const RobotState& start, const RobotState& goal,
                            const RobotModel& model, const NetConfig& config) {
  if (model.n_joints != config.n_joints) throw std::invalid_argument("robot joint count does not match the network");
  PreparedInput in;
  const double g = config.grid;
  // The task frame puts the start at the origin and the goal on the +x axis.
  // Distances are rounded so lattice-symmetric ties survive rounding noise in the goal.
  const double len = std::max(0.0, goal.x);
  auto segment_distance = [len](const Vec2& p) {
    const double dx = p.x() < 0 ? p.x() : p.x() > len ? p.x() - len : 0.0;
    return std::round(std::hypot(dx, p.y()) * 1e9) * 1e-9;
  };

  using Cell = std::tuple<long, long, long>;
  std::vector<Cell> cell_of(task_points.rows());
  std::vector<Cell> cells;
  for (int i = 0; i < task_points.rows(); ++i) {
    cell_of[i] = {static_cast<long>(std::floor(task_points(i, 0) / g)), static_cast<long>(std::floor(task_points(i, 1) / g)),
                  static_cast<long>(std::floor(task_points(i, 2) / g))};
    cells.push_back(cell_of[i]);
  }
  std::sort(cells.begin(), cells.end());
  cells.erase(std::unique(cells.begin(), cells.end()), cells.end());
  auto center = [g](const Cell& c) {
    return Vec3((std::get<0>(c) + 0.5) * g, (std::get<1>(c) + 0.5) * g, (std::get<2>(c) + 0.5) * g);
  };
  std::vector<std::pair<double, Cell>> ranked;
  for (const auto& c : cells) ranked.push_back({segment_distance(center(c).head<2>()), c});
  std::sort(ranked.begin(), ranked.end());
  if (static_cast<int>(ranked.size()) > config.point_tokens) ranked.resize(config.point_tokens);
  std::vector<std::pair<Cell, int>> token;
  for (std::size_t k = 0; k < ranked.size(); ++k) token.push_back({ranked[k].second, static_cast<int>(k)});
  std::sort(token.begin(), token.end());

  for (int i = 0; i < task_points.rows(); ++i) {
    auto it = std::lower_bound(token.begin(), token.end(), std::make_pair(cell_of[i], -1));
    if (it == token.end() || it->first != cell_of[i]) continue;
    const Vec3 p = task_points.row(i).transpose();
    const Vec3 c = center(cell_of[i]);
    for (int k = 0; k < 3; ++k) in.point_features.push_back(p[k]);
    for (int k = 0; k < 3; ++k) in.point_features.push_back(p[k] - c[k]);
    in.groups.push_back(it->second);
    ++in.n_points;
  }

  for (const RobotState* s : {&start, &goal}) {
    for (const auto& kp : keypoints(model, *s)) {
      for (int k = 0; k < 3; ++k) in.keypoints.push_back(kp.position[k]);
      in.keypoints.push_back(kp.feature);
    }
    Eigen::VectorXd row = path_state_from_state(*s);
    for (int i = 0; i < model.n_joints; ++i) row[4 + i] = normalize_joint(model, i, row[4 + i]);
    for (int k = 0; k < row.size(); ++k) in.boundary.push_back(row[k]);
  }
  return in;
}

namespace {

template <typename T>
std::vector<T> cast_vec(const std::vector<double>& v) {
  return std::vector<T>(v.begin(), v.end());
}

}  // namespace

template <typename T>
Network<T>::Network(const NetConfig& config, std::uint64_t seed) : config_(config) {
  config_.check();
  build(seed);
}

template <typename T>
Network<T>::Network(const NetConfig& config, ParamSet<T> params) : config_(config) {
  config_.check();
  build(0);
  if (params.all().size() != params_.all().size()) throw std::invalid_argument("weight tensor count does not match config");
  for (auto& p : params_.all()) {
    const auto& q = params.get(p.name);
    if (q.shape != p.shape) {
      throw std::invalid_argument("weight shape mismatch for " + p.name + ": " + shape_str(q.shape) + " vs " + shape_str(p.shape));
    }
    p.value = q.value;
  }
}

template <typename T>
void Network<T>::build(std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, 0x7e7));
  const int d = config_.d_model;
  auto lin = [&](const std::string& name, int in, int out) {
    params_.add_uniform(name + ".w", {in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    params_.add_constant(name + ".b", {out}, 0.0);
  };
  auto ln = [&](const std::string& name) {
    params_.add_constant(name + ".g", {d}, 1.0);
    params_.add_constant(name + ".b", {d}, 0.0);
  };
  auto attn = [&](const std::string& name) {
    for (const char* k : {".q", ".k", ".v", ".o"}) lin(name + k, d, d);
  };
  auto ffn = [&](const std::string& name) {
    lin(name + ".l1", d, config_.ff);
    lin(name + ".l2", config_.ff, d);
  };
  lin("pt.l1", 6, config_.point_hidden);
  lin("pt.l2", config_.point_hidden, d);
  lin("kp.l1", 4, d);
  lin("kp.l2", d, d);
  lin("bs.l1", config_.state_dim(), d);
  lin("bs.l2", d, d);
  lin("kp.merge", 2 * d, d);
  for (int b = 0; b < config_.fusion_blocks; ++b) {
    const std::string p = "fu" + std::to_string(b);
    ln(p + ".ln1");
    attn(p + ".sa");
    ln(p + ".ln2");
    ln(p + ".lnm");
    attn(p + ".ca");
    ln(p + ".ln3");
    ffn(p + ".ff");
  }
  ln("mem.ln");
  lin("ph.l1", d, d);
  lin("ph.l2", d, config_.n_primitives);
  lin("dn.in", config_.state_dim(), d);
  lin("dn.t.l1", d, d);
  lin("dn.t.l2", d, d);
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "dn" + std::to_string(l);
    ln(p + ".ln1");
    attn(p + ".sa");
    ln(p + ".ln2");
    attn(p + ".ca");
    ln(p + ".ln3");
    ffn(p + ".ff");
  }
  ln("dn.lnf");
  lin("dn.out", d, config_.state_dim());
  // start near the identity map on the residual path
  for (auto& v : params_.get("dn.out.w").value) v = static_cast<T>(0.1 * v);
}

template <typename T>
Var<T> Network<T>::linear(Tape<T>& tape, const std::string& name, const Var<T>& x) {
  return add(matmul(x, tape.param(params_.get(name + ".w"))), tape.param(params_.get(name + ".b")));
}

template <typename T>
Var<T> Network<T>::norm(Tape<T>& tape, const std::string& name, const Var<T>& x) {
  return layer_norm(x, tape.param(params_.get(name + ".g")), tape.param(params_.get(name + ".b")));
}

template <typename T>
Var<T> Network<T>::mlp(Tape<T>& tape, const std::string& name, const Var<T>& x) {
  return linear(tape, name + ".l2", gelu(linear(tape, name + ".l1", x)));
}

template <typename T>
Var<T> Network<T>::attend(const Var<T>& q, const Var<T>& k, const Var<T>& v) {
  const int d = config_.d_model, h = config_.heads, dh = d / h;
  const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var<T>> outs;
  for (int i = 0; i < h; ++i) {
    const Var<T> qh = slice(q, 1, i * dh, (i + 1) * dh);
    const Var<T> kh = slice(k, 1, i * dh, (i + 1) * dh);
    const Var<T> vh = slice(v, 1, i * dh, (i + 1) * dh);
    const Var<T> p = softmax(scale(matmul_nt(qh, kh), inv));
    if (record_attention_) attention_maps_.push_back(p);
    outs.push_back(matmul(p, vh));
  }
  return h == 1 ? outs[0] : concat(outs, 1);
}

template <typename T>
Var<T> Network<T>::self_attention(Tape<T>& tape, const std::string& name, const Var<T>& x) {
  return linear(tape, name + ".o",
                attend(linear(tape, name + ".q", x), linear(tape, name + ".k", x), linear(tape, name + ".v", x)));
}

template <typename T>
Var<T> Network<T>::cross_attention(Tape<T>& tape, const std::string& name, const Var<T>& x, const Var<T>& k,
                                   const Var<T>& v) {
  return linear(tape, name + ".o", attend(linear(tape, name + ".q", x), k, v));
}

template <typename T>
TaskEncoding<T> Network<T>::encode(Tape<T>& tape, const PreparedInput& in) {
  const int d = config_.d_model, G = config_.point_tokens, nk = config_.keypoint_tokens();
  if (static_cast<int>(in.keypoints.size()) != nk * 4 || static_cast<int>(in.boundary.size()) != 2 * config_.state_dim()) {
    throw std::invalid_argument("prepared input does not match the network configuration");
  }
  if (record_attention_) attention_maps_.clear();
  const Var<T> pts_in = tape.constant({in.n_points, 6}, cast_vec<T>(in.point_features));
  const Var<T> pts = group_max(mlp(tape, "pt", pts_in), in.groups, G);

  const Var<T> kp = mlp(tape, "kp", tape.constant({nk, 4}, cast_vec<T>(in.keypoints)));
  const Var<T> bs = mlp(tape, "bs", tape.constant({2, config_.state_dim()}, cast_vec<T>(in.boundary)));
  // each keypoint token carries the embedding of the boundary state it came from
  std::vector<int> owner(nk);
  for (int i = 0; i < nk; ++i) owner[i] = i < nk / 2 ? 0 : 1;
  Var<T> x = linear(tape, "kp.merge", concat<T>({kp, embedding(bs, owner)}, 1));
  x = add(x, sinusoidal_position_encoding(tape, nk, d));

  for (int b = 0; b < config_.fusion_blocks; ++b) {
    const std::string p = "fu" + std::to_string(b);
    x = add(x, self_attention(tape, p + ".sa", norm(tape, p + ".ln1", x)));
    const Var<T> m = norm(tape, p + ".lnm", pts);
    x = add(x, cross_attention(tape, p + ".ca", norm(tape, p + ".ln2", x), linear(tape, p + ".ca.k", m),
                               linear(tape, p + ".ca.v", m)));
    x = add(x, mlp(tape, p + ".ff", norm(tape, p + ".ln3", x)));
  }
  TaskEncoding<T> enc;
  enc.memory = norm(tape, "mem.ln", concat<T>({x, pts}, 0));
  enc.pooled = mean_rows(enc.memory);
  return enc;
}

template <typename T>
MemoryCache<T> Network<T>::cache(Tape<T>& tape, const TaskEncoding<T>& enc) {
  MemoryCache<T> c;
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "dn" + std::to_string(l) + ".ca";
    c.keys.push_back(linear(tape, p + ".k", enc.memory));
    c.values.push_back(linear(tape, p + ".v", enc.memory));
  }
  return c;
}

template <typename T>
Var<T> Network<T>::denoise(Tape<T>& tape, const Var<T>& tau, int t, const TaskEncoding<T>& enc,
                           const MemoryCache<T>* cache) {
  const int d = config_.d_model;
  if (tau.shape() != Shape{config_.n_tau, config_.state_dim()}) {
    throw std::invalid_argument("denoise: path tensor must be " + shape_str({config_.n_tau, config_.state_dim()}) +
                                ", got " + shape_str(tau.shape()));
  }
  if (t < 1 || t > config_.t_max) throw std::out_of_range("denoise: timestep " + std::to_string(t) + " out of range");
  const Var<T> temb = mlp(tape, "dn.t", tape.constant({1, d}, sinusoidal_table<T>({static_cast<double>(t)}, d)));
  Var<T> x = add(linear(tape, "dn.in", tau), sinusoidal_position_encoding(tape, config_.n_tau, d));
  x = add(x, reshape(temb, {d}));
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "dn" + std::to_string(l);
    x = add(x, self_attention(tape, p + ".sa", norm(tape, p + ".ln1", x)));
    const Var<T> k = cache ? cache->keys[l] : linear(tape, p + ".ca.k", enc.memory);
    const Var<T> v = cache ? cache->values[l] : linear(tape, p + ".ca.v", enc.memory);
    x = add(x, cross_attention(tape, p + ".ca", norm(tape, p + ".ln2", x), k, v));
    x = add(x, mlp(tape, p + ".ff", norm(tape, p + ".ln3", x)));
  }
  return add(tau, linear(tape, "dn.out", norm(tape, "dn.lnf", x)));
}

template <typename T>
Var<T> Network<T>::primitive_logits(Tape<T>& tape, const TaskEncoding<T>& enc) {
  return reshape(linear(tape, "ph.l2", gelu(linear(tape, "ph.l1", enc.pooled))), {config_.n_primitives});
}

template class Network<float>;
template class Network<double>;

namespace {

constexpr const char* kConfigTensor = "__config__";

}  // namespace

void save_network(const Network<float>& net, const std::string& path) {
  const NetConfig& c = net.config();
  ParamSet<float> out;
  auto& cfg = out.add(kConfigTensor, {12});
  cfg.value = {static_cast<float>(c.d_model),   static_cast<float>(c.heads),  static_cast<float>(c.ff),
               static_cast<float>(c.fusion_blocks), static_cast<float>(c.layers), static_cast<float>(c.point_tokens),
               static_cast<float>(c.grid),      static_cast<float>(c.point_hidden), static_cast<float>(c.n_tau),
               static_cast<float>(c.n_joints),  static_cast<float>(c.n_primitives), static_cast<float>(c.t_max)};
  for (const auto& p : net.params().all()) out.add(p.name, p.shape).value = p.value;
  save_weights(out, path);
}

Network<float> load_network(const std::string& path) {
  ParamSet<float> file = read_weights(path);
  const auto& v = file.get(kConfigTensor).value;
  if (v.size() != 12) throw std::runtime_error(path + ": malformed network config");
  NetConfig c;
  c.d_model = static_cast<int>(v[0]);
  c.heads = static_cast<int>(v[1]);
  c.ff = static_cast<int>(v[2]);
  c.fusion_blocks = static_cast<int>(v[3]);
  c.layers = static_cast<int>(v[4]);
  c.point_tokens = static_cast<int>(v[5]);
  c.grid = v[6];
  c.point_hidden = static_cast<int>(v[7]);
  c.n_tau = static_cast<int>(v[8]);
  c.n_joints = static_cast<int>(v[9]);
  c.n_primitives = static_cast<int>(v[10]);
  c.t_max = static_cast<int>(v[11]);
  ParamSet<float> params;
  for (const auto& p : file.all()) {
    if (p.name != kConfigTensor) params.add(p.name, p.shape).value = p.value;
  }
  return Network<float>(c, std::move(params));
}

}  // namespace momaplan

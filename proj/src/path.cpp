#include "momaplan/path.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

#include "momaplan/collision.hpp"

namespace momaplan {

RobotState Path::state(int i) const {
  RobotState s;
  s.x = states(i, 0);
  s.y = states(i, 1);
  if (states(i, 2) == 0.0 && states(i, 3) == 0.0) throw std::invalid_argument("degenerate heading");
  s.theta = std::atan2(states(i, 3), states(i, 2));
  s.q = states.row(i).tail(n_joints()).transpose();
  return s;
}

void Path::project_headings() {
  for (int i = 0; i < length(); ++i) {
    const double n = std::hypot(states(i, 2), states(i, 3));
    if (n == 0.0) throw std::invalid_argument("degenerate heading");
    states(i, 2) /= n;
    states(i, 3) /= n;
  }
}

Path path_from_states(const WaypointPath& w, Frame frame) {
  if (w.empty()) throw std::invalid_argument("empty state list");
  Path p;
  p.frame = frame;
  p.states.resize(static_cast<int>(w.size()), 4 + w[0].q.size());
  for (int i = 0; i < static_cast<int>(w.size()); ++i) p.states.row(i) = path_state_from_state(w[i]).transpose();
  return p;
}

WaypointPath path_states(const Path& p) {
  WaypointPath w;
  for (int i = 0; i < p.length(); ++i) w.push_back(p.state(i));
  return w;
}

namespace {

struct Cursor {
  int seg = 0;     // segment index into the polyline
  double u = 0.0;  // fraction along it
};

RobotState at(const WaypointPath& w, const Cursor& c) {
  if (c.seg >= static_cast<int>(w.size()) - 1) return w.back();
  return interpolate(w[c.seg], w[c.seg + 1], c.u);
}

Vec2 base_at(const WaypointPath& w, const Cursor& c) {
  if (c.seg >= static_cast<int>(w.size()) - 1) return w.back().xy();
  return w[c.seg].xy() + c.u * (w[c.seg + 1].xy() - w[c.seg].xy());
}

// First exit of the polyline from the disk of radius L around the cursor's point.
// Returns false when the path ends inside the disk.
bool advance(const WaypointPath& w, Cursor& c, double L) {
  const Vec2 center = base_at(w, c);
  const int segs = static_cast<int>(w.size()) - 1;
  for (int k = c.seg; k < segs; ++k) {
    const Vec2 a = w[k].xy(), b = w[k + 1].xy();
    const Vec2 d = b - a;
    const double dd = d.squaredNorm();
    if (dd == 0.0) continue;
    const Vec2 f = a - center;
    // |f + s d|^2 = L^2, larger root is the exit
    const double bq = f.dot(d), cq = f.squaredNorm() - L * L;
    const double disc = bq * bq - dd * cq;
    if (disc < 0.0) continue;
    const double s = (-bq + std::sqrt(disc)) / dd;
    const double s0 = k == c.seg ? c.u : 0.0;
    if (s >= s0 && s <= 1.0) {
      c.seg = k;
      c.u = s;
      return true;
    }
  }
  c.seg = segs;
  c.u = 0.0;
  return false;
}

double arc_position(const std::vector<double>& cum, const WaypointPath& w, const Cursor& c) {
  if (c.seg >= static_cast<int>(w.size()) - 1) return cum.back();
  return cum[c.seg] + c.u * (cum[c.seg + 1] - cum[c.seg]);
}

}  // namespace

Path resample_uniform(const WaypointPath& w, int n_tau) {
  if (w.empty()) throw std::invalid_argument("resample_uniform needs at least one state");
  if (n_tau < 2) throw std::invalid_argument("resample_uniform needs n_tau >= 2");
  const int m = static_cast<int>(w.size());
  std::vector<double> cum(m, 0.0);
  for (int i = 1; i < m; ++i) cum[i] = cum[i - 1] + (w[i].xy() - w[i - 1].xy()).norm();
  const double total = cum.back();

  WaypointPath out(n_tau);
  if (m == 1 || total < 1e-6) {
    for (int i = 0; i < n_tau; ++i) {
      const double t = static_cast<double>(i) / (n_tau - 1) * (m - 1);
      Cursor c{std::min(static_cast<int>(t), m - 1), 0.0};
      c.u = t - c.seg;
      out[i] = at(w, c);
    }
  } else {
    // Chord length L is bisected so that n_tau - 1 equal chords end exactly at the last point.
    auto reach = [&](double L, std::vector<Cursor>* cursors) {
      Cursor c;
      if (cursors) cursors->push_back(c);
      for (int i = 1; i < n_tau; ++i) {
        if (!advance(w, c, L)) return total + (n_tau - i);  // overshoot, scaled by missing steps
        if (cursors) cursors->push_back(c);
      }
      return arc_position(cum, w, c);
    };
    double lo = 0.0, hi = total / (n_tau - 1) * (1.0 + 1e-12);
    for (int it = 0; it < 200 && hi - lo > 1e-15 * total; ++it) {
      const double mid = 0.5 * (lo + hi);
      if (reach(mid, nullptr) >= total) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
    std::vector<Cursor> cursors;
    reach(lo, &cursors);
    while (static_cast<int>(cursors.size()) < n_tau) cursors.push_back(Cursor{m - 1, 0.0});
    for (int i = 0; i < n_tau; ++i) out[i] = at(w, cursors[i]);
  }
  out.front() = w.front();
  out.back() = w.back();
  return path_from_states(out, Frame::kWorld);
}

DeltaTotals delta_totals(const WaypointPath& w) {
  DeltaTotals d;
  for (std::size_t i = 1; i < w.size(); ++i) {
    d.p += (w[i].xy() - w[i - 1].xy()).norm();
    d.theta += std::abs(shortest_arc(w[i - 1].theta, w[i].theta));
    d.q += (w[i].q - w[i - 1].q).cwiseAbs().sum();
  }
  return d;
}

WaypointPath prune(const WaypointPath& w, const Scene& scene, const RobotModel& model, std::uint64_t seed,
                   const PruneConfig& cfg) {
  WaypointPath path = w;
  Rng rng(derive_seed(seed, 0x9a7e));
  int failures = 0;
  for (int attempt = 0; attempt < cfg.max_attempts && failures < cfg.max_consecutive_failures; ++attempt) {
    const int n = static_cast<int>(path.size());
    if (n < 3) break;
    std::uniform_int_distribution<int> pick(0, n - 1);
    int i = pick(rng), j = pick(rng);
    if (i > j) std::swap(i, j);
    if (j - i < 2) {
      ++failures;
      continue;
    }
    const WaypointPath old_chain(path.begin() + i, path.begin() + j + 1);
    const WaypointPath new_chain{path[i], path[j]};
    const DeltaTotals before = delta_totals(old_chain), after = delta_totals(new_chain);
    const bool shorter = after.p <= before.p && after.theta <= before.theta && after.q <= before.q;
    if (!shorter || !segment_free(scene, model, path[i], path[j], cfg.pos_step, cfg.rot_step)) {
      ++failures;
      continue;
    }
    path.erase(path.begin() + i + 1, path.begin() + j);
    failures = 0;
  }
  return path;
}

double path_distance(const Path& a, const Path& b) {
  if (a.frame != b.frame) throw std::invalid_argument("path_distance: frame mismatch");
  if (a.states.rows() != b.states.rows() || a.states.cols() != b.states.cols()) {
    throw std::invalid_argument("path_distance: shape mismatch");
  }
  return (a.states - b.states).norm();
}

namespace {

Path rotate_path(const Path& p, const Vec2& shift_before, double angle, const Vec2& shift_after) {
  Path out = p;
  const double c = std::cos(angle), s = std::sin(angle);
  for (int i = 0; i < p.length(); ++i) {
    const double x = p.states(i, 0) + shift_before.x(), y = p.states(i, 1) + shift_before.y();
    out.states(i, 0) = c * x - s * y + shift_after.x();
    out.states(i, 1) = s * x + c * y + shift_after.y();
    const double hc = p.states(i, 2), hs = p.states(i, 3);
    out.states(i, 2) = c * hc - s * hs;
    out.states(i, 3) = s * hc + c * hs;
  }
  return out;
}

}  // namespace

Path to_task_frame(const Path& p, const TaskFrame& f) {
  if (p.frame != Frame::kWorld) throw std::invalid_argument("to_task_frame: path is already in the task frame");
  Path out = rotate_path(p, -f.origin, -f.theta_d, Vec2::Zero());
  out.frame = Frame::kTask;
  return out;
}

Path from_task_frame(const Path& p, const TaskFrame& f) {
  if (p.frame != Frame::kTask) throw std::invalid_argument("from_task_frame: path is not in the task frame");
  Path out = rotate_path(p, Vec2::Zero(), f.theta_d, f.origin);
  out.frame = Frame::kWorld;
  return out;
}

Eigen::MatrixXd path_features(const Path& p, const RobotModel& model) {
  Eigen::MatrixXd f = p.states;
  for (int i = 0; i < model.n_joints; ++i) {
    for (int r = 0; r < p.length(); ++r) f(r, 4 + i) = normalize_joint(model, i, p.states(r, 4 + i));
  }
  return f;
}

Path path_from_features(const Eigen::MatrixXd& features, const RobotModel& model, Frame frame) {
  Path p;
  p.frame = frame;
  p.states = features;
  for (int i = 0; i < model.n_joints; ++i) {
    for (int r = 0; r < p.length(); ++r) p.states(r, 4 + i) = denormalize_joint(model, i, features(r, 4 + i));
  }
  return p;
}

namespace {

constexpr char kRecordMagic[4] = {'N', 'M', 'P', 'T'};
constexpr std::uint32_t kRecordVersion = 1;

double to_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

void quantize_state(RobotState& s) {
  s.x = to_f32(s.x);
  s.y = to_f32(s.y);
  s.theta = to_f32(s.theta);
  for (int i = 0; i < s.q.size(); ++i) s.q[i] = to_f32(s.q[i]);
}

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated dataset record");
  return v;
}

void put_state(std::ostream& out, const RobotState& s) {
  put<float>(out, static_cast<float>(s.x));
  put<float>(out, static_cast<float>(s.y));
  put<float>(out, static_cast<float>(s.theta));
  for (int i = 0; i < s.q.size(); ++i) put<float>(out, static_cast<float>(s.q[i]));
}

RobotState get_state(std::istream& in, int n_joints) {
  RobotState s;
  s.x = get<float>(in);
  s.y = get<float>(in);
  s.theta = get<float>(in);
  s.q.resize(n_joints);
  for (int i = 0; i < n_joints; ++i) s.q[i] = get<float>(in);
  return s;
}

}  // namespace

void quantize_record(DatasetRecord& r) {
  r.path.states = r.path.states.unaryExpr([](double v) { return to_f32(v); });
  quantize_state(r.start);
  quantize_state(r.goal);
}

void write_record(std::ostream& out, const DatasetRecord& r) {
  static_assert(sizeof(float) == 4);
  out.write(kRecordMagic, 4);
  put<std::uint32_t>(out, kRecordVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(r.path.length()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(r.path.n_joints()));
  put<std::uint32_t>(out, r.path.frame == Frame::kTask ? 1u : 0u);
  for (int i = 0; i < r.path.length(); ++i) {
    for (int j = 0; j < r.path.states.cols(); ++j) put<float>(out, static_cast<float>(r.path.states(i, j)));
  }
  put_state(out, r.start);
  put_state(out, r.goal);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(r.scene_ref.size()));
  out.write(r.scene_ref.data(), static_cast<std::streamsize>(r.scene_ref.size()));
}

DatasetRecord read_record(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kRecordMagic, 4) != 0) throw std::runtime_error("not a dataset record (bad magic)");
  if (get<std::uint32_t>(in) != kRecordVersion) throw std::runtime_error("unsupported dataset record version");
  const auto n_tau = get<std::uint32_t>(in);
  const auto n_m = get<std::uint32_t>(in);
  DatasetRecord r;
  r.path.frame = get<std::uint32_t>(in) == 1u ? Frame::kTask : Frame::kWorld;
  r.path.states.resize(n_tau, 4 + n_m);
  for (std::uint32_t i = 0; i < n_tau; ++i) {
    for (std::uint32_t j = 0; j < 4 + n_m; ++j) r.path.states(i, j) = get<float>(in);
  }
  r.start = get_state(in, static_cast<int>(n_m));
  r.goal = get_state(in, static_cast<int>(n_m));
  const auto len = get<std::uint32_t>(in);
  r.scene_ref.resize(len);
  in.read(r.scene_ref.data(), len);
  if (!in) throw std::runtime_error("truncated dataset record");
  return r;
}

void save_records(const std::string& path, const std::vector<DatasetRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  for (const auto& r : records) write_record(out, r);
}

std::vector<DatasetRecord> load_records(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::vector<DatasetRecord> out;
  while (in.peek() != std::char_traits<char>::eof()) out.push_back(read_record(in));
  return out;
}

nlohmann::json record_to_json(const DatasetRecord& r) {
  auto state = [](const RobotState& s) {
    return nlohmann::json{{"x", s.x}, {"y", s.y}, {"theta", s.theta}, {"q", std::vector<double>(s.q.begin(), s.q.end())}};
  };
  nlohmann::json rows = nlohmann::json::array();
  for (int i = 0; i < r.path.length(); ++i) {
    rows.push_back(std::vector<double>(r.path.states.row(i).begin(), r.path.states.row(i).end()));
  }
  return {{"frame", r.path.frame == Frame::kTask ? "task" : "world"},
          {"path", rows},
          {"start", state(r.start)},
          {"goal", state(r.goal)},
          {"scene", r.scene_ref}};
}

}  // namespace momaplan

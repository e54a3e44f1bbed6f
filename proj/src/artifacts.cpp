#include "bounce/artifacts.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "bounce/config.hpp"

namespace bounce {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

json vec2_json(const Vec2& v) { return {v.x(), v.y()}; }

json flat_state_json(const FlatState& s) {
  return {{"p", vec2_json(s.position)}, {"v", vec2_json(s.velocity)}};
}

std::ofstream open_out(const std::string& file) {
  std::ofstream out(file);
  if (!out) throw RuntimeFault("cannot write artifact: " + file);
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(12) << v;
  return os.str();
}

}  // namespace

json plan_to_json(const PrimitivePath& path, double recovery_time) {
  json edges = json::array();
  for (const auto& e : path.edges) {
    json je = {{"u", vec2_json(e.control)},
               {"tau", e.duration},
               {"zeta", e.collides ? 1 : 0},
               {"xi", e.behavior},
               {"cost", e.cost},
               {"start", flat_state_json(e.start)},
               {"end", flat_state_json(e.end)}};
    if (e.pre_collision) je["s_minus"] = flat_state_json(*e.pre_collision);
    if (e.post_collision) je["s_plus"] = flat_state_json(*e.post_collision);
    if (e.detour_point) je["p_add"] = vec2_json(*e.detour_point);
    if (e.collides) je["collision_cost"] = e.collision_cost_value;
    if (e.jump_collapsed) je["jump_collapsed"] = true;
    edges.push_back(je);
  }
  return {{"found", path.found},
          {"failure", path.failure},
          {"edges", edges},
          {"total_cost", path.cost},
          {"N_p", path.closed_nodes},
          {"compute_time_s", path.compute_time_s},
          {"trajectory_time_s", path.total_time(recovery_time)}};
}

void write_plan_json(const std::string& file, const PrimitivePath& path, double recovery_time) {
  open_out(file) << plan_to_json(path, recovery_time).dump(2) << '\n';
}

void write_trajectory_csv(const std::string& file, const PiecewisePolynomialTrajectory& traj,
                          double sample_rate) {
  auto out = open_out(file);
  export_trajectory_csv(traj, sample_rate, out);
}

json episode_to_json(const EpisodeResult& episode) {
  const char* outcome = episode.outcome == Outcome::Success
                            ? "Success"
                            : (episode.outcome == Outcome::Timeout ? "Timeout" : "Trapped");
  json events = json::array();
  for (const auto& e : episode.events)
    events.push_back({{"t", e.t},
                      {"type", e.type},
                      {"detail", e.detail},
                      {"position", vec2_json(e.position)}});
  return {{"outcome", outcome},
          {"events", events},
          {"metrics",
           {{"path_length_m", episode.metrics.path_length},
            {"trajectory_time_s", episode.metrics.trajectory_time},
            {"control_energy", episode.metrics.control_energy},
            {"compute_time_s", episode.metrics.compute_time},
            {"closed_nodes", episode.metrics.closed_nodes},
            {"success", episode.metrics.success}}}};
}

void write_episode_json(const std::string& file, const EpisodeResult& episode) {
  open_out(file) << episode_to_json(episode).dump(2) << '\n';
}

void write_trace_csv(const std::string& file, const EpisodeResult& episode) {
  auto out = open_out(file);
  out << "t,x,y,vx,vy,ax,ay\n";
  for (const auto& s : episode.trace)
    out << fmt(s.t) << ',' << fmt(s.position.x()) << ',' << fmt(s.position.y()) << ','
        << fmt(s.velocity.x()) << ',' << fmt(s.velocity.y()) << ',' << fmt(s.command.x()) << ','
        << fmt(s.command.y()) << '\n';
}

namespace {

struct Stats {
  double mean = 0.0;
  double std_dev = 0.0;
};

Stats stats_of(const std::vector<double>& xs) {
  Stats s;
  if (xs.empty()) return s;
  for (double x : xs) s.mean += x;
  s.mean /= xs.size();
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.std_dev = xs.size() > 1 ? std::sqrt(var / (xs.size() - 1)) : 0.0;
  return s;
}

}  // namespace

void write_benchmark_summary(const std::string& file, const std::vector<BenchmarkRow>& rows) {
  std::map<std::string, std::vector<const BenchmarkRow*>> by_scenario;
  std::vector<std::string> order;
  for (const auto& r : rows) {
    if (!by_scenario.count(r.scenario)) order.push_back(r.scenario);
    by_scenario[r.scenario].push_back(&r);
  }
  auto out = open_out(file);
  out << "scenario,comp_time_mean_s,comp_time_std_s,Np_mean,Np_std,traj_time_mean_s,"
         "traj_time_std_s,ctrl_cost_mean,ctrl_cost_std,path_length_mean_m,path_length_std_m,"
         "success_rate\n";
  for (const auto& name : order) {
    const auto& group = by_scenario[name];
    std::vector<double> ct, np, tt, cc, pl;
    double successes = 0;
    for (const auto* r : group) {
      ct.push_back(r->metrics.compute_time);
      np.push_back(static_cast<double>(r->metrics.closed_nodes));
      tt.push_back(r->metrics.trajectory_time);
      cc.push_back(r->metrics.control_energy);
      pl.push_back(r->metrics.path_length);
      successes += r->metrics.success ? 1.0 : 0.0;
    }
    const Stats sct = stats_of(ct), snp = stats_of(np), stt = stats_of(tt), scc = stats_of(cc),
                spl = stats_of(pl);
    out << name << ',' << fmt(sct.mean) << ',' << fmt(sct.std_dev) << ',' << fmt(snp.mean) << ','
        << fmt(snp.std_dev) << ',' << fmt(stt.mean) << ',' << fmt(stt.std_dev) << ','
        << fmt(scc.mean) << ',' << fmt(scc.std_dev) << ',' << fmt(spl.mean) << ','
        << fmt(spl.std_dev) << ',' << fmt(successes / group.size()) << '\n';
  }
}

void write_benchmark_metrics(const std::string& file, const std::vector<BenchmarkRow>& rows) {
  auto out = open_out(file);
  out << "scenario,seed,success,Np,traj_time_s,ctrl_cost,path_length_m\n";
  for (const auto& r : rows)
    out << r.scenario << ',' << r.seed << ',' << (r.metrics.success ? 1 : 0) << ','
        << r.metrics.closed_nodes << ',' << fmt(r.metrics.trajectory_time) << ','
        << fmt(r.metrics.control_energy) << ',' << fmt(r.metrics.path_length) << '\n';
}

void export_plotdata(const std::string& artifacts_dir) {
  const fs::path dir(artifacts_dir);
  if (!fs::is_directory(dir)) throw InvalidArgument("artifacts directory not found: " + artifacts_dir);

  const fs::path config_path = dir / "effective_config.json";
  if (!fs::exists(config_path))
    throw InvalidArgument("missing effective_config.json in " + artifacts_dir);
  json config;
  std::ifstream(config_path) >> config;
  const MapSpec spec = map_spec_from_json(config.at("map"));

  bool wrote_any = false;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("trace_", 0) != 0 || entry.path().extension() != ".csv") continue;
    const std::string tag = name.substr(6, name.size() - 10);
    auto out = open_out((dir / ("overlay_" + tag + ".csv")).string());
    out << "kind,id,t,x,y\n";

    std::ifstream trace(entry.path());
    std::string line;
    std::getline(trace, line);  // header
    while (std::getline(trace, line)) {
      std::istringstream ss(line);
      std::string t, x, y;
      std::getline(ss, t, ',');
      std::getline(ss, x, ',');
      std::getline(ss, y, ',');
      out << "trajectory,0," << t << ',' << x << ',' << y << '\n';
    }

    int id = 0;
    for (const auto& obs : spec.obstacles) {
      std::visit(
          [&](const auto& o) {
            using T = std::decay_t<decltype(o)>;
            auto emit = [&](const Vec2& p) {
              out << "obstacle_outline," << id << ",0," << fmt(p.x()) << ',' << fmt(p.y()) << '\n';
            };
            if constexpr (std::is_same_v<T, RectObstacle>) {
              emit(o.min);
              emit({o.max.x(), o.min.y()});
              emit(o.max);
              emit({o.min.x(), o.max.y()});
              emit(o.min);
            } else if constexpr (std::is_same_v<T, CircleObstacle>) {
              for (int k = 0; k <= 64; ++k) {
                const double a = 2.0 * M_PI * k / 64;
                emit(o.center + o.radius * Vec2(std::cos(a), std::sin(a)));
              }
            } else {
              for (const auto& v : o.vertices) emit(v);
              if (!o.vertices.empty()) emit(o.vertices.front());
            }
          },
          obs);
      ++id;
    }

    const fs::path episode_path = dir / ("episode_" + tag + ".json");
    if (fs::exists(episode_path)) {
      json ep;
      std::ifstream(episode_path) >> ep;
      for (const auto& ev : ep.at("events")) {
        out << ev.at("type").get<std::string>() << ",0," << fmt(ev.at("t").get<double>()) << ','
            << fmt(ev.at("position")[0].get<double>()) << ','
            << fmt(ev.at("position")[1].get<double>()) << '\n';
      }
    }
    wrote_any = true;
  }
  if (!wrote_any) throw InvalidArgument("no trace_*.csv artifacts in " + artifacts_dir);
}

}  // namespace bounce

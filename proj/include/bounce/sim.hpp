#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bounce/recovery.hpp"
#include "bounce/search.hpp"
#include "bounce/traj.hpp"
#include "bounce/world.hpp"

namespace bounce {

// Deterministic RNG with fixed draw counts: uniform() consumes one raw draw,
// gauss() two (Box-Muller, cosine branch). No distribution-object caching, so
// sequences are reproducible across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

  double uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double gauss(double sigma) {
    const double u1 = std::max(uniform01(), 1e-300);
    const double u2 = uniform01();
    return sigma * std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  double truncated_gauss(double sigma, double bound) {
    if (sigma <= 0.0) return 0.0;
    for (int i = 0; i < 1000; ++i) {
      const double x = gauss(sigma);
      if (std::abs(x) <= bound) return x;
    }
    return 0.0;
  }

 private:
  std::uint64_t next() {
    // splitmix64
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }
  std::uint64_t state_;
};

struct NoiseModel {
  double recovery_velocity_halfwidth = 0.1;  // uniform, per component, m/s
  double planner_position_variance = 0.3;    // truncated Gaussian, m^2
  double planner_position_bound = 0.9;       // m
  double planner_velocity_variance = 0.1;    // (m/s)^2
  double planner_velocity_bound = 0.3;       // m/s
  std::uint64_t seed = 1;

  void validate() const;
};

struct Scenario {
  std::string name = "scenario";
  MapSpec map;
  Vec2 start = Vec2::Zero();
  Vec2 goal = Vec2::Zero();
  Vec2 start_velocity = Vec2::Zero();
  SearchConfig search;
  GtoParams gto;
  ArmParams arm;
  RecoveryWeights recovery;
  OrientationGains orientation;
  NoiseModel noise;
  double replan_period = 5.0;  // T_rep
  double timeout = 150.0;
  double control_rate = 10.0;
  int scan_beams = 360;
  double scan_range = 8.0;
  double explore_distance = 1.0;
  bool stop_rule = true;
  double track_kp = 4.0;
  double track_kd = 4.0;

  void validate() const;
};

// Exact double-integrator update under a constant command.
FlatState step(const FlatState& state, const Vec2& command, double dt);

struct CollisionEvent {
  Vec2 contact = Vec2::Zero();  // p_c, nearest obstacle boundary point
  CollisionFrame frame;
  std::optional<SurfaceSegment> surface;  // fitted segment supporting the contact
  bool infeasible_region = false;
  bool surface_fully_visible = true;
};

// Geometric contact detection: the r_rob disc against the occupied set
// (exact, over the local cell neighborhood). Surfaces come from the supplied
// scan fit; falls back to the contact-point normal when no fitted segment
// supports the contact. Throws on tunneling (robot center inside an occupied
// cell).
std::optional<CollisionEvent> detect_collision(const FlatState& state, const OccupancyGrid& grid,
                                               double robot_radius,
                                               const std::vector<SurfaceSegment>& surfaces,
                                               const Scan* scan);

// Empirical recovery outcome: v_T plus per-component uniform noise (normal
// component clamped >= 0), robot detached to arm rest length along the
// normal. Draws exactly two RNG values.
FlatState noisy_recovery(const CollisionEvent& event, const FlatState& pre_state,
                         const Vec2& v_t_ref_cf, const NoiseModel& noise, double robot_radius,
                         Rng& rng);

enum class Outcome { Success, Timeout, Trapped };

struct Event {
  double t = 0.0;
  std::string type;  // collision | replan | recover | stop
  std::string detail;
  Vec2 position = Vec2::Zero();
};

struct TraceSample {
  double t = 0.0;
  Vec2 position = Vec2::Zero();
  Vec2 velocity = Vec2::Zero();
  Vec2 command = Vec2::Zero();
};

struct Metrics {
  double path_length = 0.0;
  double trajectory_time = 0.0;
  double control_energy = 0.0;
  double compute_time = 0.0;  // wall clock, machine dependent
  long closed_nodes = 0;
  bool success = false;
};

struct EpisodeResult {
  Outcome outcome = Outcome::Timeout;
  std::vector<TraceSample> trace;
  std::vector<Event> events;
  double planner_compute_time = 0.0;
  long planner_closed_nodes = 0;
  Metrics metrics;
};

Metrics compute_metrics(const EpisodeResult& episode, double control_dt);

// Closed-loop navigation: scan, plan on the accumulated known map (unknown
// space optimistic), track the refined trajectory, recover-and-repair on
// contact, stop-and-replan on a repeated collision, until goal / timeout /
// trapped.
EpisodeResult run_episode(const Scenario& scenario, std::uint64_t rng_seed);

}  // namespace bounce

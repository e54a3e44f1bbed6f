#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "bounce/search.hpp"
#include "bounce/sim.hpp"

namespace bounce {

nlohmann::json plan_to_json(const PrimitivePath& path, double recovery_time);
void write_plan_json(const std::string& file, const PrimitivePath& path, double recovery_time);

void write_trajectory_csv(const std::string& file, const PiecewisePolynomialTrajectory& traj,
                          double sample_rate);

nlohmann::json episode_to_json(const EpisodeResult& episode);
void write_episode_json(const std::string& file, const EpisodeResult& episode);
void write_trace_csv(const std::string& file, const EpisodeResult& episode);

struct BenchmarkRow {
  std::string scenario;
  std::uint64_t seed = 0;
  Metrics metrics;
};

// summary.csv: per-scenario mean/std in Table-style column order
// (compute time / N_p / trajectory time / control cost / success rate).
void write_benchmark_summary(const std::string& file, const std::vector<BenchmarkRow>& rows);

// metrics.csv: one deterministic row per episode (no wall-clock columns);
// byte-identical across reruns with the same seeds.
void write_benchmark_metrics(const std::string& file, const std::vector<BenchmarkRow>& rows);

// Overlay CSV (kind,id,t,x,y) joining the trajectory trace, obstacle
// outlines, and event markers of every episode artifact in the directory.
void export_plotdata(const std::string& artifacts_dir);

}  // namespace bounce

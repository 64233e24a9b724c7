#pragma once

#include "stflow/geometry.hpp"
#include "stflow/harmonic.hpp"
#include "stflow/types.hpp"

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace stflow {

struct StepConfig {
    double h = 1e-3;
    std::uint64_t seed = 0;
    int reorthonormalize_every = 1;
    // Negative-control switch: drop the (Ric - dg/dt)-damping of theta, leaving
    // plain transport. Destroys the martingale property on curved sources.
    bool omit_theta_damping = false;
};

struct StoppingRule {
    std::optional<double> radius; // tau_R in d_{g(t)}; nullopt = no radius stop
    double horizon = 1.0;
};

enum class StopReason { running, horizon, radius, chart_exit, numerical };

const char* to_string(StopReason reason);

/// Full per-path state: position, evolving orthonormal frame, the transports,
/// and the two anti-development accumulators. Times advance on the uniform
/// grid t = steps * h.
struct PathState {
    double t = 0.0;
    long steps = 0;
    Vec x;           // position in the source chart
    Mat frame;       // columns: g(t,x)-orthonormal basis of T_x M
    Mat p_riem;      // evolving-isometric parallel transport T_{x0}M -> T_x M
    Mat theta;       // damped parallel transport
    Vec b;           // anti-development, chart coordinates of T_{x0}M
    Vec y;           // u(t, x)
    Mat theta_tilde; // damped transport on the target along u(t, X_t)
    Vec a_def;       // deformed anti-development, coordinates of T_{y0}N

    bool alive = true;
    StopReason reason = StopReason::running;

    // frozen initial data
    Vec x0, y0;
    Mat g0, h0;
};

PathState init_path(const EvolvingManifold& space, const TargetManifold& target,
                    const SpaceTimeMap& map, const Vec& x0);

/// One Euler-Maruyama step of every component; dW holds m independent N(0, h)
/// draws. Transport matrices use midpoint Christoffel evaluation. A step that
/// would leave the chart freezes the path instead (reason = chart_exit).
void step(PathState& state, const EvolvingManifold& space, const TargetManifold& target,
          const SpaceTimeMap& map, const StepConfig& cfg, const Vec& dW);

/// Grid-time first-exit check for tau_R plus the horizon cutoff.
void stop_check(PathState& state, const EvolvingManifold& space, const StoppingRule& stop);

/// Convenience: fill dW with N(0, h) draws from the given engine.
void draw_noise(std::mt19937_64& rng, double h, Vec& dW);

// ---------------------------------------------------------------------------
// Ensembles

struct Snapshot {
    double t = 0.0;
    Vec x, y, b, a_def;
    double theta_norm = 0.0;           // operator norm (T_{x0}, g(0)) -> (T_x, g(t))
    double theta_tilde_inv_norm = 0.0; // operator norm of theta_tilde^{-1}
    Mat sandwich;                      // theta_tilde^{-1} du(t,x) theta  (n x m)
};

Snapshot snapshot(const PathState& state, const EvolvingManifold& space,
                  const TargetManifold& target, const SpaceTimeMap& map);

struct PathRecord {
    int path_id = 0;
    std::vector<Snapshot> at; // aligned with RecordingPlan::times
    Snapshot final;           // state at tau = min(tau_R, horizon)
    double tau = 0.0;
    StopReason reason = StopReason::running;
    bool failed = false;
    std::string error;
};

struct RecordingPlan {
    std::vector<double> times;
    static RecordingPlan bins(double horizon, int n_bins);
};

/// n_paths independent paths, each driven by the stream derived from
/// (cfg.seed, path index); reproducible bit-for-bit for fixed inputs,
/// independent of the thread count. Per-path failures are recorded, not
/// rethrown, unless every path fails.
std::vector<PathRecord> run_ensemble(const EvolvingManifold& space,
                                     const TargetManifold& target, const SpaceTimeMap& map,
                                     const Vec& x0, const StepConfig& cfg,
                                     const StoppingRule& stop, int n_paths,
                                     const RecordingPlan& plan, int n_threads = 0);

/// CSV with the documented header:
/// path,t,x<i>...,y<i>...,theta_norm,theta_tilde_inv_norm,b<i>...,adef<i>...
void write_ensemble_csv(std::ostream& os, const std::vector<PathRecord>& records,
                        int source_dim, int target_dim);

/// Deterministic parallel map over path indices. body(path_id, rng) runs with
/// an engine seeded from (seed, path_id) only.
void parallel_paths(int n_paths, std::uint64_t seed, int n_threads,
                    const std::function<void(int, std::mt19937_64&)>& body);

} // namespace stflow

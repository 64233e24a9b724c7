#include "stflow/stochastic.hpp"

#include "stflow/errors.hpp"

#include <Eigen/LU>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <thread>

namespace stflow {

const char* to_string(StopReason reason) {
    switch (reason) {
        case StopReason::running: return "running";
        case StopReason::horizon: return "horizon";
        case StopReason::radius: return "radius";
        case StopReason::chart_exit: return "chart_exit";
        case StopReason::numerical: return "numerical";
    }
    return "unknown";
}

PathState init_path(const EvolvingManifold& space, const TargetManifold& target,
                    const SpaceTimeMap& map, const Vec& x0) {
    const int m = space.dim, n = target.dim;
    if (map.source_dim != m || map.target_dim != n)
        throw ArgumentError("init_path: map dimensions do not match space/target");
    PathState st;
    st.x = x0;
    st.x0 = x0;
    MetricSample s = metric_at(space, 0.0, x0);
    st.g0 = s.g;
    // columns of L^{-T} are g-orthonormal when g = L L^T
    Eigen::LLT<Mat> llt(s.g);
    st.frame = llt.matrixL().transpose().solve(Mat::Identity(m, m));
    st.p_riem = Mat::Identity(m, m);
    st.theta = Mat::Identity(m, m);
    st.b = Vec::Zero(m);
    st.y = map.u(0.0, x0);
    st.y0 = st.y;
    st.h0 = target.metric(st.y).h;
    st.theta_tilde = Mat::Identity(n, n);
    st.a_def = Vec::Zero(n);
    return st;
}

void step(PathState& st, const EvolvingManifold& space, const TargetManifold& target,
          const SpaceTimeMap& map, const StepConfig& cfg, const Vec& dW) {
    if (!st.alive) return;
    const double h = cfg.h;
    const int m = space.dim;

    MetricSample s = space.metric(st.t, st.x);
    Eigen::LLT<Mat> llt(s.g);
    if (llt.info() != Eigen::Success)
        throw GeometryError(space.id + ": metric not positive definite along path");
    Mat g_inv = llt.solve(Mat::Identity(m, m));

    // position: dX^i = -1/2 g^{jk} Gamma^i_{jk} dt + (E dW)^i
    Vec noise = st.frame * dW;
    Vec dx = -0.5 * h * s.gamma.trace_with(g_inv) + noise;
    Vec x_new = st.x + dx;
    if (!x_new.allFinite()) throw NumericalError("step: non-finite position");
    if (x_new.norm() >= space.chart_radius) {
        st.alive = false;
        st.reason = StopReason::chart_exit;
        return;
    }

    // anti-developments use left-endpoint integrands
    Vec db = st.p_riem.partialPivLu().solve(noise);
    st.b += db;
    Mat du_val = map.du(st.t, st.x);
    Eigen::PartialPivLU<Mat> tt_lu(st.theta_tilde);
    st.a_def += tt_lu.solve(du_val * noise);

    // transports: midpoint Christoffels along the realized increment
    Christoffel gamma_mid = space.metric(st.t + h / 2.0, st.x + dx / 2.0).gamma;
    Mat frame_new = st.frame - gamma_mid.contract_columns(dx, st.frame);
    Mat p_new = st.p_riem - gamma_mid.contract_columns(dx, st.p_riem);
    Mat theta_new = st.theta - gamma_mid.contract_columns(dx, st.theta);
    if (space.evolving) {
        // -1/2 (dg/dt)^# keeps the transports isometries of the evolving metric
        Mat corr = 0.5 * h * (g_inv * s.dg_dt);
        frame_new -= corr * st.frame;
        p_new -= corr * st.p_riem;
        theta_new -= corr * st.theta;
    }
    if (!cfg.omit_theta_damping) {
        Mat damp = g_inv * (s.ricci - s.dg_dt);
        theta_new -= 0.5 * h * (damp * st.theta);
    }

    // image process and its damped transport
    Vec y_new = map.u(st.t + h, x_new);
    Vec dy = y_new - st.y;
    Christoffel tgamma_mid = target.metric((st.y + y_new) / 2.0).gamma;
    Mat tt_new = st.theta_tilde - tgamma_mid.contract_columns(dy, st.theta_tilde);
    if (target.curved) {
        Mat frame_img = du_val * st.frame; // columns du(t,x) xi_i
        for (int c = 0; c < tt_new.cols(); ++c) {
            Vec w = st.theta_tilde.col(c);
            Vec damp = Vec::Zero(target.dim);
            for (int i = 0; i < m; ++i) {
                Vec d_i = frame_img.col(i);
                damp += target.riemann(st.y, w, d_i, d_i);
            }
            tt_new.col(c) -= 0.5 * h * damp;
        }
    }

    st.t = (st.steps + 1) * h;
    st.steps += 1;
    st.x = x_new;
    st.y = y_new;
    st.frame = frame_new;
    st.p_riem = p_new;
    st.theta = theta_new;
    st.theta_tilde = tt_new;
    if (!st.theta.allFinite() || !st.theta_tilde.allFinite())
        throw NumericalError("step: non-finite transport");

    if (cfg.reorthonormalize_every > 0 && st.steps % cfg.reorthonormalize_every == 0) {
        Mat g_new = space.metric(st.t, st.x).g;
        gram_schmidt(st.frame, g_new);
    }
}

void stop_check(PathState& st, const EvolvingManifold& space, const StoppingRule& stop) {
    if (!st.alive) return;
    if (stop.radius) {
        if (!space.has_distance())
            throw CapabilityError(space.id + ": stopping radius needs an analytic distance");
        if (space.analytic_distance(st.t, st.x0, st.x) >= *stop.radius) {
            st.alive = false;
            st.reason = StopReason::radius;
            return;
        }
    }
    if (st.t >= stop.horizon - 1e-12) {
        st.alive = false;
        st.reason = StopReason::horizon;
    }
}

void draw_noise(std::mt19937_64& rng, double h, Vec& dW) {
    std::normal_distribution<double> normal(0.0, std::sqrt(h));
    for (int i = 0; i < dW.size(); ++i) dW[i] = normal(rng);
}

Snapshot snapshot(const PathState& st, const EvolvingManifold& space,
                  const TargetManifold& target, const SpaceTimeMap& map) {
    Snapshot snap;
    snap.t = st.t;
    snap.x = st.x;
    snap.y = st.y;
    snap.b = st.b;
    snap.a_def = st.a_def;
    Mat g_here = space.metric(st.t, st.x).g;
    Mat h_here = target.metric(st.y).h;
    snap.theta_norm = operator_norm(st.theta, st.g0, g_here);
    Mat tt_inv = st.theta_tilde.partialPivLu().solve(Mat::Identity(target.dim, target.dim));
    snap.theta_tilde_inv_norm = operator_norm(tt_inv, h_here, st.h0);
    snap.sandwich = tt_inv * map.du(st.t, st.x) * st.theta;
    return snap;
}

RecordingPlan RecordingPlan::bins(double horizon, int n_bins) {
    RecordingPlan plan;
    for (int i = 0; i <= n_bins; ++i) plan.times.push_back(horizon * i / n_bins);
    return plan;
}

void parallel_paths(int n_paths, std::uint64_t seed, int n_threads,
                    const std::function<void(int, std::mt19937_64&)>& body) {
    if (n_threads <= 0) {
        n_threads = static_cast<int>(std::thread::hardware_concurrency());
        if (n_threads <= 0) n_threads = 1;
    }
    n_threads = std::min(n_threads, n_paths);
    if (n_threads <= 1) {
        for (int i = 0; i < n_paths; ++i) {
            std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
            body(i, rng);
        }
        return;
    }
    std::atomic<int> next{0};
    auto worker = [&]() {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n_paths) return;
            std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
            body(i, rng);
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(n_threads);
    for (int t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
}

std::vector<PathRecord> run_ensemble(const EvolvingManifold& space,
                                     const TargetManifold& target, const SpaceTimeMap& map,
                                     const Vec& x0, const StepConfig& cfg,
                                     const StoppingRule& stop, int n_paths,
                                     const RecordingPlan& plan, int n_threads) {
    if (n_paths < 1) throw ArgumentError("run_ensemble: n_paths must be >= 1");
    std::vector<PathRecord> records(n_paths);

    parallel_paths(n_paths, cfg.seed, n_threads, [&](int id, std::mt19937_64& rng) {
        PathRecord& rec = records[id];
        rec.path_id = id;
        try {
            PathState st = init_path(space, target, map, x0);
            Vec dW(space.dim);
            size_t next_record = 0;
            auto record_due = [&]() {
                while (next_record < plan.times.size() &&
                       st.t >= plan.times[next_record] - cfg.h / 2.0) {
                    rec.at.push_back(snapshot(st, space, target, map));
                    ++next_record;
                }
            };
            stop_check(st, space, stop);
            record_due();
            while (st.alive) {
                draw_noise(rng, cfg.h, dW);
                step(st, space, target, map, cfg, dW);
                stop_check(st, space, stop);
                record_due();
            }
            rec.final = snapshot(st, space, target, map);
            rec.tau = st.t;
            rec.reason = st.reason;
            // stopped paths keep their tau-value at later recording times
            while (rec.at.size() < plan.times.size()) rec.at.push_back(rec.final);
        } catch (const std::exception& e) {
            rec.failed = true;
            rec.error = e.what();
        }
    });

    int failed = 0;
    for (const auto& rec : records) failed += rec.failed ? 1 : 0;
    if (failed == n_paths && n_paths > 0)
        throw NumericalError("run_ensemble: all paths failed: " + records.front().error);
    return records;
}

void write_ensemble_csv(std::ostream& os, const std::vector<PathRecord>& records,
                        int source_dim, int target_dim) {
    os << "path,t";
    for (int i = 0; i < source_dim; ++i) os << ",x" << i;
    for (int i = 0; i < target_dim; ++i) os << ",y" << i;
    os << ",theta_norm,theta_tilde_inv_norm";
    for (int i = 0; i < source_dim; ++i) os << ",b" << i;
    for (int i = 0; i < target_dim; ++i) os << ",adef" << i;
    os << "\n";
    char buf[64];
    auto num = [&](double v) {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << "," << buf;
    };
    for (const auto& rec : records) {
        if (rec.failed) continue;
        for (const auto& snap : rec.at) {
            os << rec.path_id;
            num(snap.t);
            for (int i = 0; i < source_dim; ++i) num(snap.x[i]);
            for (int i = 0; i < target_dim; ++i) num(snap.y[i]);
            num(snap.theta_norm);
            num(snap.theta_tilde_inv_norm);
            for (int i = 0; i < source_dim; ++i) num(snap.b[i]);
            for (int i = 0; i < target_dim; ++i) num(snap.a_def[i]);
            os << "\n";
        }
    }
}

} // namespace stflow

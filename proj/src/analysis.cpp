#include "stflow/analysis.hpp"

#include "stflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>

namespace stflow {

namespace {

constexpr double kPi = std::numbers::pi;

MeanSe reduce(const std::vector<double>& values) {
    RunningStat stat;
    for (double v : values) stat.add(v);
    return stat.result();
}

double combined_se(const MeanSe& a, const MeanSe& b) {
    return std::sqrt(a.se * a.se + b.se * b.se);
}

double norm_g(const Vec& v, const Mat& g) { return std::sqrt(v.dot(g * v)); }

// |du|^2 in the Hilbert-Schmidt sense: trace(g^{-1} du^T h du).
double du_hs2(const SpaceTimeMap& map, const EvolvingManifold& space,
              const TargetManifold& target, double t, const Vec& x, const Vec& y) {
    Mat J = map.du(t, x);
    Mat h = target.metric(y).h;
    Mat g = space.metric(t, x).g;
    Mat M = J.transpose() * h * J;
    return g.llt().solve(M).trace();
}

Mat sandwich_of(const PathState& st, const SpaceTimeMap& map) {
    return st.theta_tilde.partialPivLu().solve(map.du(st.t, st.x) * st.theta);
}

} // namespace

// ---------------------------------------------------------------------------
// Reporting plumbing

void RunningStat::add(double x) {
    ++n_;
    double d = x - mean_;
    mean_ += d / n_;
    m2_ += d * (x - mean_);
}

MeanSe RunningStat::result() const {
    MeanSe r;
    r.n = n_;
    r.mean = mean_;
    r.se = n_ > 1 ? std::sqrt(m2_ / (n_ - 1) / n_) : 0.0;
    return r;
}

void PerPathTable::write_csv(std::ostream& os) const {
    for (size_t i = 0; i < columns.size(); ++i) os << (i ? "," : "") << columns[i];
    os << "\n";
    char buf[64];
    for (const auto& row : rows) {
        for (size_t i = 0; i < row.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
            os << (i ? "," : "") << buf;
        }
        os << "\n";
    }
}

bool ExperimentReport::all_pass() const {
    for (const auto& a : assertions)
        if (!a.pass) return false;
    return true;
}

nlohmann::json ExperimentReport::to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["config"] = config;
    j["estimates"] = estimates;
    j["wall_seconds"] = wall_seconds;
    j["pass"] = all_pass();
    j["assertions"] = nlohmann::json::array();
    for (const auto& a : assertions)
        j["assertions"].push_back({{"name", a.name},
                                   {"pass", a.pass},
                                   {"value", a.value},
                                   {"threshold", a.threshold},
                                   {"detail", a.detail}});
    return j;
}

void ExperimentReport::print_summary(std::ostream& os) const {
    os << "experiment: " << experiment << "\n";
    for (const auto& a : assertions)
        os << "  [" << (a.pass ? "PASS" : "FAIL") << "] " << a.name << "  value=" << a.value
           << " threshold=" << a.threshold << (a.detail.empty() ? "" : "  (" + a.detail + ")")
           << "\n";
    os << (all_pass() ? "ALL PASS" : "FAILURES PRESENT") << "\n";
}

// ---------------------------------------------------------------------------
// Cutoff and l-process

double CutoffField::value(const EvolvingManifold& space, double t, const Vec& y) const {
    if (!space.has_distance())
        throw CapabilityError("CutoffField: space has no analytic distance");
    return std::cos(kPi / (2.0 * R) * space.analytic_distance(t, center, y));
}

double EllParams::h1(double r) const {
    r = std::clamp(r, 0.0, t_budget);
    const double a = 2.0 * cpR / p;
    if (a * t_budget < 1e-12) return 1.0 - r / t_budget;
    return 1.0 - std::expm1(-a * r) / std::expm1(-a * t_budget);
}

double EllParams::h1dot(double r) const {
    const double a = 2.0 * cpR / p;
    if (a * t_budget < 1e-12) return -1.0 / t_budget;
    return a * std::exp(-a * r) / std::expm1(-a * t_budget);
}

EllParams build_ell(const Vec& v, double p, double cpR, double t_budget) {
    if (p < 2.0)
        throw ArgumentError("build_ell: the moment bound requires p >= 2");
    if (!(t_budget > 0.0) || cpR < 0.0)
        throw ArgumentError("build_ell: t_budget must be positive and c_p(R) nonnegative");
    return EllParams{v, p, cpR, t_budget};
}

Vec EllProcess::ell() const { return Vec(params.h1(h0) * params.v); }

Vec EllProcess::ell_dot(double f_value) const {
    if (exhausted()) return Vec(Vec::Zero(params.v.size()));
    return Vec(params.h1dot(h0) / (f_value * f_value) * params.v);
}

void EllProcess::advance(double f_value, double h) {
    if (!exhausted()) h0 = std::min(params.t_budget, h0 + h / (f_value * f_value));
}

// ---------------------------------------------------------------------------
// Martingale drift test

DriftTestReport martingale_drift_test(const EvolvingManifold& space,
                                      const TargetManifold& target, const SpaceTimeMap& map,
                                      const Vec& x0, const Vec& v, const McConfig& mc,
                                      int n_bins, MartFunctional functional) {
    if (mc.n_paths < 8) throw StatisticsError("martingale_drift_test: too few paths");
    if (n_bins < 1) throw ArgumentError("martingale_drift_test: need at least one bin");
    const int n = target.dim;
    const double horizon = mc.stop.horizon;
    const double ramp_T = horizon; // l(s) = (1 - s/T) v for the N/M processes

    // per path, functional values at bin boundaries, flattened (bin, comp)
    std::vector<std::vector<double>> values(mc.n_paths);
    std::vector<char> ok(mc.n_paths, 0);

    parallel_paths(mc.n_paths, mc.step.seed, mc.threads, [&](int id, std::mt19937_64& rng) {
        try {
            PathState st = init_path(space, target, map, x0);
            Vec dW(space.dim);
            Vec running_int = Vec::Zero(n); // int F l' ds (N-process)
            double S = 0.0;                 // int (P^{-1} Theta l') . dB (M-process)
            std::vector<double>& out = values[id];
            out.reserve(static_cast<size_t>(n_bins + 1) * n);
            int next_bin = 0;
            auto value_now = [&]() {
                Mat F = sandwich_of(st, map);
                Vec val;
                switch (functional) {
                    case MartFunctional::sandwich: val = F * v; break;
                    case MartFunctional::n_process: {
                        double ramp = std::max(0.0, 1.0 - st.t / ramp_T);
                        val = F * (ramp * v) - running_int;
                        break;
                    }
                    case MartFunctional::m_process: {
                        double ramp = std::max(0.0, 1.0 - st.t / ramp_T);
                        val = F * (ramp * v) - S * st.a_def;
                        break;
                    }
                }
                return val;
            };
            auto record_due = [&]() {
                while (next_bin <= n_bins &&
                       st.t >= horizon * next_bin / n_bins - mc.step.h / 2.0) {
                    Vec val = value_now();
                    for (int c = 0; c < n; ++c) out.push_back(val[c]);
                    ++next_bin;
                }
            };
            stop_check(st, space, mc.stop);
            record_due();
            while (st.alive) {
                if (functional != MartFunctional::sandwich && st.t < ramp_T) {
                    Vec ldot = (-1.0 / ramp_T) * v;
                    Mat F = sandwich_of(st, map);
                    running_int += (F * ldot) * mc.step.h;
                    Vec w = st.p_riem.partialPivLu().solve(st.theta * ldot);
                    Vec b_before = st.b;
                    Vec dWs(space.dim);
                    draw_noise(rng, mc.step.h, dWs);
                    step(st, space, target, map, mc.step, dWs);
                    S += w.dot(st.g0 * (st.b - b_before));
                } else {
                    draw_noise(rng, mc.step.h, dW);
                    step(st, space, target, map, mc.step, dW);
                }
                stop_check(st, space, mc.stop);
                record_due();
            }
            // stopped martingales stay at their tau-value
            while (next_bin <= n_bins) {
                Vec val = value_now();
                for (int c = 0; c < n; ++c) out.push_back(val[c]);
                ++next_bin;
            }
            ok[id] = 1;
        } catch (const std::exception&) {
            ok[id] = 0;
        }
    });

    DriftTestReport report;
    report.n_bins = n_bins;
    report.n_comps = n;
    for (int bin = 0; bin < n_bins; ++bin)
        for (int c = 0; c < n; ++c) {
            RunningStat stat;
            for (int id = 0; id < mc.n_paths; ++id) {
                if (!ok[id]) continue;
                const auto& val = values[id];
                double inc = val[(bin + 1) * n + c] - val[bin * n + c];
                stat.add(inc);
            }
            MeanSe ms = stat.result();
            if (ms.n < 8) throw StatisticsError("martingale_drift_test: too few usable paths");
            report.n_paths_used = static_cast<int>(ms.n);
            DriftCell cell;
            cell.bin = bin;
            cell.comp = c;
            cell.mean_increment = ms.mean;
            cell.se = ms.se;
            cell.pass = std::abs(ms.mean) <= 3.0 * ms.se + 1e-300;
            report.cells.push_back(cell);
            if (cell.pass) ++report.n_pass;
        }
    report.pass_fraction = static_cast<double>(report.n_pass) / report.cells.size();
    report.pass = report.pass_fraction >= 0.95;
    report.per_path.columns.push_back("path");
    for (int c = 0; c < n; ++c)
        report.per_path.columns.push_back("F_final_" + std::to_string(c));
    for (int id = 0; id < mc.n_paths; ++id) {
        if (!ok[id]) continue;
        std::vector<double> row{static_cast<double>(id)};
        for (int c = 0; c < n; ++c) row.push_back(values[id][n_bins * n + c]);
        report.per_path.rows.push_back(std::move(row));
    }
    return report;
}

nlohmann::json DriftTestReport::to_json() const {
    nlohmann::json j;
    j["n_bins"] = n_bins;
    j["n_comps"] = n_comps;
    j["n_paths_used"] = n_paths_used;
    j["pass_fraction"] = pass_fraction;
    j["pass"] = pass;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : cells)
        j["cells"].push_back({{"bin", c.bin},
                              {"comp", c.comp},
                              {"mean", c.mean_increment},
                              {"se", c.se},
                              {"pass", c.pass}});
    return j;
}

// ---------------------------------------------------------------------------
// Representation formulas

RepresentationReport estimate_representation(const EvolvingManifold& space,
                                             const TargetManifold& target,
                                             const SpaceTimeMap& map, const Vec& x0,
                                             const Vec& v, double t, const McConfig& mc,
                                             std::optional<double> R,
                                             std::optional<EllParams> ell_in) {
    const int n = target.dim;
    RepresentationReport report;
    report.reference = map.du(0.0, x0) * v;
    report.stopped = R.has_value();

    // hypothesis spot checks; failures warn, never abort
    try {
        std::vector<std::pair<double, Vec>> probe;
        for (double tt : {0.0, t / 2.0, t})
            for (double dx : {-0.1, 0.0, 0.1}) {
                Vec x = x0;
                x[0] += dx;
                if (x.norm() < space.chart_radius) probe.push_back({tt, x});
            }
        SuperRicciReport sr = validate_super_ricci(space, probe);
        if (!sr.flag)
            report.warnings.push_back("backward super Ricci flow check failed on probe grid");
        double sup_du = 0.0;
        for (const auto& [tt, x] : probe)
            sup_du = std::max(sup_du, std::sqrt(du_hs2(map, space, target, tt, x, map.u(tt, x))));
        if (!std::isfinite(sup_du) || sup_du > 1e6)
            report.warnings.push_back("|du| unbounded on probe grid");
        if (!std::isfinite(target.kappa(map.u(0.0, x0))))
            report.warnings.push_back("target curvature bound not finite");
    } catch (const std::exception& e) {
        report.warnings.push_back(std::string("hypothesis check skipped: ") + e.what());
    }

    StoppingRule stop{R, t};
    std::vector<std::vector<double>> est_m(n, std::vector<double>(mc.n_paths, 0.0));
    std::vector<std::vector<double>> est_n(n, std::vector<double>(mc.n_paths, 0.0));
    std::vector<char> ok(mc.n_paths, 0);
    std::vector<char> ell_active(mc.n_paths, 0);

    EllParams ell_params;
    if (report.stopped) {
        if (ell_in) {
            ell_params = *ell_in;
        } else {
            double cpR = compute_cpR(space, *R, 2.0);
            ell_params = build_ell(v, 2.0, cpR, t);
        }
    }

    parallel_paths(mc.n_paths, mc.step.seed, mc.threads, [&](int id, std::mt19937_64& rng) {
        try {
            PathState st = init_path(space, target, map, x0);
            Vec dW(space.dim);
            if (!report.stopped) {
                stop_check(st, space, stop);
                while (st.alive) {
                    draw_noise(rng, mc.step.h, dW);
                    step(st, space, target, map, mc.step, dW);
                    stop_check(st, space, stop);
                }
                Vec val = sandwich_of(st, map) * v;
                for (int c = 0; c < n; ++c) est_m[c][id] = val[c];
            } else {
                EllProcess ell{ell_params, 0.0};
                CutoffField f{x0, *R, ell_params.p};
                double S = 0.0;
                Vec running_int = Vec::Zero(n);
                stop_check(st, space, stop);
                while (st.alive) {
                    double fv = f.value(space, st.t, st.x);
                    if (fv <= 1e-12) break;
                    Vec ldot = ell.ell_dot(fv);
                    Mat F = sandwich_of(st, map);
                    running_int += (F * ldot) * mc.step.h;
                    Vec w = st.p_riem.partialPivLu().solve(st.theta * ldot);
                    Vec b_before = st.b;
                    draw_noise(rng, mc.step.h, dW);
                    step(st, space, target, map, mc.step, dW);
                    S += w.dot(st.g0 * (st.b - b_before));
                    ell.advance(fv, mc.step.h);
                    stop_check(st, space, stop);
                }
                Mat F = sandwich_of(st, map);
                Vec boundary = F * ell.ell();
                Vec m_val = boundary - S * st.a_def;
                Vec n_val = boundary - running_int;
                for (int c = 0; c < n; ++c) {
                    est_m[c][id] = m_val[c];
                    est_n[c][id] = n_val[c];
                }
                ell_active[id] = ell.exhausted() ? 0 : 1;
            }
            ok[id] = 1;
        } catch (const std::exception&) {
            ok[id] = 0;
        }
    });

    auto reduce_comp = [&](const std::vector<std::vector<double>>& per_comp, Vec& mean, Vec& se) {
        mean = Vec::Zero(n);
        se = Vec::Zero(n);
        for (int c = 0; c < n; ++c) {
            RunningStat stat;
            for (int id = 0; id < mc.n_paths; ++id)
                if (ok[id]) stat.add(per_comp[c][id]);
            MeanSe ms = stat.result();
            if (ms.n < 2) throw StatisticsError("estimate_representation: too few paths");
            mean[c] = ms.mean;
            se[c] = ms.se;
        }
    };
    reduce_comp(est_m, report.estimate, report.se);
    if (report.stopped) {
        reduce_comp(est_n, report.estimate_alt, report.se_alt);
        long active = 0, total = 0;
        for (int id = 0; id < mc.n_paths; ++id)
            if (ok[id]) {
                ++total;
                active += ell_active[id];
            }
        report.frac_ell_active_at_tau = total ? static_cast<double>(active) / total : 0.0;
    }
    report.within_3se = true;
    for (int c = 0; c < n; ++c) {
        double tol = 3.0 * report.se[c] + 1e-12;
        if (std::abs(report.estimate[c] - report.reference[c]) > tol) report.within_3se = false;
    }
    report.per_path.columns.push_back("path");
    for (int c = 0; c < n; ++c) report.per_path.columns.push_back("value_" + std::to_string(c));
    for (int id = 0; id < mc.n_paths; ++id) {
        if (!ok[id]) continue;
        std::vector<double> row{static_cast<double>(id)};
        for (int c = 0; c < n; ++c) row.push_back(est_m[c][id]);
        report.per_path.rows.push_back(std::move(row));
    }
    return report;
}

nlohmann::json RepresentationReport::to_json() const {
    auto vec = [](const Vec& v) {
        std::vector<double> out(v.data(), v.data() + v.size());
        return out;
    };
    nlohmann::json j;
    j["estimate"] = vec(estimate);
    j["se"] = vec(se);
    j["reference"] = vec(reference);
    j["stopped"] = stopped;
    j["within_3se"] = within_3se;
    j["warnings"] = warnings;
    if (stopped) {
        j["estimate_n_route"] = vec(estimate_alt);
        j["se_n_route"] = vec(se_alt);
        j["frac_ell_active_at_tau"] = frac_ell_active_at_tau;
    }
    return j;
}

// ---------------------------------------------------------------------------
// c_p(R)

double compute_cpR(const EvolvingManifold& space, double R, double p, int n_rho, int n_t,
                   double horizon) {
    if (!space.radial)
        throw CapabilityError("compute_cpR: needs a rotationally symmetric radial profile");
    if (R <= 0.0 || p < 1.0) throw ArgumentError("compute_cpR: need R > 0, p >= 1");
    const RadialProfile& rad = *space.radial;
    const double a = kPi / (2.0 * R);
    const double rho_min = 1e-3 * R;
    const int nt = space.evolving ? std::max(1, n_t) : 1;
    double sup = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < nt; ++it) {
        const double t = nt == 1 ? 0.0 : horizon * it / (nt - 1);
        for (int i = 0; i <= n_rho; ++i) {
            const double rho = rho_min + (R - rho_min) * i / n_rho;
            const double r = rad.r_of_rho(t, rho);
            const double rho_t = rad.drho_dt(t, r);
            const double lap = rad.laplace_rho(t, r);
            const double fb = std::cos(a * rho);
            const double fp = -a * std::sin(a * rho);
            const double fpp = -a * a * fb;
            const double expr = 0.5 * p * (p + 1.0) * fp * fp -
                                p * fb * (fp * rho_t + 0.5 * fpp + 0.5 * fp * lap);
            sup = std::max(sup, expr);
        }
    }
    return sup;
}

// ---------------------------------------------------------------------------
// First factor

FirstFactorReport first_factor(const EvolvingManifold& space, const Vec& x0,
                               const EllParams& ell_params, const McConfig& mc, double R) {
    if (ell_params.p < 2.0) throw ArgumentError("first_factor: requires p >= 2");
    FirstFactorReport report;
    report.p = ell_params.p;
    report.cpR = ell_params.cpR;
    report.R = R;
    report.t_budget = ell_params.t_budget;

    // the integrand never involves the map; a constant map keeps steps cheap
    TargetManifold target = make_target("flat", 1);
    SpaceTimeMap map = make_map("constant", space.dim, 1);

    StoppingRule stop{R, mc.stop.horizon};
    std::vector<double> s_pow(mc.n_paths, 0.0), q_iso(mc.n_paths, 0.0), l2(mc.n_paths, 0.0);
    std::vector<char> ok(mc.n_paths, 0);

    parallel_paths(mc.n_paths, mc.step.seed, mc.threads, [&](int id, std::mt19937_64& rng) {
        try {
            PathState st = init_path(space, target, map, x0);
            EllProcess ell{ell_params, 0.0};
            CutoffField f{x0, R, ell_params.p};
            double S = 0.0, Q = 0.0, L2 = 0.0;
            Vec dW(space.dim);
            stop_check(st, space, stop);
            while (st.alive && !ell.exhausted()) {
                double fv = f.value(space, st.t, st.x);
                if (fv <= 1e-12) break;
                Vec ldot = ell.ell_dot(fv);
                Vec w = st.p_riem.partialPivLu().solve(st.theta * ldot);
                Vec b_before = st.b;
                draw_noise(rng, mc.step.h, dW);
                step(st, space, target, map, mc.step, dW);
                S += w.dot(st.g0 * (st.b - b_before));
                Q += w.dot(st.g0 * w) * mc.step.h;
                L2 += ldot.dot(st.g0 * ldot) * mc.step.h;
                ell.advance(fv, mc.step.h);
                stop_check(st, space, stop);
            }
            s_pow[id] = std::pow(std::abs(S), ell_params.p);
            q_iso[id] = Q;
            l2[id] = L2; // (1+eps)/2 exponent with eps = 1
            ok[id] = 1;
        } catch (const std::exception&) {
            ok[id] = 0;
        }
    });

    auto masked = [&](const std::vector<double>& vals) {
        RunningStat stat;
        for (int id = 0; id < mc.n_paths; ++id)
            if (ok[id]) stat.add(vals[id]);
        return stat.result();
    };
    report.lhs_direct = masked(s_pow);
    report.lhs_isometry = masked(q_iso);
    report.ell_integrability = masked(l2);

    const double c = ell_params.cpR, p = ell_params.p, t = ell_params.t_budget;
    MetricSample s0 = metric_at(space, 0.0, x0);
    const double vnorm = norm_g(ell_params.v, s0.g);
    if (c > 1e-14) {
        const double denom = -std::expm1(-2.0 * c * t / p);
        report.rhs = std::pow(2.0 * c / p, p / 2.0) / std::pow(denom, p / 2.0 + 1.0) *
                     std::pow(vnorm, p);
    } else {
        // the closed form blows up like 1/c as c -> 0
        report.rhs = std::numeric_limits<double>::infinity();
    }
    report.pass_bound = report.lhs_direct.mean <= report.rhs + 3.0 * report.lhs_direct.se;
    report.pass_routes_agree =
        std::abs(report.lhs_direct.mean - report.lhs_isometry.mean) <=
        3.0 * combined_se(report.lhs_direct, report.lhs_isometry) + 1e-12;
    report.per_path.columns = {"path", "stoch_integral_pow_p", "ito_isometry", "ell_dot_sq_int"};
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id])
            report.per_path.rows.push_back(
                {static_cast<double>(id), s_pow[id], q_iso[id], l2[id]});
    return report;
}

nlohmann::json FirstFactorReport::to_json() const {
    auto ms = [](const MeanSe& m) {
        return nlohmann::json{{"mean", m.mean}, {"se", m.se}, {"n", m.n}};
    };
    return nlohmann::json{{"p", p},
                          {"cpR", cpR},
                          {"R", R},
                          {"t_budget", t_budget},
                          {"lhs_direct", ms(lhs_direct)},
                          {"lhs_isometry", ms(lhs_isometry)},
                          {"rhs_closed_form", rhs},
                          {"ell_integrability", ms(ell_integrability)},
                          {"pass_bound", pass_bound},
                          {"pass_routes_agree", pass_routes_agree}};
}

// ---------------------------------------------------------------------------
// f^{-p} supermartingale inequality

FSuperReport f_supermartingale_check(const EvolvingManifold& space, const Vec& x0, double p,
                                     double R, double t_budget, const McConfig& mc,
                                     std::optional<double> cpR_in) {
    FSuperReport report;
    report.p = p;
    report.R = R;
    report.t_budget = t_budget;
    report.cpR = cpR_in ? *cpR_in : compute_cpR(space, R, p);

    TargetManifold target = make_target("flat", 1);
    SpaceTimeMap map = make_map("constant", space.dim, 1);
    std::vector<double> lhs(mc.n_paths, 0.0), rhs(mc.n_paths, 0.0);
    std::vector<char> ok(mc.n_paths, 0);

    parallel_paths(mc.n_paths, mc.step.seed, mc.threads, [&](int id, std::mt19937_64& rng) {
        try {
            PathState st = init_path(space, target, map, x0);
            CutoffField f{x0, R, p};
            double T = 0.0;
            double lhs_i = 1.0, rhs_i = 1.0; // tau = 0 values
            Vec dW(space.dim);
            for (;;) {
                double fv = f.value(space, st.t, st.x);
                if (fv <= 1e-12) break; // keep the last inside values
                lhs_i = std::pow(fv, -p);
                rhs_i = std::exp(report.cpR * T);
                if (T >= t_budget - 1e-15) break;           // sigma(t_budget)
                if (st.t >= mc.stop.horizon - 1e-12) break; // bounded-time cap
                double f2 = fv * fv;
                draw_noise(rng, mc.step.h, dW);
                step(st, space, target, map, mc.step, dW);
                if (!st.alive) break; // chart exit: freeze at the pre-exit state
                if (space.analytic_distance(st.t, x0, st.x) >= R)
                    break; // grid tau_R: freeze strictly inside the ball
                T += mc.step.h / f2;
            }
            lhs[id] = lhs_i;
            rhs[id] = rhs_i;
            ok[id] = 1;
        } catch (const std::exception&) {
            ok[id] = 0;
        }
    });

    RunningStat ls, rs;
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id]) {
            ls.add(lhs[id]);
            rs.add(rhs[id]);
        }
    report.lhs = ls.result();
    report.rhs = rs.result();
    report.pass = report.lhs.mean <= report.rhs.mean + 3.0 * combined_se(report.lhs, report.rhs);
    report.per_path.columns = {"path", "f_pow_minus_p", "exp_cpR_T"};
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id])
            report.per_path.rows.push_back({static_cast<double>(id), lhs[id], rhs[id]});
    return report;
}

nlohmann::json FSuperReport::to_json() const {
    return nlohmann::json{{"p", p},
                          {"R", R},
                          {"cpR", cpR},
                          {"t_budget", t_budget},
                          {"lhs_mean", lhs.mean},
                          {"lhs_se", lhs.se},
                          {"rhs_mean", rhs.mean},
                          {"rhs_se", rhs.se},
                          {"pass", pass}};
}

// ---------------------------------------------------------------------------
// Second factor

SecondFactorReport second_factor_bounds(const EvolvingManifold& space,
                                        const TargetManifold& target, const SpaceTimeMap& map,
                                        const Vec& x0, double q, const McConfig& mc,
                                        std::optional<double> b_ratio) {
    SecondFactorReport report;
    report.q = q;

    std::vector<double> adev(mc.n_paths, 0.0), sf_val(mc.n_paths, 0.0), dist2(mc.n_paths, 0.0);
    std::vector<double> ratio_sup(mc.n_paths, -std::numeric_limits<double>::infinity());
    std::vector<double> kappa_sup(mc.n_paths, -std::numeric_limits<double>::infinity());
    std::vector<char> saw_positive_K(mc.n_paths, 0);
    std::vector<char> ok(mc.n_paths, 0);

    parallel_paths(mc.n_paths, mc.step.seed, mc.threads, [&](int id, std::mt19937_64& rng) {
        try {
            PathState st = init_path(space, target, map, x0);
            double sf_inner = 0.0, sf_outer = 0.0;
            Vec dW(space.dim);
            long k = 0;
            stop_check(st, space, mc.stop);
            while (st.alive) {
                double kap = target.kappa(st.y);
                double du2 = du_hs2(map, space, target, st.t, st.x, st.y);
                sf_outer += du2 * std::exp(sf_inner) * mc.step.h;
                sf_inner += du2 * std::max(kap, 0.0) * mc.step.h;
                kappa_sup[id] = std::max(kappa_sup[id], kap);
                if (k % 16 == 0) {
                    DilatationProfile prof = dilatation(map, space, target, st.t, st.x);
                    if (prof.K > 0.0) {
                        saw_positive_K[id] = 1;
                        ratio_sup[id] = std::max(ratio_sup[id], kap / prof.K);
                    }
                }
                ++k;
                draw_noise(rng, mc.step.h, dW);
                step(st, space, target, map, mc.step, dW);
                stop_check(st, space, mc.stop);
            }
            double a2 = st.a_def.dot(st.h0 * st.a_def);
            adev[id] = std::pow(a2, q / 2.0);
            sf_val[id] = std::pow(std::max(sf_outer, 0.0), q / 2.0);
            double dn = target.distance(st.y, st.y0);
            dist2[id] = dn * dn;
            ok[id] = 1;
        } catch (const std::exception&) {
            ok[id] = 0;
        }
    });

    auto masked = [&](const std::vector<double>& vals) {
        RunningStat stat;
        for (int id = 0; id < mc.n_paths; ++id)
            if (ok[id]) stat.add(vals[id]);
        return stat.result();
    };
    report.adev_moment = masked(adev);

    double kappa_max = -std::numeric_limits<double>::infinity();
    double ratio_max = -std::numeric_limits<double>::infinity();
    bool any_positive_K = false;
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id]) {
            kappa_max = std::max(kappa_max, kappa_sup[id]);
            if (saw_positive_K[id]) {
                any_positive_K = true;
                ratio_max = std::max(ratio_max, ratio_sup[id]);
            }
        }
    report.dilatation_ratio_note = any_positive_K ? ratio_max : 0.0;

    // sf: E|A|^q <= C_q E[(int |du|^2 exp(int |du|^2 kappa_+ dr) ds)^{q/2}]
    {
        SecondFactorBound b;
        b.name = "sf";
        b.applicable = true;
        MeanSe v = masked(sf_val);
        b.value = v.mean;
        b.se = v.se;
        if (q != 2.0) b.reason = "C_q treated as 1 (shape check only)";
        b.pass = report.adev_moment.mean <=
                 b.value + 3.0 * combined_se(report.adev_moment, v);
        report.bounds.push_back(b);
    }
    // ch: nonpositive curvature, q = 2: E|A|^2 <= E dist^2
    {
        SecondFactorBound b;
        b.name = "ch";
        if (q != 2.0) {
            b.reason = "stated for q = 2";
        } else if (kappa_max > 1e-12) {
            b.reason = "target curvature not nonpositive along paths";
        } else {
            b.applicable = true;
            MeanSe v = masked(dist2);
            b.value = v.mean;
            b.se = v.se;
            b.pass = report.adev_moment.mean <=
                     b.value + 3.0 * combined_se(report.adev_moment, v);
        }
        report.bounds.push_back(b);
    }
    // bdc: kappa/K <= -b < 0 gives E|A|^2 <= 1/b
    {
        SecondFactorBound b;
        b.name = "bdc";
        std::optional<double> bval = b_ratio;
        if (!bval) {
            if (!any_positive_K)
                b.reason = "dilatation ratio degenerate (K = 0 along paths); supply b";
            else if (ratio_max >= 0.0)
                b.reason = "kappa/K not uniformly negative along paths";
            else
                bval = -ratio_max;
        }
        if (bval) {
            if (q != 2.0) {
                b.reason = "stated for q = 2";
            } else {
                b.applicable = true;
                b.value = 1.0 / *bval;
                b.se = 0.0;
                b.pass = report.adev_moment.mean <= b.value + 3.0 * report.adev_moment.se;
            }
        }
        report.bounds.push_back(b);
    }
    report.per_path.columns = {"path", "adev_pow_q", "sf_integrand_pow_q2", "dist_sq"};
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id])
            report.per_path.rows.push_back(
                {static_cast<double>(id), adev[id], sf_val[id], dist2[id]});
    return report;
}

nlohmann::json SecondFactorReport::to_json() const {
    nlohmann::json j;
    j["q"] = q;
    j["adev_moment"] = {{"mean", adev_moment.mean}, {"se", adev_moment.se}, {"n", adev_moment.n}};
    j["dilatation_ratio_sup"] = dilatation_ratio_note;
    j["bounds"] = nlohmann::json::array();
    for (const auto& b : bounds)
        j["bounds"].push_back({{"name", b.name},
                               {"applicable", b.applicable},
                               {"reason", b.reason},
                               {"value", b.value},
                               {"se", b.se},
                               {"pass", b.pass}});
    return j;
}

// ---------------------------------------------------------------------------
// Inverse damped transport bound

InvDampReport inv_damped_bound_check(const EvolvingManifold& space,
                                     const TargetManifold& target, const SpaceTimeMap& map,
                                     const Vec& x0, const McConfig& mc) {
    InvDampReport report;
    report.tolerance = 10.0 * mc.step.h;

    std::vector<double> worst(mc.n_paths, -std::numeric_limits<double>::infinity());
    std::vector<long> checked(mc.n_paths, 0);
    std::vector<char> ok(mc.n_paths, 0);
    const int n = target.dim;

    parallel_paths(mc.n_paths, mc.step.seed, mc.threads, [&](int id, std::mt19937_64& rng) {
        try {
            PathState st = init_path(space, target, map, x0);
            double L_int = 0.0;
            Vec dW(space.dim);
            stop_check(st, space, mc.stop);
            while (true) {
                Mat h_here = target.metric(st.y).h;
                Mat tt_inv = st.theta_tilde.partialPivLu().solve(Mat::Identity(n, n));
                double nrm = operator_norm(tt_inv, h_here, st.h0);
                worst[id] = std::max(worst[id], nrm - std::exp(0.5 * L_int));
                ++checked[id];
                if (!st.alive) break;
                DilatationProfile prof = dilatation(map, space, target, st.t, st.x);
                double kap = target.kappa(st.y);
                double du2 = prof.lambdas.sum();
                double tail = du2 - prof.lambdas[0];
                double L = kap >= 0.0 ? du2 * kap : tail * kap;
                L_int += L * mc.step.h;
                draw_noise(rng, mc.step.h, dW);
                step(st, space, target, map, mc.step, dW);
                stop_check(st, space, mc.stop);
            }
            ok[id] = 1;
        } catch (const std::exception&) {
            ok[id] = 0;
        }
    });

    report.max_violation = -std::numeric_limits<double>::infinity();
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id]) {
            report.max_violation = std::max(report.max_violation, worst[id]);
            report.states_checked += checked[id];
        }
    report.pass = report.max_violation <= report.tolerance;
    report.per_path.columns = {"path", "max_violation"};
    for (int id = 0; id < mc.n_paths; ++id)
        if (ok[id]) report.per_path.rows.push_back({static_cast<double>(id), worst[id]});
    return report;
}

nlohmann::json InvDampReport::to_json() const {
    return nlohmann::json{{"max_violation", max_violation},
                          {"tolerance", tolerance},
                          {"states_checked", states_checked},
                          {"pass", pass}};
}

// ---------------------------------------------------------------------------
// Liouville pipelines

LiouvilleReport liouville_bound(const EvolvingManifold& space, const TargetManifold& target,
                                const SpaceTimeMap& map, const Vec& x0, const Vec& v,
                                double t, double R, double p, double q, const McConfig& mc) {
    if (std::abs(1.0 / p + 1.0 / q - 1.0) > 1e-9)
        throw ArgumentError("liouville_bound: need 1/p + 1/q = 1");
    LiouvilleReport report;
    MetricSample s0 = metric_at(space, 0.0, x0);
    const double vnorm = norm_g(v, s0.g);

    // shared hypothesis scans
    std::vector<std::pair<double, Vec>> probe;
    for (double tt : {0.0, t / 2.0, t})
        for (double r : {0.0, 0.3, 0.6})
            for (int axis = 0; axis < space.dim; ++axis) {
                Vec x = x0;
                x[axis] += r;
                if (x.norm() < space.chart_radius) probe.push_back({tt, x});
            }
    SuperRicciReport sr = validate_super_ricci(space, probe);
    double kappa_img = -std::numeric_limits<double>::infinity();
    double sup_du_t = 0.0, sup_dist = 0.0;
    Vec y_base = map.u(0.0, x0);
    for (const auto& [tt, x] : probe) {
        Vec y = map.u(tt, x);
        kappa_img = std::max(kappa_img, target.kappa(y));
        sup_dist = std::max(sup_dist, target.distance(y, y_base));
        if (std::abs(tt - t) < 1e-12)
            sup_du_t = std::max(sup_du_t, std::sqrt(du_hs2(map, space, target, tt, x, y)));
    }

    // (i) decay route: uniformly strict backward super Ricci flow, kappa <= 0
    {
        LiouvillePipeline pipe;
        pipe.name = "decay";
        if (sr.alpha_margin <= 0.0) {
            pipe.reason = "alpha margin not strictly positive";
        } else if (kappa_img > 1e-12) {
            pipe.reason = "target curvature not nonpositive on the image";
        } else {
            pipe.applicable = true;
            pipe.bound = std::exp(-sr.alpha_margin * t / 2.0) * sup_du_t * vnorm;
            pipe.factors = {{"alpha", sr.alpha_margin},
                            {"exp_factor", std::exp(-sr.alpha_margin * t / 2.0)},
                            {"sup_du_at_t", sup_du_t}};
        }
        report.pipelines.push_back(pipe);
    }

    // first-factor closed form, shared by the Hoelder routes
    auto first_factor_rhs = [&](double pp) -> std::pair<bool, double> {
        if (!space.radial) return {false, 0.0};
        double c = compute_cpR(space, R, pp);
        double denom = -std::expm1(-2.0 * c * t / pp);
        if (denom <= 0.0) return {false, 0.0};
        return {true, std::pow(2.0 * c / pp, pp / 2.0) / std::pow(denom, pp / 2.0 + 1.0) *
                          std::pow(vnorm, pp)};
    };

    // (ii) Hoelder route with the nonpositive-curvature second factor (p = q = 2)
    {
        LiouvillePipeline pipe;
        pipe.name = "hoelder-ch";
        if (p != 2.0 || q != 2.0) {
            pipe.reason = "distance second factor stated for p = q = 2";
        } else if (kappa_img > 1e-12) {
            pipe.reason = "target curvature not nonpositive on the image";
        } else if (!space.radial) {
            pipe.reason = "no radial profile for c_p(R)";
        } else {
            auto [ok_ff, ff] = first_factor_rhs(2.0);
            if (!ok_ff) {
                pipe.reason = "first-factor constant unavailable";
            } else {
                SecondFactorReport sf = second_factor_bounds(space, target, map, x0, 2.0, mc);
                double dist2 = 0.0;
                for (const auto& b : sf.bounds)
                    if (b.name == "ch" && b.applicable) dist2 = b.value;
                pipe.applicable = true;
                pipe.bound = std::sqrt(ff) * std::sqrt(std::max(dist2, 0.0));
                pipe.factors = {{"first_factor_sq", ff}, {"E_dist_sq", dist2}};
            }
        }
        report.pipelines.push_back(pipe);
    }

    // (iii) small-image route: regular-ball second factor via exponential moments
    {
        LiouvillePipeline pipe;
        pipe.name = "small-image";
        double kap = kappa_img;
        if (kap <= 1e-12) {
            pipe.reason = "target curvature not positive; small-image route vacuous";
        } else {
            double r_img = sup_dist * 1.05 + 1e-6;
            if (r_img >= kPi / (2.0 * std::sqrt(kap))) {
                pipe.reason = "image not inside a regular ball";
            } else {
                double q_cap = (kPi / (2.0 * r_img)) * (kPi / (2.0 * r_img)) / kap;
                double qq = std::min(2.0, 0.9 * q_cap);
                if (qq <= 1.0) {
                    pipe.reason = "no exponent q in (1, 2] keeps f positive on the ball";
                } else {
                    double pp = qq / (qq - 1.0);
                    auto [ok_ff, ff] = first_factor_rhs(pp);
                    if (!ok_ff) {
                        pipe.reason = "first-factor constant unavailable";
                    } else {
                        // E[(kappa^{-1}(e^{kappa int |du|^2} - 1))^{q/2}] by MC
                        std::vector<double> vals(mc.n_paths, 0.0);
                        std::vector<char> ok(mc.n_paths, 0);
                        parallel_paths(mc.n_paths, mc.step.seed, mc.threads,
                                       [&](int id, std::mt19937_64& rng) {
                            try {
                                PathState st = init_path(space, target, map, x0);
                                double du2_int = 0.0;
                                Vec dW(space.dim);
                                stop_check(st, space, mc.stop);
                                while (st.alive) {
                                    du2_int += du_hs2(map, space, target, st.t, st.x, st.y) *
                                               mc.step.h;
                                    draw_noise(rng, mc.step.h, dW);
                                    step(st, space, target, map, mc.step, dW);
                                    stop_check(st, space, mc.stop);
                                }
                                vals[id] = std::pow(
                                    std::expm1(kap * du2_int) / kap, qq / 2.0);
                                ok[id] = 1;
                            } catch (const std::exception&) {
                                ok[id] = 0;
                            }
                        });
                        RunningStat stat;
                        for (int id = 0; id < mc.n_paths; ++id)
                            if (ok[id]) stat.add(vals[id]);
                        MeanSe second = stat.result();
                        pipe.applicable = true;
                        pipe.bound = std::pow(ff, 1.0 / pp) * std::pow(second.mean, 1.0 / qq);
                        pipe.factors = {{"p", pp},
                                        {"q", qq},
                                        {"first_factor_pow_p", ff},
                                        {"exp_moment_term", second.mean},
                                        {"exp_moment_se", second.se},
                                        {"universal_constants_set_to_one", true}};
                    }
                }
            }
        }
        report.pipelines.push_back(pipe);
    }

    for (const auto& pipe : report.pipelines)
        if (pipe.applicable)
            report.best = report.best ? std::min(*report.best, pipe.bound) : pipe.bound;
    report.no_bound = !report.best.has_value();
    return report;
}

nlohmann::json LiouvilleReport::to_json() const {
    nlohmann::json j;
    j["no_bound"] = no_bound;
    if (best) j["best"] = *best;
    j["pipelines"] = nlohmann::json::array();
    for (const auto& p : pipelines)
        j["pipelines"].push_back({{"name", p.name},
                                  {"applicable", p.applicable},
                                  {"reason", p.reason},
                                  {"bound", p.bound},
                                  {"factors", p.factors}});
    return j;
}

// ---------------------------------------------------------------------------
// Sub-square-root chain

SubsqrtReport subsqrt_chain(const EvolvingManifold& space, const TargetManifold& target,
                            const SpaceTimeMap& map, const Vec& x0, double phi_coeff,
                            const std::vector<double>& R_values,
                            const std::vector<std::pair<double, Vec>>& growth_samples) {
    SubsqrtReport report;
    auto phi = [phi_coeff](double r) { return phi_coeff * std::pow(r, 0.4); };
    report.growth = growth_check(map, space, target, x0, phi, growth_samples,
                                 std::numeric_limits<double>::infinity());
    for (double R : R_values) {
        double c2 = compute_cpR(space, R, 2.0);
        report.R_values.push_back(R);
        report.chain_values.push_back(c2 * phi(R) * phi(R));
    }
    report.decreasing = true;
    for (size_t i = 1; i < report.chain_values.size(); ++i)
        if (report.chain_values[i] >= report.chain_values[i - 1]) report.decreasing = false;
    return report;
}

nlohmann::json SubsqrtReport::to_json() const {
    return nlohmann::json{{"R", R_values},
                          {"chain", chain_values},
                          {"decreasing", decreasing},
                          {"growth_inequality_ok", growth.inequality_ok},
                          {"growth_decay_ok", growth.decay_ok}};
}

// ---------------------------------------------------------------------------
// Small-image tools

namespace {

HessianTestReport hessian_test(const TargetManifold& target, const Vec& center, double radius,
                               double coeff, int grid_n) {
    HessianTestReport report;
    report.coeff = coeff;
    const int n = target.dim;
    const double a = std::sqrt(coeff);
    const double eps = 1e-4;
    auto f = [&](const Vec& z) { return std::cos(a * target.distance(center, z)); };

    // chart box around the center wide enough to cover the geodesic ball
    double box = radius; // refined below by expanding while the boundary is inside
    for (int iter = 0; iter < 40; ++iter) {
        Vec corner = center + Vec::Constant(n, box / std::sqrt(static_cast<double>(n)));
        if (corner.norm() >= target.chart_radius * 0.999) break;
        if (target.distance(center, corner) > radius * 1.05) break;
        box *= 1.3;
    }

    report.max_eigen_margin = -std::numeric_limits<double>::infinity();
    std::vector<int> idx(n, 0);
    const int steps = std::max(2, grid_n);
    auto probe = [&](const Vec& z) {
        if (z.norm() >= target.chart_radius) return;
        double d = target.distance(center, z);
        if (d > radius * 0.999) return;
        TargetMetricSample ts = target.metric(z);
        // FD Hessian of f, then subtract the Christoffel term
        Mat hess(n, n);
        double f0 = f(z);
        Vec grad(n);
        for (int i = 0; i < n; ++i) {
            Vec zp = z, zm = z;
            zp[i] += eps;
            zm[i] -= eps;
            double fp = f(zp), fm = f(zm);
            grad[i] = (fp - fm) / (2.0 * eps);
            hess(i, i) = (fp - 2.0 * f0 + fm) / (eps * eps);
            for (int j = i + 1; j < n; ++j) {
                Vec zpp = z, zpm = z, zmp = z, zmm = z;
                zpp[i] += eps; zpp[j] += eps;
                zpm[i] += eps; zpm[j] -= eps;
                zmp[i] -= eps; zmp[j] += eps;
                zmm[i] -= eps; zmm[j] -= eps;
                double v = (f(zpp) - f(zpm) - f(zmp) + f(zmm)) / (4.0 * eps * eps);
                hess(i, j) = v;
                hess(j, i) = v;
            }
        }
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) {
                double corr = 0.0;
                for (int k = 0; k < n; ++k) corr += ts.gamma.plane[k](i, j) * grad[k];
                hess(i, j) -= corr;
            }
        Mat form = hess + coeff * f0 * ts.h;
        report.max_eigen_margin =
            std::max(report.max_eigen_margin, max_eigenvalue_rel(form, ts.h));
        ++report.points_checked;
    };
    // full grid over the chart box
    std::function<void(int, Vec&)> walk = [&](int axis, Vec& z) {
        if (axis == n) {
            probe(z);
            return;
        }
        for (int i = 0; i <= steps; ++i) {
            z[axis] = center[axis] - box + 2.0 * box * i / steps;
            walk(axis + 1, z);
        }
    };
    Vec z(n);
    walk(0, z);
    report.pass = report.points_checked > 0 && report.max_eigen_margin <= 1e-6;
    return report;
}

} // namespace

SmallImageReport small_image_tools(const EvolvingManifold& space, const TargetManifold& target,
                                   const SpaceTimeMap& map, const Vec& x0, const Vec& center,
                                   double radius, double q, const McConfig& mc,
                                   int n_seed_replicates, std::optional<double> kappa_override) {
    if (q <= 1.0) throw ArgumentError("small_image_tools: need q > 1");
    SmallImageReport report;
    double kap = target.kappa(center);
    report.kappa_used = kappa_override.value_or(std::max(kap, 0.0));
    if (report.kappa_used <= 0.0)
        throw ArgumentError("small_image_tools: need a positive curvature bound "
                            "(supply an override on flat or negatively curved targets)");
    // regular: r < pi/(2 sqrt(kappa)) and the ball stays inside the chart
    bool inside_chart = center.norm() + radius < target.chart_radius; // conservative
    report.regular_flag =
        inside_chart && (kap <= 0.0 || radius < kPi / (2.0 * std::sqrt(kap)));

    double coeff = report.kappa_used * q;
    if (std::sqrt(coeff) * radius >= kPi / 2.0)
        throw ArgumentError("small_image_tools: q too large, f would vanish on the ball");
    report.hessian = hessian_test(target, center, radius, coeff, 14);

    const double lambda = report.kappa_used * q / 2.0;
    for (int rep = 0; rep < n_seed_replicates; ++rep) {
        std::vector<double> vals(mc.n_paths, 0.0);
        std::vector<char> ok(mc.n_paths, 0);
        std::uint64_t seed = mix_seed(mc.step.seed, 0xabcd0000ULL + rep);
        parallel_paths(mc.n_paths, seed, mc.threads, [&](int id, std::mt19937_64& rng) {
            try {
                PathState st = init_path(space, target, map, x0);
                double du2_int = 0.0;
                Vec dW(space.dim);
                stop_check(st, space, mc.stop);
                while (st.alive) {
                    du2_int += du_hs2(map, space, target, st.t, st.x, st.y) * mc.step.h;
                    draw_noise(rng, mc.step.h, dW);
                    step(st, space, target, map, mc.step, dW);
                    stop_check(st, space, mc.stop);
                }
                vals[id] = std::exp(lambda * du2_int);
                ok[id] = 1;
            } catch (const std::exception&) {
                ok[id] = 0;
            }
        });
        RunningStat stat;
        for (int id = 0; id < mc.n_paths; ++id)
            if (ok[id]) stat.add(vals[id]);
        MeanSe ms = stat.result();
        report.exp_moment_by_seed.push_back(ms.mean);
        report.exp_moment_se_by_seed.push_back(ms.se);
    }
    std::vector<double> sorted = report.exp_moment_by_seed;
    std::sort(sorted.begin(), sorted.end());
    double median = sorted[sorted.size() / 2];
    report.moments_finite = true;
    for (double vmean : report.exp_moment_by_seed)
        if (!std::isfinite(vmean) || vmean > 5.0 * median) report.moments_finite = false;
    report.per_path.columns = {"replicate", "exp_moment_mean", "exp_moment_se"};
    for (size_t rep = 0; rep < report.exp_moment_by_seed.size(); ++rep)
        report.per_path.rows.push_back({static_cast<double>(rep),
                                        report.exp_moment_by_seed[rep],
                                        report.exp_moment_se_by_seed[rep]});
    return report;
}

nlohmann::json SmallImageReport::to_json() const {
    return nlohmann::json{{"regular_flag", regular_flag},
                          {"kappa_used", kappa_used},
                          {"hessian",
                           {{"coeff", hessian.coeff},
                            {"max_eigen_margin", hessian.max_eigen_margin},
                            {"points_checked", hessian.points_checked},
                            {"pass", hessian.pass}}},
                          {"exp_moment_by_seed", exp_moment_by_seed},
                          {"exp_moment_se_by_seed", exp_moment_se_by_seed},
                          {"moments_finite", moments_finite}};
}

// ---------------------------------------------------------------------------
// Radial drift inequality

DriftEstimateReport drift_estimate_check(const EvolvingManifold& space, double r0,
                                         double R_scan, int grid_n, double horizon) {
    if (!space.radial)
        throw CapabilityError("drift_estimate_check: needs a radial profile");
    DriftEstimateReport report;
    report.r0 = r0;
    const RadialProfile& rad = *space.radial;
    const double d = static_cast<double>(space.dim);
    const int nt = space.evolving ? 21 : 1;

    // C(x, r0) = sup |Ric| over {t in [0, horizon], rho <= r0}; by symmetry the
    // scan runs along the first axis.
    double C = 0.0;
    for (int it = 0; it < nt; ++it) {
        double t = nt == 1 ? 0.0 : horizon * it / (nt - 1);
        for (int i = 1; i <= 200; ++i) {
            double rho = r0 * i / 200.0;
            double r = rad.r_of_rho(t, rho);
            Vec x = Vec::Zero(space.dim);
            x[0] = r;
            if (x.norm() >= space.chart_radius) continue;
            MetricSample s = space.metric(t, x);
            Vec ev = eigenvalues_rel(s.ricci, s.g);
            C = std::max(C, std::max(std::abs(ev[0]), std::abs(ev[ev.size() - 1])));
        }
    }
    report.C_r0 = C;
    report.k_r0 = std::sqrt(C / std::max(d - 1.0, 1.0));

    const double k = report.k_r0;
    report.max_violation = -std::numeric_limits<double>::infinity();
    report.static_form_max_excess = -std::numeric_limits<double>::infinity();
    for (int it = 0; it < nt; ++it) {
        double t = nt == 1 ? 0.0 : horizon * it / (nt - 1);
        for (int i = 1; i <= grid_n; ++i) {
            double rho = R_scan * i / grid_n;
            double r = rad.r_of_rho(t, rho);
            double lhs = rad.drho_dt(t, r) + 0.5 * rad.laplace_rho(t, r);
            double cap = std::min(rho, r0);
            double rhs;
            if (k < 1e-12) {
                rhs = (d - 1.0) / 2.0 / cap; // k -> 0 limit of k coth(k cap)
            } else {
                rhs = (d - 1.0) / 2.0 * (k / std::tanh(k * cap) + k * k * cap);
            }
            report.max_violation = std::max(report.max_violation, lhs - rhs);
            report.static_form_max_excess =
                std::max(report.static_form_max_excess, lhs - (d - 1.0) / (2.0 * rho));
        }
    }
    report.pass = report.max_violation <= 1e-9;
    report.static_form_holds = report.static_form_max_excess <= 1e-9;
    return report;
}

nlohmann::json DriftEstimateReport::to_json() const {
    return nlohmann::json{{"r0", r0},
                          {"C_r0", C_r0},
                          {"k_r0", k_r0},
                          {"max_violation", max_violation},
                          {"pass", pass},
                          {"static_form_max_excess", static_form_max_excess},
                          {"static_form_holds", static_form_holds}};
}

} // namespace stflow

#include "stflow/harmonic.hpp"

#include "stflow/errors.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>

namespace stflow {

namespace {

std::array<Mat, kMaxDim> fd_hessians(const SpaceTimeMap& map, double t, const Vec& x,
                                     double eps = 1e-4) {
    const int m = map.source_dim, n = map.target_dim;
    std::array<Mat, kMaxDim> hess;
    for (int a = 0; a < n; ++a) hess[a] = Mat::Zero(m, m);
    Vec u0 = map.u(t, x);
    for (int j = 0; j < m; ++j) {
        Vec xp = x, xm = x;
        xp[j] += eps;
        xm[j] -= eps;
        Vec up = map.u(t, xp), um = map.u(t, xm);
        for (int a = 0; a < n; ++a)
            hess[a](j, j) = (up[a] - 2.0 * u0[a] + um[a]) / (eps * eps);
        for (int k = j + 1; k < m; ++k) {
            Vec xpp = x, xpm = x, xmp = x, xmm = x;
            xpp[j] += eps; xpp[k] += eps;
            xpm[j] += eps; xpm[k] -= eps;
            xmp[j] -= eps; xmp[k] += eps;
            xmm[j] -= eps; xmm[k] -= eps;
            Vec v = (map.u(t, xpp) - map.u(t, xpm) - map.u(t, xmp) + map.u(t, xmm)) /
                    (4.0 * eps * eps);
            for (int a = 0; a < n; ++a) {
                hess[a](j, k) = v[a];
                hess[a](k, j) = v[a];
            }
        }
    }
    return hess;
}

void check_time_domain(const SpaceTimeMap& map, double t) {
    if (t < map.t_min - 1e-9 || t > map.t_max + 1e-9)
        throw DomainError(map.id + ": time outside the map's domain");
}

} // namespace

Vec tension(const SpaceTimeMap& map, const EvolvingManifold& space,
            const TargetManifold& target, double t, const Vec& x) {
    check_time_domain(map, t);
    const int m = map.source_dim, n = map.target_dim;
    MetricSample s = metric_at(space, t, x);
    Eigen::LLT<Mat> llt(s.g);
    Mat g_inv = llt.solve(Mat::Identity(m, m));

    Vec y = map.u(t, x);
    Mat J = map.du(t, x); // n x m
    std::array<Mat, kMaxDim> hess = map.has_d2u() ? map.d2u(t, x) : fd_hessians(map, t, x);

    TargetMetricSample ts = target.metric(y);
    Mat pullback = J * g_inv * J.transpose(); // (du g^{-1} du^T)_{bc}

    Vec out(n);
    Vec drift = s.gamma.trace_with(g_inv); // g^{jk} Gamma^i_{jk}
    for (int a = 0; a < n; ++a) {
        double v = (g_inv.array() * hess[a].array()).sum();
        v += (ts.gamma.plane[a].array() * pullback.array()).sum();
        v -= J.row(a).dot(drift);
        out[a] = v;
    }
    return out;
}

double harmonic_residual(const SpaceTimeMap& map, const EvolvingManifold& space,
                         const TargetManifold& target,
                         const std::vector<std::pair<double, Vec>>& samples) {
    if (samples.empty()) throw ArgumentError("harmonic_residual: empty sample list");
    double worst = 0.0;
    for (const auto& [t, x] : samples) {
        Vec r = map.dudt(t, x) + 0.5 * tension(map, space, target, t, x);
        Mat h = target.metric(map.u(t, x)).h;
        worst = std::max(worst, std::sqrt(r.dot(h * r)));
    }
    return worst;
}

SpaceTimeMap time_reverse(const SpaceTimeMap& map, double T) {
    if (T > map.t_max + 1e-9)
        throw ArgumentError("time_reverse: map not defined up to T");
    SpaceTimeMap rev;
    rev.kind = map.kind;
    rev.id = map.id + "-reversed";
    rev.source_dim = map.source_dim;
    rev.target_dim = map.target_dim;
    rev.t_min = 0.0;
    rev.t_max = T - map.t_min;
    auto check = [T, lo = map.t_min](double t) {
        if (t < -1e-9 || t > T - lo + 1e-9)
            throw DomainError("time-reversed map: t outside [0, T - t_min]");
    };
    rev.u = [u = map.u, T, check](double t, const Vec& x) { check(t); return u(T - t, x); };
    rev.du = [du = map.du, T, check](double t, const Vec& x) { check(t); return du(T - t, x); };
    rev.dudt = [dudt = map.dudt, T, check](double t, const Vec& x) {
        check(t);
        return Vec(-dudt(T - t, x));
    };
    if (map.has_d2u())
        rev.d2u = [d2u = map.d2u, T, check](double t, const Vec& x) {
            check(t);
            return d2u(T - t, x);
        };
    return rev;
}

EvolvingManifold time_reverse_space(const EvolvingManifold& space, double T) {
    EvolvingManifold rev = space;
    rev.id = space.id + "-reversed";
    rev.metric = [metric = space.metric, T](double t, const Vec& x) {
        MetricSample s = metric(T - t, x);
        s.dg_dt = -s.dg_dt;
        return s;
    };
    if (space.analytic_distance)
        rev.analytic_distance = [d = space.analytic_distance, T](double t, const Vec& x,
                                                                 const Vec& y) {
            return d(T - t, x, y);
        };
    if (space.radial) {
        const RadialProfile& r = *space.radial;
        rev.radial = RadialProfile{
            [f = r.rho, T](double t, double rr) { return f(T - t, rr); },
            [f = r.drho_dt, T](double t, double rr) { return -f(T - t, rr); },
            [f = r.laplace_rho, T](double t, double rr) { return f(T - t, rr); },
            [f = r.r_of_rho, T](double t, double rho) { return f(T - t, rho); },
        };
    }
    return rev;
}

DilatationProfile dilatation(const SpaceTimeMap& map, const EvolvingManifold& space,
                             const TargetManifold& target, double t, const Vec& x) {
    MetricSample s = metric_at(space, t, x);
    Mat J = map.du(t, x);
    Mat h = target.metric(map.u(t, x)).h;
    Mat M = J.transpose() * h * J;
    DilatationProfile prof;
    prof.lambdas = eigenvalues_rel(M, s.g);
    for (int i = 0; i < prof.lambdas.size(); ++i)
        prof.lambdas[i] = std::max(prof.lambdas[i], 0.0);
    double tail = 0.0;
    for (int i = 1; i < prof.lambdas.size(); ++i) tail += prof.lambdas[i];
    prof.K = tail > 0.0 ? prof.lambdas[0] / tail : 0.0;
    return prof;
}

GrowthCheck growth_check(const SpaceTimeMap& map, const EvolvingManifold& space,
                         const TargetManifold& target, const Vec& x,
                         const std::function<double(double)>& phi,
                         const std::vector<std::pair<double, Vec>>& samples,
                         double ratio_threshold) {
    if (!space.has_distance())
        throw CapabilityError("growth_check: space has no analytic distance");
    if (samples.empty()) throw ArgumentError("growth_check: empty sample list");
    GrowthCheck out;
    out.inequality_ok = true;
    out.worst_slack = std::numeric_limits<double>::infinity();
    Vec base = map.u(0.0, x);
    std::vector<double> radii;
    for (const auto& [t, z] : samples) {
        double d = space.analytic_distance(t, x, z);
        double dn = target.distance(map.u(t, z), base);
        double slack = phi(d) - dn;
        out.worst_slack = std::min(out.worst_slack, slack);
        if (slack < -1e-12) out.inequality_ok = false;
        if (d > 0.0) radii.push_back(d);
    }
    std::sort(radii.begin(), radii.end());
    radii.erase(std::unique(radii.begin(), radii.end()), radii.end());
    out.decay_ok = !radii.empty();
    double prev = std::numeric_limits<double>::infinity();
    for (double r : radii) {
        double ratio = phi(r) / std::sqrt(r);
        if (ratio > prev + 1e-12) out.decay_ok = false;
        prev = ratio;
        out.final_ratio = ratio;
    }
    if (!radii.empty() && out.final_ratio > ratio_threshold) out.decay_ok = false;
    out.flag = out.inequality_ok && out.decay_ok;
    return out;
}

// ---------------------------------------------------------------------------
// Analytic catalog

namespace {

SpaceTimeMap base_map(std::string id, int m, int n, bool harmonic) {
    SpaceTimeMap map;
    map.kind = SpaceTimeMap::Kind::analytic;
    map.id = std::move(id);
    map.source_dim = m;
    map.target_dim = n;
    map.is_harmonic = harmonic;
    return map;
}

void require_dims(const std::string& id, int m, int n, int want_m, int want_n) {
    if (m != want_m || n != want_n)
        throw ArgumentError("make_map: '" + id + "' requires source dim " +
                            std::to_string(want_m) + ", target dim " + std::to_string(want_n));
}

// unit-speed geodesic through the Poincare-disk center: s -> (tanh(s/2), 0)
struct H2Geodesic {
    static double pos(double s) { return std::tanh(s / 2.0); }
    static double vel(double s) {
        double c = std::cosh(s / 2.0);
        return 0.5 / (c * c);
    }
    static double acc(double s) {
        double c = std::cosh(s / 2.0);
        return -0.5 * std::tanh(s / 2.0) / (c * c);
    }
};

// unit-speed great circle through the stereographic chart center: s -> (tan(s/2), 0)
struct S2Geodesic {
    static double pos(double s) { return std::tan(s / 2.0); }
    static double vel(double s) {
        double c = std::cos(s / 2.0);
        return 0.5 / (c * c);
    }
    static double acc(double s) {
        double c = std::cos(s / 2.0);
        return 0.5 * std::tan(s / 2.0) / (c * c);
    }
};

} // namespace

SpaceTimeMap make_linear_map(const Mat& A) {
    const int n = static_cast<int>(A.rows()), m = static_cast<int>(A.cols());
    SpaceTimeMap map = base_map("linear", m, n, true);
    map.u = [A](double, const Vec& x) { return Vec(A * x); };
    map.du = [A](double, const Vec&) { return A; };
    map.dudt = [n](double, const Vec&) { return Vec(Vec::Zero(n)); };
    map.d2u = [m, n](double, const Vec&) {
        std::array<Mat, kMaxDim> h;
        for (int a = 0; a < n; ++a) h[a] = Mat::Zero(m, m);
        return h;
    };
    return map;
}

SpaceTimeMap make_map(const std::string& id, int m, int n, double param) {
    if (id == "identity") {
        if (m != n) throw ArgumentError("make_map: identity requires equal dims");
        return make_linear_map(Mat::Identity(m, m));
    }
    if (id == "linear") {
        if (m != n) throw ArgumentError("make_map: linear requires equal dims");
        double c = param == 0.0 ? 1.0 : param;
        auto map = make_linear_map(Mat(c * Mat::Identity(m, m)));
        map.id = "linear";
        return map;
    }
    if (id == "constant") {
        SpaceTimeMap map = base_map(id, m, n, true);
        map.u = [n](double, const Vec&) { return Vec(Vec::Zero(n)); };
        map.du = [m, n](double, const Vec&) { return Mat(Mat::Zero(n, m)); };
        map.dudt = [n](double, const Vec&) { return Vec(Vec::Zero(n)); };
        map.d2u = [m, n](double, const Vec&) {
            std::array<Mat, kMaxDim> h;
            for (int a = 0; a < n; ++a) h[a] = Mat::Zero(m, m);
            return h;
        };
        return map;
    }
    if (id == "x2-minus-t") {
        require_dims(id, m, n, 1, 1);
        SpaceTimeMap map = base_map(id, 1, 1, true);
        map.u = [](double t, const Vec& x) { return Vec(Vec::Constant(1, x[0] * x[0] - t)); };
        map.du = [](double, const Vec& x) { return Mat(Mat::Constant(1, 1, 2.0 * x[0])); };
        map.dudt = [](double, const Vec&) { return Vec(Vec::Constant(1, -1.0)); };
        map.d2u = [](double, const Vec&) {
            std::array<Mat, kMaxDim> h;
            h[0] = Mat::Constant(1, 1, 2.0);
            return h;
        };
        return map;
    }
    if (id == "circle-wave") {
        // u(t,x) = e^{t/2} sin(x): cancels exactly against the half-Laplacian.
        require_dims(id, m, n, 1, 1);
        SpaceTimeMap map = base_map(id, 1, 1, true);
        map.u = [](double t, const Vec& x) {
            return Vec(Vec::Constant(1, std::exp(t / 2.0) * std::sin(x[0])));
        };
        map.du = [](double t, const Vec& x) {
            return Mat(Mat::Constant(1, 1, std::exp(t / 2.0) * std::cos(x[0])));
        };
        map.dudt = [](double t, const Vec& x) {
            return Vec(Vec::Constant(1, 0.5 * std::exp(t / 2.0) * std::sin(x[0])));
        };
        map.d2u = [](double t, const Vec& x) {
            std::array<Mat, kMaxDim> h;
            h[0] = Mat::Constant(1, 1, -std::exp(t / 2.0) * std::sin(x[0]));
            return h;
        };
        return map;
    }
    if (id == "geodesic-h2" || id == "geodesic-s2" || id == "bounded-geodesic-h2") {
        require_dims(id, m, n, 1, 2);
        const bool bounded = id == "bounded-geodesic-h2";
        const bool to_sphere = id == "geodesic-s2";
        auto par = [bounded](double x) { return bounded ? std::atan(x) : x; };
        auto dpar = [bounded](double x) { return bounded ? 1.0 / (1.0 + x * x) : 1.0; };
        auto d2par = [bounded](double x) {
            double q = 1.0 + x * x;
            return bounded ? -2.0 * x / (q * q) : 0.0;
        };
        auto pos = to_sphere ? &S2Geodesic::pos : &H2Geodesic::pos;
        auto vel = to_sphere ? &S2Geodesic::vel : &H2Geodesic::vel;
        auto acc = to_sphere ? &S2Geodesic::acc : &H2Geodesic::acc;
        SpaceTimeMap map = base_map(id, 1, 2, true);
        map.u = [pos, par](double, const Vec& x) {
            Vec y(2);
            y << pos(par(x[0])), 0.0;
            return y;
        };
        map.du = [vel, par, dpar](double, const Vec& x) {
            Mat j(2, 1);
            j << vel(par(x[0])) * dpar(x[0]), 0.0;
            return j;
        };
        map.dudt = [](double, const Vec&) { return Vec(Vec::Zero(2)); };
        map.d2u = [vel, acc, par, dpar, d2par](double, const Vec& x) {
            std::array<Mat, kMaxDim> h;
            double s = par(x[0]), ds = dpar(x[0]);
            h[0] = Mat::Constant(1, 1, acc(s) * ds * ds + vel(s) * d2par(x[0]));
            h[1] = Mat::Zero(1, 1);
            return h;
        };
        return map;
    }
    if (id == "sphere-eigenmap") {
        // u(t,w) = e^t z(w) with z the height function of the stereographic
        // chart; z is a first spherical harmonic, so du/dt + Delta u / 2 = 0.
        require_dims(id, m, n, 2, 1);
        auto z = [](const Vec& w) {
            double r2 = w.squaredNorm();
            return (r2 - 1.0) / (r2 + 1.0);
        };
        SpaceTimeMap map = base_map(id, 2, 1, true);
        map.u = [z](double t, const Vec& w) {
            return Vec(Vec::Constant(1, std::exp(t) * z(w)));
        };
        map.du = [](double t, const Vec& w) {
            double q = 1.0 + w.squaredNorm();
            Mat j(1, 2);
            j << 4.0 * w[0] / (q * q), 4.0 * w[1] / (q * q);
            return Mat(std::exp(t) * j);
        };
        map.dudt = [z](double t, const Vec& w) {
            return Vec(Vec::Constant(1, std::exp(t) * z(w)));
        };
        map.d2u = [](double t, const Vec& w) {
            double q = 1.0 + w.squaredNorm();
            Mat hess = 4.0 / (q * q) * Mat::Identity(2, 2) -
                       16.0 / (q * q * q) * (w * w.transpose());
            std::array<Mat, kMaxDim> h;
            h[0] = std::exp(t) * hess;
            return h;
        };
        return map;
    }
    if (id == "sphere-height") {
        // time-independent height function of the stereographic chart;
        // bounded differential, used by the decay-bound demonstrations
        require_dims(id, m, n, 2, 1);
        auto z = [](const Vec& w) {
            double r2 = w.squaredNorm();
            return (r2 - 1.0) / (r2 + 1.0);
        };
        SpaceTimeMap map = base_map(id, 2, 1, false);
        map.u = [z](double, const Vec& w) { return Vec(Vec::Constant(1, z(w))); };
        map.du = [](double, const Vec& w) {
            double q = 1.0 + w.squaredNorm();
            Mat j(1, 2);
            j << 4.0 * w[0] / (q * q), 4.0 * w[1] / (q * q);
            return j;
        };
        map.dudt = [](double, const Vec&) { return Vec(Vec::Zero(1)); };
        map.d2u = [](double, const Vec& w) {
            double q = 1.0 + w.squaredNorm();
            std::array<Mat, kMaxDim> h;
            h[0] = 4.0 / (q * q) * Mat::Identity(2, 2) -
                   16.0 / (q * q * q) * (w * w.transpose());
            return h;
        };
        return map;
    }
    if (id == "tanh-x1") {
        // bounded map of sub-square-root growth along the first axis
        if (n != 1) throw ArgumentError("make_map: tanh-x1 maps into R");
        SpaceTimeMap map = base_map(id, m, 1, false);
        map.u = [](double, const Vec& x) { return Vec(Vec::Constant(1, std::tanh(x[0]))); };
        map.du = [m](double, const Vec& x) {
            Mat j = Mat::Zero(1, m);
            double c = std::cosh(x[0]);
            j(0, 0) = 1.0 / (c * c);
            return j;
        };
        map.dudt = [](double, const Vec&) { return Vec(Vec::Zero(1)); };
        map.d2u = [m](double, const Vec& x) {
            std::array<Mat, kMaxDim> h;
            h[0] = Mat::Zero(m, m);
            double c = std::cosh(x[0]);
            h[0](0, 0) = -2.0 * std::tanh(x[0]) / (c * c);
            return h;
        };
        return map;
    }
    if (id == "small-image-s2") {
        // chart-linear map into the sphere, image kept inside a geodesic ball
        require_dims(id, m, n, 2, 2);
        double c = param == 0.0 ? 0.2 : param;
        auto map = make_linear_map(Mat(c * Mat::Identity(2, 2)));
        map.id = id;
        map.is_harmonic = false;
        return map;
    }
    throw ArgumentError("make_map: unknown map '" + id + "'");
}

// ---------------------------------------------------------------------------
// Grid heat flow

struct GridFlow::Data {
    int axes = 1, tdim = 1, nodes = 0;
    double length = 0.0, dx = 0.0, horizon = 0.0;
    std::string target_id;
    std::vector<double> times;
    // per stored time, node-major flattened fields
    std::vector<std::vector<double>> u;    // [node*tdim + a]
    std::vector<std::vector<double>> du;   // [(node*tdim + a)*axes + j]
    std::vector<std::vector<double>> d2u;  // [((node*tdim + a)*axes + j)*axes + k]
    std::vector<std::vector<double>> dudt; // same layout as u

    int node_count() const { return axes == 1 ? nodes : nodes * nodes; }
    int wrap(int i) const { return ((i % nodes) + nodes) % nodes; }
    int node_index(int i, int j) const { return axes == 1 ? wrap(i) : wrap(i) * nodes + wrap(j); }
};

namespace {

double catmull(double f0, double f1, double f2, double f3, double s) {
    return f1 + 0.5 * s * (f2 - f0 + s * (2.0 * f0 - 5.0 * f1 + 4.0 * f2 - f3 +
                                          s * (3.0 * (f1 - f2) + f3 - f0)));
}

// Interpolate one component of a node-major field at chart point x.
double sample_spatial(const GridFlow::Data& d, const std::vector<double>& field,
                      int comps, int comp, const Vec& x) {
    auto locate = [&](double coord, int& base, double& frac) {
        double s = coord / d.dx;
        double fl = std::floor(s);
        base = static_cast<int>(fl);
        frac = s - fl;
    };
    if (d.axes == 1) {
        int i;
        double s;
        locate(x[0], i, s);
        auto at = [&](int k) { return field[d.node_index(k, 0) * comps + comp]; };
        return catmull(at(i - 1), at(i), at(i + 1), at(i + 2), s);
    }
    int i, j;
    double si, sj;
    locate(x[0], i, si);
    locate(x[1], j, sj);
    double rows[4];
    for (int a = 0; a < 4; ++a) {
        auto at = [&](int b) { return field[d.node_index(i - 1 + a, j - 1 + b) * comps + comp]; };
        rows[a] = catmull(at(0), at(1), at(2), at(3), sj);
    }
    return catmull(rows[0], rows[1], rows[2], rows[3], si);
}

double sample_field(const GridFlow::Data& d, const std::vector<std::vector<double>>& field,
                    int comps, int comp, double t, const Vec& x) {
    if (t < -1e-9 || t > d.horizon + 1e-9)
        throw DomainError("grid map: time outside [0, horizon]");
    const auto& times = d.times;
    auto it = std::upper_bound(times.begin(), times.end(), t);
    int hi = static_cast<int>(it - times.begin());
    hi = std::clamp(hi, 1, static_cast<int>(times.size()) - 1);
    int lo = hi - 1;
    double w = (t - times[lo]) / (times[hi] - times[lo]);
    w = std::clamp(w, 0.0, 1.0);
    double a = sample_spatial(d, field[lo], comps, comp, x);
    double b = sample_spatial(d, field[hi], comps, comp, x);
    return (1.0 - w) * a + w * b;
}

void build_difference_fields(GridFlow::Data& d) {
    const int nc = d.node_count(), nt = d.tdim, ax = d.axes;
    auto neighbor = [&](int node, int axis, int off) {
        if (ax == 1) return d.node_index(node + off, 0);
        int i = node / d.nodes, j = node % d.nodes;
        return axis == 0 ? d.node_index(i + off, j) : d.node_index(i, j + off);
    };
    d.du.assign(d.u.size(), {});
    d.d2u.assign(d.u.size(), {});
    for (size_t ti = 0; ti < d.u.size(); ++ti) {
        const auto& u = d.u[ti];
        auto& du = d.du[ti];
        auto& d2 = d.d2u[ti];
        du.assign(static_cast<size_t>(nc) * nt * ax, 0.0);
        d2.assign(static_cast<size_t>(nc) * nt * ax * ax, 0.0);
        for (int node = 0; node < nc; ++node)
            for (int a = 0; a < nt; ++a) {
                const double here = u[node * nt + a];
                for (int j = 0; j < ax; ++j) {
                    double up = u[neighbor(node, j, +1) * nt + a];
                    double dn = u[neighbor(node, j, -1) * nt + a];
                    du[(node * nt + a) * ax + j] = (up - dn) / (2.0 * d.dx);
                    d2[((node * nt + a) * ax + j) * ax + j] =
                        (up - 2.0 * here + dn) / (d.dx * d.dx);
                }
                if (ax == 2) {
                    int i = node / d.nodes, jj = node % d.nodes;
                    double pp = u[d.node_index(i + 1, jj + 1) * nt + a];
                    double pm = u[d.node_index(i + 1, jj - 1) * nt + a];
                    double mp = u[d.node_index(i - 1, jj + 1) * nt + a];
                    double mm = u[d.node_index(i - 1, jj - 1) * nt + a];
                    double mixed = (pp - pm - mp + mm) / (4.0 * d.dx * d.dx);
                    d2[((node * nt + a) * ax + 0) * ax + 1] = mixed;
                    d2[((node * nt + a) * ax + 1) * ax + 0] = mixed;
                }
            }
    }
    // dudt from stored snapshots; one-sided at the ends
    d.dudt.assign(d.u.size(), {});
    const int last = static_cast<int>(d.u.size()) - 1;
    for (int ti = 0; ti <= last; ++ti) {
        int lo = std::max(0, ti - 1), hi = std::min(last, ti + 1);
        double span = d.times[hi] - d.times[lo];
        auto& out = d.dudt[ti];
        out.resize(d.u[ti].size());
        for (size_t k = 0; k < out.size(); ++k)
            out[k] = (d.u[hi][k] - d.u[lo][k]) / span;
    }
}

} // namespace

GridFlow heat_flow_integrate(const std::function<Vec(const Vec&)>& u0,
                             const EvolvingManifold& space, const TargetManifold& target,
                             double horizon, double dt, const FlowGridSpec& grid,
                             int store_every) {
    if (space.id != "flat")
        throw ArgumentError("heat_flow_integrate: periodic grids require a flat source chart");
    if (grid.axes != 1 && grid.axes != 2)
        throw ArgumentError("heat_flow_integrate: grids are 1-D or 2-D");
    if (space.dim != grid.axes)
        throw ArgumentError("heat_flow_integrate: source dim must match the grid");
    if (dt <= 0.0 || horizon <= 0.0 || grid.nodes < 8)
        throw ArgumentError("heat_flow_integrate: bad grid parameters");

    auto data = std::make_shared<GridFlow::Data>();
    data->axes = grid.axes;
    data->tdim = target.dim;
    data->nodes = grid.nodes;
    data->length = grid.length;
    data->dx = grid.length / grid.nodes;
    data->horizon = horizon;
    data->target_id = target.id;

    GridFlow flow;
    if (dt > data->dx * data->dx / 2.0)
        flow.warnings_.push_back("dt exceeds dx^2/2; explicit update may be unstable");

    const int nc = data->node_count(), nt = data->tdim, ax = data->axes;
    std::vector<double> cur(static_cast<size_t>(nc) * nt);
    for (int node = 0; node < nc; ++node) {
        Vec x(ax);
        if (ax == 1) {
            x[0] = node * data->dx;
        } else {
            x[0] = (node / grid.nodes) * data->dx;
            x[1] = (node % grid.nodes) * data->dx;
        }
        Vec y = u0(x);
        if (y.size() != nt) throw ArgumentError("heat_flow_integrate: u0 dimension mismatch");
        for (int a = 0; a < nt; ++a) cur[node * nt + a] = y[a];
    }

    const long n_steps = std::lround(horizon / dt);
    auto neighbor = [&](int node, int axis, int off) {
        if (ax == 1) return data->node_index(node + off, 0);
        int i = node / grid.nodes, j = node % grid.nodes;
        return axis == 0 ? data->node_index(i + off, j) : data->node_index(i, j + off);
    };

    auto store = [&](double t) {
        data->times.push_back(t);
        data->u.push_back(cur);
    };
    store(0.0);

    std::vector<double> next(cur.size());
    Vec y(nt), grad_b(nt), grad_c(nt);
    Mat firsts(nt, ax);
    for (long step = 0; step < n_steps; ++step) {
        for (int node = 0; node < nc; ++node) {
            for (int a = 0; a < nt; ++a) y[a] = cur[node * nt + a];
            TargetMetricSample ts = target.metric(y);
            for (int a = 0; a < nt; ++a) {
                double lap = 0.0;
                for (int j = 0; j < ax; ++j) {
                    double up = cur[neighbor(node, j, +1) * nt + a];
                    double dn = cur[neighbor(node, j, -1) * nt + a];
                    lap += (up - 2.0 * y[a] + dn) / (data->dx * data->dx);
                    firsts(a, j) = (up - dn) / (2.0 * data->dx);
                }
                next[node * nt + a] = lap; // tension accumulates below
            }
            // flat source: tension^a = lap^a + G~^a_{bc} sum_j d_j u^b d_j u^c
            for (int a = 0; a < nt; ++a) {
                double quad = 0.0;
                for (int b = 0; b < nt; ++b)
                    for (int c = 0; c < nt; ++c) {
                        double dot = 0.0;
                        for (int j = 0; j < ax; ++j) dot += firsts(b, j) * firsts(c, j);
                        quad += ts.gamma.plane[a](b, c) * dot;
                    }
                double v = y[a] + 0.5 * dt * (next[node * nt + a] + quad);
                if (!std::isfinite(v))
                    throw NumericalError("heat_flow_integrate: non-finite value");
                next[node * nt + a] = v;
            }
            double norm2 = 0.0;
            for (int a = 0; a < nt; ++a) norm2 += next[node * nt + a] * next[node * nt + a];
            if (std::sqrt(norm2) >= target.chart_radius)
                throw NumericalError("heat_flow_integrate: flow left the target chart");
        }
        cur.swap(next);
        if ((step + 1) % store_every == 0 || step + 1 == n_steps) store((step + 1) * dt);
    }

    build_difference_fields(*data);
    flow.data_ = data;
    return flow;
}

SpaceTimeMap GridFlow::map() const {
    if (!data_) throw ArgumentError("GridFlow: empty flow");
    auto d = data_;
    SpaceTimeMap map;
    map.kind = SpaceTimeMap::Kind::grid;
    map.id = "grid-flow";
    map.source_dim = d->axes;
    map.target_dim = d->tdim;
    map.t_min = 0.0;
    map.t_max = d->horizon;
    map.u = [d](double t, const Vec& x) {
        Vec out(d->tdim);
        for (int a = 0; a < d->tdim; ++a) out[a] = sample_field(*d, d->u, d->tdim, a, t, x);
        return out;
    };
    map.du = [d](double t, const Vec& x) {
        Mat out(d->tdim, d->axes);
        for (int a = 0; a < d->tdim; ++a)
            for (int j = 0; j < d->axes; ++j)
                out(a, j) = sample_field(*d, d->du, d->tdim * d->axes, a * d->axes + j, t, x);
        return out;
    };
    map.dudt = [d](double t, const Vec& x) {
        Vec out(d->tdim);
        for (int a = 0; a < d->tdim; ++a) out[a] = sample_field(*d, d->dudt, d->tdim, a, t, x);
        return out;
    };
    map.d2u = [d](double t, const Vec& x) {
        std::array<Mat, kMaxDim> out;
        const int comps = d->tdim * d->axes * d->axes;
        for (int a = 0; a < d->tdim; ++a) {
            out[a] = Mat(d->axes, d->axes);
            for (int j = 0; j < d->axes; ++j)
                for (int k = 0; k < d->axes; ++k)
                    out[a](j, k) = sample_field(*d, d->d2u, comps,
                                                (a * d->axes + j) * d->axes + k, t, x);
        }
        return out;
    };
    return map;
}

const std::vector<double>& GridFlow::times() const {
    if (!data_) throw ArgumentError("GridFlow: empty flow");
    return data_->times;
}

int GridFlow::nodes_per_axis() const { return data_ ? data_->nodes : 0; }
int GridFlow::axes() const { return data_ ? data_->axes : 0; }

Vec GridFlow::value_at(int time_index, int node_index) const {
    if (!data_) throw ArgumentError("GridFlow: empty flow");
    Vec out(data_->tdim);
    for (int a = 0; a < data_->tdim; ++a)
        out[a] = data_->u.at(time_index)[node_index * data_->tdim + a];
    return out;
}

void GridFlow::write_csv(std::ostream& os) const {
    if (!data_) throw ArgumentError("GridFlow: empty flow");
    os << "t,node";
    for (int a = 0; a < data_->tdim; ++a) os << ",u" << a;
    os << "\n";
    char buf[64];
    for (size_t ti = 0; ti < data_->times.size(); ++ti)
        for (int node = 0; node < data_->node_count(); ++node) {
            std::snprintf(buf, sizeof(buf), "%.17g", data_->times[ti]);
            os << buf << "," << node;
            for (int a = 0; a < data_->tdim; ++a) {
                std::snprintf(buf, sizeof(buf), "%.17g", data_->u[ti][node * data_->tdim + a]);
                os << "," << buf;
            }
            os << "\n";
        }
}

} // namespace stflow

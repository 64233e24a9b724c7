#include "stflow/geometry.hpp"

#include "stflow/errors.hpp"

#include <Eigen/Cholesky>

#include <cmath>

namespace stflow {

namespace {

// Every model space in the catalog is conformally flat: g = lambda(t,x) * I.
// The factor, its time derivative, grad(ln lambda) and the Ricci multiple
// (Ric = ric_scale * g) have closed forms per model.
struct ConformalModel {
    std::function<double(double t, double r2)> lambda;
    std::function<double(double t, double r2)> dlambda_dt;
    std::function<Vec(double t, const Vec& x)> grad_log_lambda;
    std::function<double(double t, double r2)> ric_scale;
};

Christoffel conformal_christoffels(int m, const Vec& w) {
    // Gamma^i_{jk} = (d^i_j w_k + d^i_k w_j - d_{jk} w^i) / 2, w = grad ln(lambda)
    Christoffel gamma;
    gamma.dim = m;
    Mat eye = Mat::Identity(m, m);
    for (int i = 0; i < m; ++i) {
        Mat p = 0.5 * (eye.col(i) * w.transpose() + w * eye.row(i));
        p -= 0.5 * w[i] * eye;
        gamma.plane[i] = p;
    }
    return gamma;
}

MetricSample conformal_sample(const ConformalModel& cm, int m, double t, const Vec& x) {
    const double r2 = x.squaredNorm();
    const double lam = cm.lambda(t, r2);
    MetricSample s;
    s.dim = m;
    s.g = lam * Mat::Identity(m, m);
    s.dg_dt = cm.dlambda_dt(t, r2) * Mat::Identity(m, m);
    s.gamma = conformal_christoffels(m, cm.grad_log_lambda(t, x));
    s.ricci = cm.ric_scale(t, r2) * s.g;
    return s;
}

EvolvingManifold make_conformal_space(std::string id, int m, double chart_radius,
                                      bool evolving, ConformalModel cm) {
    EvolvingManifold space;
    space.id = std::move(id);
    space.dim = m;
    space.chart_radius = chart_radius;
    space.evolving = evolving;
    space.analytic_curvature = true;
    space.metric = [cm, m](double t, const Vec& x) { return conformal_sample(cm, m, t, x); };
    return space;
}

double clamp_unit(double v) { return std::min(1.0, std::max(-1.0, v)); }

// Stereographic chart of the unit sphere: x in R^m -> point of S^m in R^{m+1}.
Eigen::VectorXd sphere_embed(const Vec& x) {
    const double r2 = x.squaredNorm();
    Eigen::VectorXd p(x.size() + 1);
    p.head(x.size()) = 2.0 * x / (1.0 + r2);
    p[x.size()] = (r2 - 1.0) / (1.0 + r2);
    return p;
}

double sphere_distance(const Vec& x, const Vec& y) {
    Eigen::VectorXd a = sphere_embed(x), b = sphere_embed(y);
    // chord form is accurate near zero
    return 2.0 * std::asin(clamp_unit((a - b).norm() / 2.0));
}

double hyperbolic_distance(const Vec& x, const Vec& y) {
    const double num = 2.0 * (x - y).squaredNorm();
    const double den = (1.0 - x.squaredNorm()) * (1.0 - y.squaredNorm());
    return std::acosh(1.0 + num / den);
}

double adaptive_simpson(const std::function<double(double)>& f, double a, double b,
                        double fa, double fm, double fb, double whole, double tol, int depth) {
    const double m = (a + b) / 2.0;
    const double lm = (a + m) / 2.0, rm = (m + b) / 2.0;
    const double flm = f(lm), frm = f(rm);
    const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
        return left + right + (left + right - whole) / 15.0;
    return adaptive_simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
           adaptive_simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

double integrate(const std::function<double(double)>& f, double a, double b, double tol) {
    const double fa = f(a), fb = f(b), fm = f((a + b) / 2.0);
    const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 40);
}

} // namespace

MetricSample metric_at(const EvolvingManifold& space, double t, const Vec& x) {
    if (t < 0.0) throw DomainError(space.id + ": metric requested at t < 0");
    if (x.size() != space.dim) throw ArgumentError(space.id + ": point dimension mismatch");
    if (x.norm() >= space.chart_radius)
        throw DomainError(space.id + ": point outside chart");
    MetricSample s = space.metric(t, x);
    Eigen::LLT<Mat> llt(s.g);
    if (llt.info() != Eigen::Success)
        throw GeometryError(space.id + ": metric not positive definite");
    return s;
}

Mat sharp(const MetricSample& sample, const Mat& bilinear) {
    Eigen::LLT<Mat> llt(sample.g);
    if (llt.info() != Eigen::Success)
        throw GeometryError("sharp: singular metric");
    return llt.solve(bilinear);
}

SuperRicciReport validate_super_ricci(const EvolvingManifold& space,
                                      const std::vector<std::pair<double, Vec>>& samples) {
    if (samples.empty()) throw ArgumentError("validate_super_ricci: empty sample list");
    SuperRicciReport report;
    report.alpha_margin = std::numeric_limits<double>::infinity();
    for (const auto& [t, x] : samples) {
        MetricSample s = metric_at(space, t, x);
        Mat diff = s.ricci - s.dg_dt;
        report.alpha_margin = std::min(report.alpha_margin, min_eigenvalue_rel(diff, s.g));
    }
    report.flag = report.alpha_margin >= 0.0;
    return report;
}

CigarForms cigar_closed_forms(double t, const Vec& x) {
    const double r = x.norm();
    if (r <= 0.0) throw DomainError("cigar_closed_forms: singular at the origin");
    CigarForms f;
    const double et = std::exp(t);
    f.rho = std::asinh(et * r);
    const double root = std::sqrt(1.0 + std::exp(-2.0 * t) / (r * r));
    f.drho_dt = 1.0 / root;
    f.laplace_rho = 1.0 / (std::exp(2.0 * t) * r * r * root);
    f.radial_drift = f.drho_dt + 0.5 * f.laplace_rho;
    return f;
}

EvolvingManifold make_space(const std::string& id, int dim) {
    if (dim < 1 || dim > kMaxDim - 1)
        throw ArgumentError("make_space: unsupported dimension");
    const double m1 = static_cast<double>(dim - 1);

    if (id == "flat") {
        ConformalModel cm{
            [](double, double) { return 1.0; },
            [](double, double) { return 0.0; },
            [dim](double, const Vec&) { return Vec(Vec::Zero(dim)); },
            [](double, double) { return 0.0; },
        };
        auto space = make_conformal_space(id, dim, 1e9, false, cm);
        space.analytic_distance = [](double, const Vec& x, const Vec& y) {
            return (x - y).norm();
        };
        space.radial = RadialProfile{
            [](double, double r) { return r; },
            [](double, double) { return 0.0; },
            [m1](double, double r) { return m1 / r; },
            [](double, double rho) { return rho; },
        };
        return space;
    }

    if (id == "sphere") {
        ConformalModel cm{
            [](double, double r2) { double q = 1.0 + r2; return 4.0 / (q * q); },
            [](double, double) { return 0.0; },
            [](double, const Vec& x) { return Vec(-4.0 * x / (1.0 + x.squaredNorm())); },
            [m1](double, double) { return m1; },
        };
        auto space = make_conformal_space(id, dim, 10.0, false, cm);
        space.analytic_distance = [](double, const Vec& x, const Vec& y) {
            return sphere_distance(x, y);
        };
        space.radial = RadialProfile{
            [](double, double r) { return 2.0 * std::atan(r); },
            [](double, double) { return 0.0; },
            [m1](double, double r) { return m1 / std::tan(2.0 * std::atan(r)); },
            [](double, double rho) { return std::tan(rho / 2.0); },
        };
        return space;
    }

    if (id == "hyperbolic") {
        ConformalModel cm{
            [](double, double r2) { double q = 1.0 - r2; return 4.0 / (q * q); },
            [](double, double) { return 0.0; },
            [](double, const Vec& x) { return Vec(4.0 * x / (1.0 - x.squaredNorm())); },
            [m1](double, double) { return -m1; },
        };
        auto space = make_conformal_space(id, dim, 0.95, false, cm);
        space.analytic_distance = [](double, const Vec& x, const Vec& y) {
            return hyperbolic_distance(x, y);
        };
        space.radial = RadialProfile{
            [](double, double r) { return 2.0 * std::atanh(r); },
            [](double, double) { return 0.0; },
            [m1](double, double r) { return m1 / std::tanh(2.0 * std::atanh(r)); },
            [](double, double rho) { return std::tanh(rho / 2.0); },
        };
        return space;
    }

    if (id == "cigar") {
        if (dim != 2) throw ArgumentError("cigar: defined on R^2 only");
        // lambda = 1/(e^{-2t} + r^2); Ric = dg/dt = 2 e^{-2t} lambda * g exactly,
        // so the backward super Ricci margin is identically zero.
        ConformalModel cm{
            [](double t, double r2) { return 1.0 / (std::exp(-2.0 * t) + r2); },
            [](double t, double r2) {
                double lam = 1.0 / (std::exp(-2.0 * t) + r2);
                return 2.0 * std::exp(-2.0 * t) * lam * lam;
            },
            [](double t, const Vec& x) {
                return Vec(-2.0 * x / (std::exp(-2.0 * t) + x.squaredNorm()));
            },
            [](double t, double r2) { return 2.0 * std::exp(-2.0 * t) / (std::exp(-2.0 * t) + r2); },
        };
        auto space = make_conformal_space(id, dim, 1e9, true, cm);
        space.radial = RadialProfile{
            [](double t, double r) { return std::asinh(std::exp(t) * r); },
            [](double t, double r) {
                return 1.0 / std::sqrt(1.0 + std::exp(-2.0 * t) / (r * r));
            },
            [](double t, double r) {
                return 1.0 / (std::exp(2.0 * t) * r * r *
                              std::sqrt(1.0 + std::exp(-2.0 * t) / (r * r)));
            },
            [](double t, double rho) { return std::exp(-t) * std::sinh(rho); },
        };
        // Exact for points collinear with the tip (radial geodesics); a straight
        // chart-segment quadrature otherwise (upper bound; experiments keep the
        // ball center at the tip, where the closed form applies).
        space.analytic_distance = [](double t, const Vec& x, const Vec& y) {
            auto rho = [t](const Vec& p) { return std::asinh(std::exp(t) * p.norm()); };
            const double nx = x.norm(), ny = y.norm();
            if (nx < 1e-14 || ny < 1e-14) return std::abs(rho(x) - rho(y));
            const double cross = x[0] * y[1] - x[1] * y[0];
            if (std::abs(cross) <= 1e-12 * nx * ny)
                return x.dot(y) >= 0.0 ? std::abs(rho(x) - rho(y)) : rho(x) + rho(y);
            Vec d = y - x;
            auto speed = [&](double s) {
                Vec p = x + s * d;
                return d.norm() / std::sqrt(std::exp(-2.0 * t) + p.squaredNorm());
            };
            return integrate(speed, 0.0, 1.0, 1e-8);
        };
        return space;
    }

    throw ArgumentError("make_space: unknown model space '" + id + "'");
}

TargetManifold make_target(const std::string& id, int dim) {
    if (dim < 1 || dim > kMaxDim - 1)
        throw ArgumentError("make_target: unsupported dimension");
    TargetManifold target;
    target.id = id;
    target.dim = dim;

    // Constant-curvature action R(a,b)c = k (<b,c> a - <a,c> b), metric inner products.
    auto curvature_action = [dim](double k, std::function<Mat(const Vec&)> h_fn) {
        return [k, h_fn](const Vec& y, const Vec& a, const Vec& b, const Vec& c) {
            Mat h = h_fn(y);
            return Vec(k * ((b.dot(h * c)) * a - (a.dot(h * c)) * b));
        };
    };

    if (id == "flat") {
        target.chart_radius = 1e9;
        target.curved = false;
        target.metric = [dim](const Vec&) {
            TargetMetricSample s;
            s.h = Mat::Identity(dim, dim);
            s.gamma.dim = dim;
            for (int i = 0; i < dim; ++i) s.gamma.plane[i] = Mat::Zero(dim, dim);
            return s;
        };
        target.riemann = [dim](const Vec&, const Vec&, const Vec&, const Vec&) {
            return Vec(Vec::Zero(dim));
        };
        target.kappa = [](const Vec&) { return 0.0; };
        target.distance = [](const Vec& y, const Vec& z) { return (y - z).norm(); };
        return target;
    }

    if (id == "sphere" || id == "hyperbolic") {
        const double sign = (id == "sphere") ? 1.0 : -1.0;
        target.chart_radius = (id == "sphere") ? 10.0 : 0.95;
        target.curved = true;
        auto h_fn = [dim, sign](const Vec& y) {
            double q = 1.0 + sign * y.squaredNorm();
            return Mat(4.0 / (q * q) * Mat::Identity(dim, dim));
        };
        target.metric = [dim, sign, h_fn](const Vec& y) {
            TargetMetricSample s;
            s.h = h_fn(y);
            // grad ln(h): sphere -4y/(1+r^2), hyperbolic +4y/(1-r^2)
            Vec w = -4.0 * sign * y / (1.0 + sign * y.squaredNorm());
            s.gamma = conformal_christoffels(dim, w);
            return s;
        };
        target.riemann = curvature_action(sign, h_fn);
        target.kappa = [sign](const Vec&) { return sign; };
        target.distance = [sign](const Vec& y, const Vec& z) {
            return sign > 0 ? sphere_distance(y, z) : hyperbolic_distance(y, z);
        };
        return target;
    }

    throw ArgumentError("make_target: unknown target '" + id + "'");
}

Christoffel fd_christoffels(const MetricFn& g, double t, const Vec& x, double eps) {
    const int m = static_cast<int>(x.size());
    Mat g0 = g(t, x);
    Eigen::LLT<Mat> llt(g0);
    if (llt.info() != Eigen::Success)
        throw GeometryError("fd_christoffels: metric not positive definite");
    // dg[k] = d g / d x^k by central differences
    std::array<Mat, kMaxDim> dg;
    for (int k = 0; k < m; ++k) {
        Vec xp = x, xm = x;
        xp[k] += eps;
        xm[k] -= eps;
        dg[k] = (g(t, xp) - g(t, xm)) / (2.0 * eps);
    }
    Christoffel gamma;
    gamma.dim = m;
    for (int i = 0; i < m; ++i) gamma.plane[i] = Mat::Zero(m, m);
    // Gamma_{l,jk} = (d_j g_{lk} + d_k g_{lj} - d_l g_{jk}) / 2, then raise l.
    for (int j = 0; j < m; ++j)
        for (int k = j; k < m; ++k) {
            Vec lower(m);
            for (int l = 0; l < m; ++l)
                lower[l] = 0.5 * (dg[j](l, k) + dg[k](l, j) - dg[l](j, k));
            Vec upper = llt.solve(lower);
            for (int i = 0; i < m; ++i) {
                gamma.plane[i](j, k) = upper[i];
                gamma.plane[i](k, j) = upper[i];
            }
        }
    return gamma;
}

Mat fd_ricci(const MetricFn& g, double t, const Vec& x, double eps) {
    const int m = static_cast<int>(x.size());
    Christoffel at = fd_christoffels(g, t, x, eps);
    std::array<Christoffel, kMaxDim> dplus, dminus;
    for (int k = 0; k < m; ++k) {
        Vec xp = x, xm = x;
        xp[k] += eps;
        xm[k] -= eps;
        dplus[k] = fd_christoffels(g, t, xp, eps);
        dminus[k] = fd_christoffels(g, t, xm, eps);
    }
    auto dgamma = [&](int d, int i, int j, int k) {
        return (dplus[d].plane[i](j, k) - dminus[d].plane[i](j, k)) / (2.0 * eps);
    };
    Mat ric = Mat::Zero(m, m);
    // Ric_{jl} = d_i Gamma^i_{lj} - d_l Gamma^i_{ij} + G^i_{im} G^m_{lj} - G^i_{lm} G^m_{ij}
    for (int j = 0; j < m; ++j)
        for (int l = 0; l < m; ++l) {
            double v = 0.0;
            for (int i = 0; i < m; ++i) {
                v += dgamma(i, i, l, j) - dgamma(l, i, i, j);
                for (int mm = 0; mm < m; ++mm)
                    v += at.plane[i](i, mm) * at.plane[mm](l, j) -
                         at.plane[i](l, mm) * at.plane[mm](i, j);
            }
            ric(j, l) = v;
        }
    return (ric + ric.transpose()) / 2.0;
}

Mat fd_dg_dt(const MetricFn& g, double t, const Vec& x, double eps) {
    // one-sided at t near 0 so the sample stays in the domain
    if (t >= eps) return Mat((g(t + eps, x) - g(t - eps, x)) / (2.0 * eps));
    return Mat((g(t + eps, x) - g(t, x)) / eps);
}

EvolvingManifold make_space_from_metric(std::string id, int dim, double chart_radius,
                                        MetricFn g, double eps) {
    EvolvingManifold space;
    space.id = std::move(id);
    space.dim = dim;
    space.chart_radius = chart_radius;
    space.evolving = true; // unknown; FD dg/dt decides pointwise
    space.analytic_curvature = false;
    space.metric = [g, dim, eps](double t, const Vec& x) {
        MetricSample s;
        s.dim = dim;
        s.g = g(t, x);
        s.dg_dt = fd_dg_dt(g, t, x, eps);
        s.gamma = fd_christoffels(g, t, x, eps);
        s.ricci = fd_ricci(g, t, x, eps);
        return s;
    };
    return space;
}

double segment_length(const EvolvingManifold& space, double t, const Vec& x, const Vec& y,
                      double tol) {
    Vec d = y - x;
    if (d.norm() == 0.0) return 0.0;
    auto speed = [&](double s) {
        Vec p = x + s * d;
        Mat g = space.metric(t, p).g;
        return std::sqrt(d.dot(g * d));
    };
    return integrate(speed, 0.0, 1.0, tol);
}

} // namespace stflow

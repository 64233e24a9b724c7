#pragma once

#include "stflow/types.hpp"

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace stflow {

/// Metric data of the evolving source manifold at one (t, x).
struct MetricSample {
    Mat g;       // metric components g_{ij}(t, x), SPD
    Mat dg_dt;   // time derivative of the metric
    Christoffel gamma;
    Mat ricci;   // Ricci tensor of g(t) at x
    int dim = 0;
};

/// Radial data of a rotationally symmetric model space, everything expressed
/// through the distance rho from the symmetry center (the chart origin).
/// r is the Euclidean chart radius |x|.
struct RadialProfile {
    std::function<double(double t, double r)> rho;          // d_{g(t)}(0, x)
    std::function<double(double t, double r)> drho_dt;      // time derivative at fixed x
    std::function<double(double t, double r)> laplace_rho;  // Laplace-Beltrami of rho
    std::function<double(double t, double rho)> r_of_rho;   // inverse of rho(t, .)
};

/// Chart-based source manifold with a time-dependent metric g(t).
///
/// The raw `metric` evaluator is unchecked; use metric_at() for the validated
/// entry point. All evaluators are immutable after construction and safe for
/// concurrent use.
struct EvolvingManifold {
    std::string id;
    int dim = 0;
    double chart_radius = 0.0;
    bool evolving = false;           // true iff dg/dt is not identically zero
    bool analytic_curvature = false; // Christoffels/Ricci from closed forms

    std::function<MetricSample(double t, const Vec& x)> metric;
    // d_{g(t)}(x, y); empty function when no analytic distance is available.
    std::function<double(double t, const Vec& x, const Vec& y)> analytic_distance;
    std::optional<RadialProfile> radial;

    bool has_distance() const { return static_cast<bool>(analytic_distance); }
};

/// Static Riemannian target manifold in a single chart.
struct TargetMetricSample {
    Mat h;
    Christoffel gamma;
};

struct TargetManifold {
    std::string id;
    int dim = 0;
    double chart_radius = 0.0;
    bool curved = false; // false iff the curvature tensor vanishes identically

    std::function<TargetMetricSample(const Vec& y)> metric;
    // Curvature action R(a, b) c as a tangent vector at y.
    std::function<Vec(const Vec& y, const Vec& a, const Vec& b, const Vec& c)> riemann;
    // Upper bound of the sectional curvatures at y.
    std::function<double(const Vec& y)> kappa;
    std::function<double(const Vec& y, const Vec& z)> distance;
};

// ---------------------------------------------------------------------------
// Operations

/// Validated metric evaluation: checks the chart domain and positive
/// definiteness before returning the sample.
MetricSample metric_at(const EvolvingManifold& space, double t, const Vec& x);

/// Raise one index of a bilinear form with the sampled metric: g^{-1} b.
Mat sharp(const MetricSample& sample, const Mat& bilinear);

struct SuperRicciReport {
    bool flag = false;      // Ric - dg/dt >= 0 on all samples
    double alpha_margin = 0.0; // min over samples of lambda_min(Ric - dg/dt) rel. g
};

/// Scan (t, x) samples for the backward super Ricci flow inequality.
/// alpha_margin is measured in eigenvalues relative to g(t).
SuperRicciReport validate_super_ricci(const EvolvingManifold& space,
                                      const std::vector<std::pair<double, Vec>>& samples);

struct CigarForms {
    double rho = 0.0;
    double drho_dt = 0.0;
    double laplace_rho = 0.0;
    double radial_drift = 0.0; // drho_dt + laplace_rho / 2
};

/// Closed forms of the radial distance process on the cigar metric
/// g(t) = g_eucl / (e^{-2t} + |x|^2). Singular at x = 0.
CigarForms cigar_closed_forms(double t, const Vec& x);

// ---------------------------------------------------------------------------
// Model-space catalog

/// ids: "flat", "sphere" (unit, stereographic chart), "hyperbolic"
/// (Poincare ball), "cigar" (dim 2 only).
EvolvingManifold make_space(const std::string& id, int dim);

/// ids: "flat", "sphere", "hyperbolic". Constant-curvature closed forms.
TargetManifold make_target(const std::string& id, int dim);

// ---------------------------------------------------------------------------
// Finite-difference route (fallback for metrics without closed forms, and the
// second leg of the analytic-vs-numeric cross checks).

using MetricFn = std::function<Mat(double t, const Vec& x)>;

Christoffel fd_christoffels(const MetricFn& g, double t, const Vec& x, double eps = 1e-4);
Mat fd_ricci(const MetricFn& g, double t, const Vec& x, double eps = 1e-4);
Mat fd_dg_dt(const MetricFn& g, double t, const Vec& x, double eps = 1e-4);

/// Wrap a bare metric function as a manifold whose Christoffels, Ricci and
/// dg/dt all come from central finite differences.
EvolvingManifold make_space_from_metric(std::string id, int dim, double chart_radius,
                                        MetricFn g, double eps = 1e-4);

/// Length of the straight chart segment x -> y under g(t), by adaptive
/// Simpson quadrature (tolerance 1e-8). Exact distance for radial segments of
/// rotationally symmetric metrics; an upper bound otherwise.
double segment_length(const EvolvingManifold& space, double t, const Vec& x, const Vec& y,
                      double tol = 1e-8);

} // namespace stflow

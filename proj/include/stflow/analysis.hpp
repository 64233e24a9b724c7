#pragma once

#include "stflow/geometry.hpp"
#include "stflow/harmonic.hpp"
#include "stflow/stochastic.hpp"
#include "stflow/types.hpp"

#include <json.hpp>

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace stflow {

// ---------------------------------------------------------------------------
// Reporting

struct Assertion {
    std::string name;
    bool pass = false;
    double value = 0.0;
    double threshold = 0.0;
    std::string detail; // e.g. "one-sided, 3*SE"
};

struct ExperimentReport {
    std::string experiment;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json estimates = nlohmann::json::object();
    std::vector<Assertion> assertions;
    double wall_seconds = 0.0;

    bool all_pass() const;
    nlohmann::json to_json() const;
    void print_summary(std::ostream& os) const;
};

/// Monte Carlo runtime knobs shared by the estimators.
struct McConfig {
    StepConfig step;
    StoppingRule stop;
    int n_paths = 1000;
    int threads = 0;
};

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;
    long n = 0;
};

/// Per-path functional values, one row per usable path, for external plotting.
struct PerPathTable {
    std::vector<std::string> columns;
    std::vector<std::vector<double>> rows;

    void write_csv(std::ostream& os) const;
};

/// Streaming mean/variance accumulator (Welford).
class RunningStat {
  public:
    void add(double x);
    MeanSe result() const;

  private:
    long n_ = 0;
    double mean_ = 0.0, m2_ = 0.0;
};

// ---------------------------------------------------------------------------
// The cutoff field and the l-process

/// f(t, y) = cos(pi/(2R) d_{g(t)}(center, y)), in [0, 1] on the ball D_R.
struct CutoffField {
    Vec center;
    double R = 1.0;
    double p = 1.0;

    double value(const EvolvingManifold& space, double t, const Vec& y) const;
};

/// Frozen construction data of the l-process: l(s) = h1(h0(s)) v with
/// h1(r) = 1 - (1 - exp(-2 c r/p)) / (1 - exp(-2 c t/p)).
struct EllParams {
    Vec v;
    double p = 2.0;
    double cpR = 0.0;
    double t_budget = 1.0;

    double h1(double r) const;
    double h1dot(double r) const;
};

/// Requires p >= 2 (the moment bound's Jensen step needs it).
EllParams build_ell(const Vec& v, double p, double cpR, double t_budget);

/// Pathwise state: h0(s) = T(s) ^ t_budget accumulated through dh0 = f^{-2} ds.
struct EllProcess {
    EllParams params;
    double h0 = 0.0;

    Vec ell() const;                      // h1(h0) v
    Vec ell_dot(double f_value) const;    // h1'(h0) f^{-2} v; zero once exhausted
    void advance(double f_value, double h);
    bool exhausted() const { return h0 >= params.t_budget - 1e-15; }
};

// ---------------------------------------------------------------------------
// Martingale drift test

enum class MartFunctional { sandwich, n_process, m_process };

struct DriftCell {
    int bin = 0, comp = 0;
    double mean_increment = 0.0, se = 0.0;
    bool pass = false;
};

struct DriftTestReport {
    std::vector<DriftCell> cells;
    int n_pass = 0;
    double pass_fraction = 0.0;
    bool pass = false; // >= 95% of cells within 3*SE
    int n_bins = 0, n_comps = 0, n_paths_used = 0;

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

/// Bin-increment test of E[dF] = 0 for F in {theta_tilde^{-1} du theta v,
/// N_t, M_t}. The auxiliary processes use the linear ramp l(s) = (1 - s/T) v.
DriftTestReport martingale_drift_test(const EvolvingManifold& space,
                                      const TargetManifold& target, const SpaceTimeMap& map,
                                      const Vec& x0, const Vec& v, const McConfig& mc,
                                      int n_bins, MartFunctional functional = MartFunctional::sandwich);

// ---------------------------------------------------------------------------
// Representation formulas

struct RepresentationReport {
    Vec estimate, se;          // unstopped mean, or the M-route when stopped
    Vec estimate_alt, se_alt;  // N-route (stopped runs only)
    Vec reference;             // du(0, x0) v
    bool stopped = false;
    double frac_ell_active_at_tau = 0.0;
    std::vector<std::string> warnings;
    bool within_3se = false;

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

/// Monte Carlo estimate of du(0, x0) v: E[theta_tilde^{-1} du theta v] at
/// time t (unstopped), or the stopped l-process identities when R is given.
RepresentationReport estimate_representation(const EvolvingManifold& space,
                                             const TargetManifold& target,
                                             const SpaceTimeMap& map, const Vec& x0,
                                             const Vec& v, double t, const McConfig& mc,
                                             std::optional<double> R = std::nullopt,
                                             std::optional<EllParams> ell = std::nullopt);

// ---------------------------------------------------------------------------
// The cutoff supremum c_p(R)

/// Numerical supremum over (u, rho) in [0, horizon] x (1e-3 R, R] of
///   p(p+1)/2 |grad f|^2 - p f (df/du + Laplacian f / 2)
/// for the radial cutoff; needs the model's radial profile.
double compute_cpR(const EvolvingManifold& space, double R, double p, int n_rho = 2000,
                   int n_t = 1, double horizon = 1.0);

// ---------------------------------------------------------------------------
// First / second factor of the Hoelder split

struct FirstFactorReport {
    double p = 2.0, cpR = 0.0, R = 0.0, t_budget = 0.0;
    MeanSe lhs_direct;      // E |int (P^{-1} Theta l') . dB|^p
    MeanSe lhs_isometry;    // E int |P^{-1} Theta l'|^2 ds (p = 2 route)
    double rhs = 0.0;       // closed form with C_p = 1
    MeanSe ell_integrability; // E[(int |l'|^2 ds)^{(1+eps)/2}], eps = 1
    bool pass_bound = false;
    bool pass_routes_agree = false; // p = 2: the two LHS routes within 3*SE

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

FirstFactorReport first_factor(const EvolvingManifold& space, const Vec& x0,
                               const EllParams& ell, const McConfig& mc, double R);

struct FSuperReport {
    double p = 1.0, R = 0.0, cpR = 0.0, t_budget = 0.0;
    MeanSe lhs; // E f^{-p}(tau, X_tau)
    MeanSe rhs; // E exp(c_p(R) T(tau))
    bool pass = false;

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

/// E[f^{-p}(tau, X_tau)] <= E[e^{c_p(R) T(tau)}] at tau = min(sigma(t), horizon).
FSuperReport f_supermartingale_check(const EvolvingManifold& space, const Vec& x0, double p,
                                     double R, double t_budget, const McConfig& mc,
                                     std::optional<double> cpR_in = std::nullopt);

struct SecondFactorBound {
    std::string name; // "sf", "ch", "bdc"
    bool applicable = false;
    std::string reason;
    double value = 0.0, se = 0.0;
    bool pass = false;
};

struct SecondFactorReport {
    double q = 2.0;
    MeanSe adev_moment; // E |A_def(tau)|^q
    std::vector<SecondFactorBound> bounds;
    double dilatation_ratio_note = 0.0; // sup kappa/K seen along paths (0/0 -> skip)

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

SecondFactorReport second_factor_bounds(const EvolvingManifold& space,
                                        const TargetManifold& target, const SpaceTimeMap& map,
                                        const Vec& x0, double q, const McConfig& mc,
                                        std::optional<double> b_ratio = std::nullopt);

struct InvDampReport {
    double max_violation = 0.0; // max over paths and steps of norm - exp bound
    double tolerance = 0.0;     // 10 h
    bool pass = false;
    long states_checked = 0;

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

/// Pathwise |theta_tilde^{-1}| <= exp(int L_s ds / 2) with the two-case L_s.
InvDampReport inv_damped_bound_check(const EvolvingManifold& space,
                                     const TargetManifold& target, const SpaceTimeMap& map,
                                     const Vec& x0, const McConfig& mc);

// ---------------------------------------------------------------------------
// Liouville-bound pipelines

struct LiouvillePipeline {
    std::string name;
    bool applicable = false;
    std::string reason;
    double bound = 0.0;
    nlohmann::json factors = nlohmann::json::object();
};

struct LiouvilleReport {
    std::vector<LiouvillePipeline> pipelines;
    std::optional<double> best; // min over applicable pipelines
    bool no_bound = false;

    nlohmann::json to_json() const;
};

LiouvilleReport liouville_bound(const EvolvingManifold& space, const TargetManifold& target,
                                const SpaceTimeMap& map, const Vec& x0, const Vec& v,
                                double t, double R, double p, double q, const McConfig& mc);

struct SubsqrtReport {
    std::vector<double> R_values, chain_values; // c_2(R) * phi(R)^2
    bool decreasing = false;
    GrowthCheck growth;

    nlohmann::json to_json() const;
};

/// The sub-square-root chain with phi(r) = a r^{0.4}.
SubsqrtReport subsqrt_chain(const EvolvingManifold& space, const TargetManifold& target,
                            const SpaceTimeMap& map, const Vec& x0, double phi_coeff,
                            const std::vector<double>& R_values,
                            const std::vector<std::pair<double, Vec>>& growth_samples);

// ---------------------------------------------------------------------------
// Small-image tools

struct HessianTestReport {
    double coeff = 0.0;       // c in  grad df + c f <= 0,  f = cos(sqrt(c) d)
    double max_eigen_margin = -1.0; // max rel. eigenvalue of (grad df + c f h)
    bool pass = false;
    int points_checked = 0;
};

struct SmallImageReport {
    bool regular_flag = false; // r < pi / (2 sqrt(kappa)), ball inside the chart
    double kappa_used = 0.0;
    HessianTestReport hessian;
    std::vector<double> exp_moment_by_seed;
    std::vector<double> exp_moment_se_by_seed;
    bool moments_finite = false;

    nlohmann::json to_json() const;
    PerPathTable per_path;
};

/// Regular-ball flag, the FD Hessian test of  grad df + coeff f <= 0,  and the
/// exponential-moment estimate E exp(lambda int |du|^2 ds) across seed
/// replicates (lambda = kappa q / 2).
SmallImageReport small_image_tools(const EvolvingManifold& space, const TargetManifold& target,
                                   const SpaceTimeMap& map, const Vec& x0, const Vec& center,
                                   double radius, double q, const McConfig& mc,
                                   int n_seed_replicates = 10,
                                   std::optional<double> kappa_override = std::nullopt);

// ---------------------------------------------------------------------------
// Radial drift inequality scan

struct DriftEstimateReport {
    double r0 = 1.0, C_r0 = 0.0, k_r0 = 0.0;
    double max_violation = 0.0;        // LHS - RHS over the scan grid
    bool pass = false;                 // inequality holds (tolerance 1e-9)
    double static_form_max_excess = 0.0; // max of LHS - (d-1)/(2 rho)
    bool static_form_holds = false;    // named negative result when false

    nlohmann::json to_json() const;
};

/// Checks  drho/dt + Laplacian(rho)/2 <= (d-1)/2 (k coth(k (rho^r0)) + k^2 (rho^r0))
/// with k = sqrt(C(x, r0)/(d-1)), and reports whether the static-metric form
/// (d-1)/(2 rho) also holds (it fails on genuinely evolving examples).
DriftEstimateReport drift_estimate_check(const EvolvingManifold& space, double r0,
                                         double R_scan, int grid_n = 2000,
                                         double horizon = 1.0);

} // namespace stflow

#pragma once

#include "stflow/geometry.hpp"
#include "stflow/types.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace stflow {

/// A map u(t, x) from the evolving source chart into the target chart,
/// with its first derivatives and (optionally) analytic second derivatives.
struct SpaceTimeMap {
    enum class Kind { analytic, grid };

    Kind kind = Kind::analytic;
    std::string id;
    int source_dim = 0;
    int target_dim = 0;
    bool is_harmonic = false; // catalog annotation: residual should vanish
    double t_min = 0.0;
    double t_max = std::numeric_limits<double>::infinity();

    std::function<Vec(double t, const Vec& x)> u;
    std::function<Mat(double t, const Vec& x)> du;    // n x m
    std::function<Vec(double t, const Vec& x)> dudt;  // n
    // d2u(t,x)[a] = m x m Hessian of the a-th component; empty -> finite differences
    std::function<std::array<Mat, kMaxDim>(double t, const Vec& x)> d2u;

    bool has_d2u() const { return static_cast<bool>(d2u); }
};

/// Analytic map catalog. ids: "identity", "linear" (param = scale),
/// "x2-minus-t", "circle-wave", "geodesic-h2", "geodesic-s2",
/// "bounded-geodesic-h2", "sphere-eigenmap", "small-image-s2" (param = slope),
/// "constant".
SpaceTimeMap make_map(const std::string& id, int source_dim, int target_dim,
                      double param = 0.0);

/// u(t,x) = A x between flat charts.
SpaceTimeMap make_linear_map(const Mat& A);

// ---------------------------------------------------------------------------
// Operations

/// Tension field trace(grad du) at (t, x) in target chart coordinates:
/// g^{jk} (d_j d_k u^a + G~^a_{bc} d_j u^b d_k u^c - G^i_{jk} d_i u^a).
Vec tension(const SpaceTimeMap& map, const EvolvingManifold& space,
            const TargetManifold& target, double t, const Vec& x);

/// max over samples of | du/dt + tension/2 | measured in h at u(t,x).
double harmonic_residual(const SpaceTimeMap& map, const EvolvingManifold& space,
                         const TargetManifold& target,
                         const std::vector<std::pair<double, Vec>>& samples);

/// u_hat(t, .) = u(T - t, .); domain becomes [0, T - t_min].
SpaceTimeMap time_reverse(const SpaceTimeMap& map, double T);

/// Metric family reversed in time: g_hat(t) = g(T - t). Distance and radial
/// data are re-indexed accordingly; curvature flags carry over.
EvolvingManifold time_reverse_space(const EvolvingManifold& space, double T);

struct DilatationProfile {
    Vec lambdas; // eigenvalues of du* du, descending
    double K = 0.0;
};

/// Eigenvalues of du*du (adjoints via g(t) and h) and the dilatation ratio
/// K = lambda_1 / sum_{i>=2} lambda_i, with a vanishing denominator giving 0.
DilatationProfile dilatation(const SpaceTimeMap& map, const EvolvingManifold& space,
                             const TargetManifold& target, double t, const Vec& x);

struct GrowthCheck {
    bool inequality_ok = false; // dist_N(u(t,z), u(0,x)) <= phi(d_{g(t)}(z,x)) on samples
    bool decay_ok = false;      // phi(r)/sqrt(r) non-increasing, final value below threshold
    bool flag = false;
    double worst_slack = 0.0;   // min over samples of phi(d) - dist
    double final_ratio = 0.0;   // phi(r)/sqrt(r) at the largest sampled r
};

GrowthCheck growth_check(const SpaceTimeMap& map, const EvolvingManifold& space,
                         const TargetManifold& target, const Vec& x,
                         const std::function<double(double)>& phi,
                         const std::vector<std::pair<double, Vec>>& samples,
                         double ratio_threshold);

// ---------------------------------------------------------------------------
// Grid heat flow

struct FlowGridSpec {
    int axes = 1;        // 1 or 2, periodic in every axis
    int nodes = 256;     // per axis
    double length = 2.0 * 3.14159265358979323846; // period per axis
};

/// Result of the explicit heat-flow integration; shares its storage with the
/// SpaceTimeMap evaluators built from it.
class GridFlow {
  public:
    GridFlow() = default;

    SpaceTimeMap map() const;
    const std::vector<double>& times() const;
    int nodes_per_axis() const;
    int axes() const;
    const std::vector<std::string>& warnings() const { return warnings_; }

    /// Node value at a stored time index.
    Vec value_at(int time_index, int node_index) const;

    /// CSV rows: t, node index, u coordinates.
    void write_csv(std::ostream& os) const;

    struct Data;

  private:
    friend GridFlow heat_flow_integrate(const std::function<Vec(const Vec&)>&,
                                        const EvolvingManifold&, const TargetManifold&,
                                        double, double, const FlowGridSpec&, int);
    std::shared_ptr<const Data> data_;
    std::vector<std::string> warnings_;
};

/// Explicit update u <- u + (dt/2) * tension on a periodic grid over a flat
/// source chart. Snapshots every `store_every` steps feed the interpolating
/// evaluators (cubic in space, linear in time).
GridFlow heat_flow_integrate(const std::function<Vec(const Vec&)>& u0,
                             const EvolvingManifold& space, const TargetManifold& target,
                             double horizon, double dt, const FlowGridSpec& grid,
                             int store_every = 100);

} // namespace stflow

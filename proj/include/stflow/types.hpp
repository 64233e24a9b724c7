#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>

namespace stflow {

// All manifold dimensions in this project are small (m, n <= 3; 4 gives
// headroom). Bounded-dynamic Eigen types keep everything on the stack.
inline constexpr int kMaxDim = 4;

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;

/// Christoffel symbols at a point: plane[i](j,k) = Gamma^i_{jk}.
struct Christoffel {
    int dim = 0;
    std::array<Mat, kMaxDim> plane{};

    /// (Gamma(dx) v)^i = Gamma^i_{jk} dx^j v^k
    Vec contract(const Vec& dx, const Vec& v) const {
        Vec out(dim);
        for (int i = 0; i < dim; ++i) out[i] = dx.dot(plane[i] * v);
        return out;
    }

    /// Column-wise contraction: returns the matrix with columns Gamma(dx) V.col(c).
    Mat contract_columns(const Vec& dx, const Mat& V) const {
        Mat out(dim, V.cols());
        for (int c = 0; c < V.cols(); ++c) out.col(c) = contract(dx, V.col(c));
        return out;
    }

    /// g^{jk} Gamma^i_{jk} as a vector over i (the Ito drift contraction).
    Vec trace_with(const Mat& g_inv) const {
        Vec out(dim);
        for (int i = 0; i < dim; ++i) out[i] = (g_inv.array() * plane[i].array()).sum();
        return out;
    }
};

/// Largest singular value of A as an operator (V, g_from) -> (W, g_to),
/// i.e. sup |Av|_{g_to} / |v|_{g_from} over v != 0.
double operator_norm(const Mat& A, const Mat& g_from, const Mat& g_to);

/// Smallest eigenvalue of the symmetric bilinear form `b` relative to the
/// metric `g` (generalized eigenvalue problem b v = lambda g v).
double min_eigenvalue_rel(const Mat& b, const Mat& g);
double max_eigenvalue_rel(const Mat& b, const Mat& g);

/// Eigenvalues of `b` relative to `g`, sorted descending.
Vec eigenvalues_rel(const Mat& b, const Mat& g);

/// Gram-Schmidt the columns of E against the inner product g (in place).
void gram_schmidt(Mat& E, const Mat& g);

/// splitmix64 mixing; decorrelates (seed, index) pairs into path streams.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

} // namespace stflow

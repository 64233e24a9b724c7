#include "stflow/types.hpp"

#include "stflow/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace stflow {

double operator_norm(const Mat& A, const Mat& g_from, const Mat& g_to) {
    // |Av|_{g_to}/|v|_{g_from} = sigma_max(L_to^T A L_from^{-T}),
    // with g = L L^T the Cholesky factorizations.
    Eigen::LLT<Mat> from(g_from), to(g_to);
    if (from.info() != Eigen::Success || to.info() != Eigen::Success)
        throw GeometryError("operator_norm: metric not positive definite");
    Mat lt = to.matrixL().transpose();
    Mat m = lt * A;
    // Right-solve by L_from^T: m <- m * L_from^{-T}
    Mat lfT = Mat(from.matrixL()).transpose();
    Mat conj = lfT.transpose().triangularView<Eigen::Lower>().solve(m.transpose()).transpose();
    Eigen::SelfAdjointEigenSolver<Mat> es(conj.transpose() * conj);
    return std::sqrt(std::max(0.0, es.eigenvalues().maxCoeff()));
}

namespace {

Vec rel_eigenvalues_sorted(const Mat& b, const Mat& g) {
    Eigen::LLT<Mat> llt(g);
    if (llt.info() != Eigen::Success)
        throw GeometryError("relative eigenvalues: metric not positive definite");
    Mat l = llt.matrixL();
    // conj = L^{-1} b L^{-T}, symmetric with the eigenvalues of g^{-1} b.
    Mat tmp = l.triangularView<Eigen::Lower>().solve(b);
    Mat conj = l.triangularView<Eigen::Lower>().solve(tmp.transpose()).transpose();
    Eigen::SelfAdjointEigenSolver<Mat> es((conj + conj.transpose()) / 2.0);
    Vec ev = es.eigenvalues();
    std::sort(ev.data(), ev.data() + ev.size(), std::greater<double>());
    return ev;
}

} // namespace

double min_eigenvalue_rel(const Mat& b, const Mat& g) {
    Vec ev = rel_eigenvalues_sorted(b, g);
    return ev[ev.size() - 1];
}

double max_eigenvalue_rel(const Mat& b, const Mat& g) {
    return rel_eigenvalues_sorted(b, g)[0];
}

Vec eigenvalues_rel(const Mat& b, const Mat& g) {
    return rel_eigenvalues_sorted(b, g);
}

void gram_schmidt(Mat& E, const Mat& g) {
    const int m = static_cast<int>(E.cols());
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < i; ++j) {
            double proj = E.col(j).dot(g * E.col(i));
            E.col(i) -= proj * E.col(j);
        }
        double nrm = std::sqrt(E.col(i).dot(g * E.col(i)));
        if (!(nrm > 0.0)) throw GeometryError("gram_schmidt: degenerate frame");
        E.col(i) /= nrm;
    }
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace stflow

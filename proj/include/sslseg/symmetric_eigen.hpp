#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace sslseg {

/// Eigendecomposition of a symmetric matrix. Column j of `vectors`
/// (vectors[i * n + j]) is the unit eigenvector for values[j].
struct SymmetricEigen {
    int n = 0;
    std::vector<double> values;
    std::vector<double> vectors;
};

/// Cyclic Jacobi rotations on a dense symmetric matrix. Sweeps run in a fixed
/// (p, q) order so the result is reproducible bit for bit on identical input.
/// Quadratic-size input only; the transforms fitted here top out at a few
/// hundred dimensions, where Jacobi is both accurate and fast enough.
inline SymmetricEigen jacobi_eigen_symmetric(std::vector<double> a, int n) {
    if (n <= 0 || a.size() != static_cast<size_t>(n) * n)
        throw std::invalid_argument("jacobi_eigen_symmetric: bad dimensions");

    std::vector<double> v(static_cast<size_t>(n) * n, 0.0);
    for (int i = 0; i < n; ++i) v[static_cast<size_t>(i) * n + i] = 1.0;

    auto off_norm = [&]() {
        double s = 0.0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) s += a[static_cast<size_t>(p) * n + q] * a[static_cast<size_t>(p) * n + q];
        return s;
    };

    double frob_sq = 0.0;
    for (double x : a) frob_sq += x * x;
    const double tol = 1e-28 * frob_sq;  // off-diagonal mass below ~1e-14 * ||A||_F

    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps && off_norm() > tol; ++sweep) {
        for (int p = 0; p < n - 1; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<size_t>(p) * n + q];
                if (apq == 0.0) continue;
                const double app = a[static_cast<size_t>(p) * n + p];
                const double aqq = a[static_cast<size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(1.0 + theta * theta));
                const double c = 1.0 / std::sqrt(1.0 + t * t);
                const double s = t * c;

                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<size_t>(k) * n + p];
                    const double akq = a[static_cast<size_t>(k) * n + q];
                    a[static_cast<size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<size_t>(p) * n + k];
                    const double aqk = a[static_cast<size_t>(q) * n + k];
                    a[static_cast<size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<size_t>(q) * n + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < n; ++k) {
                    const double vkp = v[static_cast<size_t>(k) * n + p];
                    const double vkq = v[static_cast<size_t>(k) * n + q];
                    v[static_cast<size_t>(k) * n + p] = c * vkp - s * vkq;
                    v[static_cast<size_t>(k) * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    SymmetricEigen out;
    out.n = n;
    out.values.resize(n);
    for (int i = 0; i < n; ++i) out.values[i] = a[static_cast<size_t>(i) * n + i];
    out.vectors = std::move(v);
    return out;
}

/// Column indices ordered by descending eigenvalue; exact ties keep the
/// original column order so downstream selection is deterministic.
inline std::vector<int> descending_eigen_order(const SymmetricEigen& eig) {
    std::vector<int> order(eig.n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return eig.values[i] > eig.values[j]; });
    return order;
}

}  // namespace sslseg

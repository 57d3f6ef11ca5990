#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "sslseg/errors.hpp"
#include "sslseg/feature_map.hpp"
#include "sslseg/symmetric_eigen.hpp"

namespace sslseg {

/// One fitted subspace-approximation-with-adjusted-bias stage: a constant DC
/// anchor, F-1 principal-direction AC anchors over the DC-removed residual,
/// and one shared bias large enough to keep every training response
/// non-negative.
struct SaabKernelBank {
    int input_dim = 0;
    int num_kernels = 0;                // F
    std::vector<double> dc_anchor;      // input_dim entries, all 1/sqrt(input_dim)
    std::vector<double> ac_anchors;     // (F-1) x input_dim, row-major
    std::vector<double> bias;           // F entries, all equal to bias_scale * sqrt(F)
    double bias_scale = 0.0;            // d
    std::vector<double> mean_vector;    // per-dimension mean of DC-removed residuals
};

struct SaabFitOptions {
    uint64_t seed = 0;
    size_t max_fit_rows = 1'000'000;  // covariance/mean estimated on at most this many rows
    bool quantize_params = false;     // round parameters through f32 (what serialization stores)
};

namespace detail {

/// Raw (pre-bias) responses of one patch row: out[0] = dc . x, out[c] = a_c . r
/// with r = x - (dc . x) dc - mean. Fit and apply share this routine so the
/// bias chosen during fitting bounds exactly the values apply computes.
inline void saab_raw_responses(const SaabKernelBank& bank, const float* row, double* out,
                               double* residual) {
    const int d = bank.input_dim;
    double dc_raw = 0.0;
    for (int j = 0; j < d; ++j) dc_raw += bank.dc_anchor[j] * row[j];
    out[0] = dc_raw;
    for (int j = 0; j < d; ++j)
        residual[j] = row[j] - dc_raw * bank.dc_anchor[j] - bank.mean_vector[j];
    for (int c = 1; c < bank.num_kernels; ++c) {
        const double* a = bank.ac_anchors.data() + static_cast<size_t>(c - 1) * d;
        double s = 0.0;
        for (int j = 0; j < d; ++j) s += a[j] * residual[j];
        out[c] = s;
    }
}

inline double round_through_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

}  // namespace detail

/// Fit one Saab stage on flattened patches.
///
/// The DC anchor is fixed at (1, ..., 1)/sqrt(dim). Each row's DC component is
/// projected out, the per-dimension mean of the residuals is removed, and the
/// AC anchors are the top F-1 eigenvectors of the residual covariance, found
/// with a deterministic cyclic Jacobi solver on the DC-orthogonal complement
/// (so even zero-variance directions stay orthogonal to DC). Eigenvalue ties
/// break by original dimension index; each eigenvector is signed so its
/// largest-magnitude entry is positive. The bias is the smallest value
/// covering every training response, so outputs on the training rows are
/// non-negative.
///
/// When the input exceeds max_fit_rows, covariance and mean are estimated on a
/// seed-deterministic uniform subsample; the bias bound still scans all rows.
inline SaabKernelBank fit_saab(const PatchMatrix& patches, int num_kernels,
                               const SaabFitOptions& options = {}) {
    const int dim = patches.cols;
    const long long n_rows = patches.rows;
    if (num_kernels < 2)
        throw std::invalid_argument("fit_saab: need at least 2 kernels (DC + one AC)");
    if (num_kernels > dim)
        throw std::invalid_argument("fit_saab: more kernels than patch dimensions");
    if (n_rows < num_kernels)
        throw std::invalid_argument("fit_saab: fewer patch rows than kernels");
    if (options.max_fit_rows == 0)
        throw std::invalid_argument("fit_saab: max_fit_rows must be positive");

    const double inv_sqrt_dim = 1.0 / std::sqrt(static_cast<double>(dim));

    // Rows used for moment estimation.
    std::vector<int64_t> fit_rows;
    if (static_cast<size_t>(n_rows) > options.max_fit_rows) {
        std::vector<int64_t> idx(n_rows);
        for (int64_t i = 0; i < n_rows; ++i) idx[i] = i;
        std::mt19937_64 rng(options.seed);
        for (size_t i = 0; i < options.max_fit_rows; ++i) {
            const size_t j = i + static_cast<size_t>(rng() % (n_rows - static_cast<int64_t>(i)));
            std::swap(idx[i], idx[j]);
        }
        fit_rows.assign(idx.begin(), idx.begin() + options.max_fit_rows);
        std::sort(fit_rows.begin(), fit_rows.end());
    } else {
        fit_rows.resize(n_rows);
        for (int64_t i = 0; i < n_rows; ++i) fit_rows[i] = i;
    }

    // First and second raw moments of the DC-removed residuals.
    std::vector<double> sum(dim, 0.0);
    std::vector<double> second(static_cast<size_t>(dim) * dim, 0.0);
    std::vector<double> residual(dim);
    for (int64_t r : fit_rows) {
        const float* row = patches.row(static_cast<int>(r));
        double dc_raw = 0.0;
        for (int j = 0; j < dim; ++j) dc_raw += row[j];
        dc_raw *= inv_sqrt_dim;
        for (int j = 0; j < dim; ++j) residual[j] = row[j] - dc_raw * inv_sqrt_dim;
        for (int j = 0; j < dim; ++j) {
            sum[j] += residual[j];
            const double rj = residual[j];
            double* dst = second.data() + static_cast<size_t>(j) * dim;
            for (int k = j; k < dim; ++k) dst[k] += rj * residual[k];
        }
    }
    const double inv_n = 1.0 / static_cast<double>(fit_rows.size());
    std::vector<double> mean(dim);
    for (int j = 0; j < dim; ++j) mean[j] = sum[j] * inv_n;
    std::vector<double> cov(static_cast<size_t>(dim) * dim);
    for (int j = 0; j < dim; ++j)
        for (int k = j; k < dim; ++k) {
            const double v = second[static_cast<size_t>(j) * dim + k] * inv_n - mean[j] * mean[k];
            cov[static_cast<size_t>(j) * dim + k] = v;
            cov[static_cast<size_t>(k) * dim + j] = v;
        }

    // Project the covariance onto the orthogonal complement of the DC anchor
    // via a Householder basis, then diagonalize the reduced matrix.
    // w = dc - e0; basis column a (a = 0..dim-2) is  e_{a+1} - 2 w w_{a+1} / |w|^2.
    std::vector<double> w(dim, inv_sqrt_dim);
    w[0] -= 1.0;
    double wn2 = 0.0;
    for (double x : w) wn2 += x * x;

    const int rdim = dim - 1;
    std::vector<double> cw(dim, 0.0);
    for (int i = 0; i < dim; ++i) {
        double s = 0.0;
        const double* crow = cov.data() + static_cast<size_t>(i) * dim;
        for (int j = 0; j < dim; ++j) s += crow[j] * w[j];
        cw[i] = s;
    }
    // T = Cov * B, dim x rdim.
    std::vector<double> t(static_cast<size_t>(dim) * rdim);
    for (int i = 0; i < dim; ++i)
        for (int b = 0; b < rdim; ++b)
            t[static_cast<size_t>(i) * rdim + b] =
                cov[static_cast<size_t>(i) * dim + (b + 1)] - (2.0 * w[b + 1] / wn2) * cw[i];
    // reduced = B^T * T, rdim x rdim.
    std::vector<double> wt(rdim, 0.0);
    for (int b = 0; b < rdim; ++b) {
        double s = 0.0;
        for (int i = 0; i < dim; ++i) s += w[i] * t[static_cast<size_t>(i) * rdim + b];
        wt[b] = s;
    }
    std::vector<double> reduced(static_cast<size_t>(rdim) * rdim);
    for (int a = 0; a < rdim; ++a)
        for (int b = 0; b < rdim; ++b)
            reduced[static_cast<size_t>(a) * rdim + b] =
                t[static_cast<size_t>(a + 1) * rdim + b] - (2.0 * w[a + 1] / wn2) * wt[b];

    SymmetricEigen eig = jacobi_eigen_symmetric(std::move(reduced), rdim);

    double max_ev = 0.0;
    for (double v : eig.values) max_ev = std::max(max_ev, v);
    for (double v : eig.values)
        if (v < -1e-8 * std::max(1.0, max_ev))
            throw NumericError("fit_saab: residual covariance is not positive semi-definite");

    const std::vector<int> order = descending_eigen_order(eig);

    SaabKernelBank bank;
    bank.input_dim = dim;
    bank.num_kernels = num_kernels;
    bank.dc_anchor.assign(dim, inv_sqrt_dim);
    bank.mean_vector = mean;
    bank.ac_anchors.resize(static_cast<size_t>(num_kernels - 1) * dim);

    std::vector<double> lifted(dim);
    for (int c = 0; c < num_kernels - 1; ++c) {
        const int col = order[c];
        // Lift the reduced eigenvector back to the full space: B * v.
        double dotw = 0.0;
        for (int a = 0; a < rdim; ++a) dotw += w[a + 1] * eig.vectors[static_cast<size_t>(a) * rdim + col];
        lifted[0] = -2.0 * w[0] * dotw / wn2;
        for (int i = 1; i < dim; ++i)
            lifted[i] = eig.vectors[static_cast<size_t>(i - 1) * rdim + col] - 2.0 * w[i] * dotw / wn2;

        int peak = 0;
        for (int i = 1; i < dim; ++i)
            if (std::abs(lifted[i]) > std::abs(lifted[peak])) peak = i;
        if (lifted[peak] < 0.0)
            for (double& x : lifted) x = -x;

        std::copy(lifted.begin(), lifted.end(),
                  bank.ac_anchors.begin() + static_cast<size_t>(c) * dim);
    }

    if (options.quantize_params) {
        for (double& x : bank.ac_anchors) x = detail::round_through_f32(x);
        for (double& x : bank.dc_anchor) x = detail::round_through_f32(x);
        for (double& x : bank.mean_vector) x = detail::round_through_f32(x);
    }

    // Bias pass over all rows, with the final (possibly quantized) anchors.
    bank.bias.assign(num_kernels, 0.0);
    std::vector<double> responses(num_kernels);
    double max_resp = 0.0;
    for (int64_t r = 0; r < n_rows; ++r) {
        detail::saab_raw_responses(bank, patches.row(static_cast<int>(r)), responses.data(),
                                   residual.data());
        for (int c = 0; c < num_kernels; ++c) max_resp = std::max(max_resp, std::abs(responses[c]));
    }
    double bias_value = max_resp;
    if (options.quantize_params) {
        float b = static_cast<float>(bias_value);
        while (static_cast<double>(b) < max_resp) b = std::nextafterf(b, std::numeric_limits<float>::infinity());
        bias_value = static_cast<double>(b);
    }
    bank.bias.assign(num_kernels, bias_value);
    bank.bias_scale = bias_value / std::sqrt(static_cast<double>(num_kernels));
    return bank;
}

/// Affine responses f_c = a_c . x + b_c, reshaped onto the patch source grid.
/// Channel 0 is the DC response; channels 1..F-1 are the AC responses after
/// the same DC and mean removal used in fitting.
inline FeatureMap apply_saab(const SaabKernelBank& bank, const PatchMatrix& patches) {
    if (patches.cols != bank.input_dim)
        throw std::invalid_argument("apply_saab: patch dimension does not match bank");
    if (patches.rows != patches.source_height * patches.source_width)
        throw std::invalid_argument("apply_saab: patch row count does not match source shape");

    FeatureMap out(patches.source_height, patches.source_width, bank.num_kernels);
    std::vector<double> responses(bank.num_kernels);
    std::vector<double> residual(bank.input_dim);
    float* dst = out.data.data();
    for (int r = 0; r < patches.rows; ++r, dst += bank.num_kernels) {
        detail::saab_raw_responses(bank, patches.row(r), responses.data(), residual.data());
        for (int c = 0; c < bank.num_kernels; ++c)
            dst[c] = static_cast<float>(responses[c] + bank.bias[c]);
    }
    return out;
}

/// Total learned parameters: per bank, F anchors of input_dim weights plus F biases.
inline long long count_params(const std::vector<SaabKernelBank>& banks) {
    long long total = 0;
    for (const SaabKernelBank& b : banks)
        total += static_cast<long long>(b.num_kernels) * b.input_dim + b.num_kernels;
    return total;
}

}  // namespace sslseg

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sslseg/errors.hpp"
#include "sslseg/feature_map.hpp"

namespace sslseg {

struct GbdtConfig {
    int num_rounds = 100;
    int max_depth = 6;
    double learning_rate = 0.3;
    double l2_reg = 1.0;           // lambda in leaf weights and gains
    double min_child_weight = 1.0; // minimum hessian mass per child
    int histogram_bins = 64;
    double row_subsample = 0.8;    // per-round Bernoulli row sampling
    uint64_t seed = 0;
    bool exhaustive_splits = false; // exact greedy over raw values; test mode
};

/// feature < 0 marks a leaf. Nodes are stored in pre-order with each left
/// child immediately after its parent, so serialization needs no child links.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;  // route left when value <= threshold
    int left = -1;
    int right = -1;
    double weight = 0.0;     // leaf value before learning-rate scaling
};

struct RegressionTree {
    std::vector<TreeNode> nodes;
};

struct TreeEnsemble {
    int num_classes = kNumClasses;
    int num_features = 0;
    double learning_rate = 0.3;
    std::vector<RegressionTree> trees;  // round-major: round r, class k at r*num_classes + k
    std::vector<double> train_loss;     // mean log-loss per round; entry 0 is the zero-margin loss

    int num_rounds() const {
        return trees.empty() ? 0 : static_cast<int>(trees.size()) / num_classes;
    }
    long long total_nodes() const {
        long long n = 0;
        for (const RegressionTree& t : trees) n += static_cast<long long>(t.nodes.size());
        return n;
    }
};

namespace detail {

inline double tree_predict(const RegressionTree& tree, const float* row) {
    int i = 0;
    while (tree.nodes[i].feature >= 0) {
        const TreeNode& n = tree.nodes[i];
        i = static_cast<double>(row[n.feature]) <= n.threshold ? n.left : n.right;
    }
    return tree.nodes[i].weight;
}

inline double gain_term(double g, double h, double lambda) {
    const double denom = h + lambda;
    return denom > 0.0 ? g * g / denom : 0.0;
}

/// Per-node histogram state: gradient, hessian, and row count per (feature, bin).
struct GradHist {
    std::vector<double> g;
    std::vector<double> h;
    std::vector<int64_t> cnt;

    void resize(size_t n) {
        g.assign(n, 0.0);
        h.assign(n, 0.0);
        cnt.assign(n, 0);
    }
    void subtract(const GradHist& rhs) {
        for (size_t i = 0; i < g.size(); ++i) {
            g[i] -= rhs.g[i];
            h[i] -= rhs.h[i];
            cnt[i] -= rhs.cnt[i];
        }
    }
};

class GbdtBuilder {
  public:
    GbdtBuilder(const FeatureMatrix& x, const std::vector<uint8_t>& y, const GbdtConfig& cfg)
        : x_(x), y_(y), cfg_(cfg), n_(x.rows), c_(x.cols) {}

    TreeEnsemble run() {
        validate();
        TreeEnsemble ensemble;
        ensemble.num_classes = kNumClasses;
        ensemble.num_features = c_;
        ensemble.learning_rate = cfg_.learning_rate;

        margins_.assign(static_cast<size_t>(n_) * kNumClasses, 0.0);
        probs_.resize(margins_.size());
        grad_.resize(n_);
        hess_.resize(n_);
        if (!cfg_.exhaustive_splits) build_bins();

        ensemble.train_loss.push_back(current_loss());
        std::mt19937_64 rng(cfg_.seed);
        for (int round = 0; round < cfg_.num_rounds; ++round) {
            compute_probs();
            std::vector<int> sample = draw_subsample(rng);
            for (int k = 0; k < kNumClasses; ++k) {
                class_ = k;
                for (int i : sample) {
                    const double p = probs_[static_cast<size_t>(i) * kNumClasses + k];
                    grad_[i] = p - (y_[i] == k ? 1.0 : 0.0);
                    hess_[i] = p * (1.0 - p);
                }
                ensemble.trees.push_back(grow_tree(sample));
            }
            const double loss = current_loss();
            if (cfg_.row_subsample == 1.0 &&
                loss > ensemble.train_loss.back() + 1e-9)
                throw NumericError("fit_gbdt: training loss increased on full-batch round");
            ensemble.train_loss.push_back(loss);
        }
        return ensemble;
    }

  private:
    void validate() const {
        if (n_ < 1 || c_ < 1) throw std::invalid_argument("fit_gbdt: empty training data");
        if (static_cast<int>(y_.size()) != n_)
            throw std::invalid_argument("fit_gbdt: label count does not match rows");
        for (uint8_t v : y_)
            if (v >= kNumClasses) throw std::invalid_argument("fit_gbdt: label out of range");
        if (cfg_.num_rounds < 0) throw std::invalid_argument("fit_gbdt: negative round count");
        if (cfg_.max_depth < 0) throw std::invalid_argument("fit_gbdt: negative depth");
        if (!(cfg_.learning_rate > 0.0))
            throw std::invalid_argument("fit_gbdt: learning rate must be positive");
        if (!(cfg_.row_subsample > 0.0) || cfg_.row_subsample > 1.0)
            throw std::invalid_argument("fit_gbdt: row_subsample must be in (0, 1]");
        if (cfg_.l2_reg < 0.0) throw std::invalid_argument("fit_gbdt: negative l2_reg");
        if (cfg_.min_child_weight < 0.0)
            throw std::invalid_argument("fit_gbdt: negative min_child_weight");
        if (!cfg_.exhaustive_splits && (cfg_.histogram_bins < 2 || cfg_.histogram_bins > 256))
            throw std::invalid_argument("fit_gbdt: histogram_bins must be in [2, 256]");
    }

    /// Global quantile cuts per feature, computed once from all rows. Bin(v)
    /// counts cuts strictly below v, so "bin <= b" and "v <= cuts[b]" agree;
    /// the stored split threshold is the midpoint between cuts[b] and the
    /// next distinct observed value, which routes every observed value the
    /// same way the bin test does.
    void build_bins() {
        const int bins = cfg_.histogram_bins;
        cuts_.resize(c_);
        bin_thresholds_.resize(c_);
        binned_.resize(static_cast<size_t>(n_) * c_);
        std::vector<float> sorted(n_);
        for (int f = 0; f < c_; ++f) {
            for (int i = 0; i < n_; ++i) sorted[i] = x_.values[static_cast<size_t>(i) * c_ + f];
            std::sort(sorted.begin(), sorted.end());
            std::vector<float> distinct(sorted);
            distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

            std::vector<float>& cuts = cuts_[f];
            cuts.clear();
            if (static_cast<int>(distinct.size()) <= bins) {
                cuts.assign(distinct.begin(), distinct.end() - 1);
            } else {
                for (int k = 1; k < bins; ++k) {
                    const float v = sorted[static_cast<size_t>(k) * n_ / bins];
                    if (v < distinct.back() && (cuts.empty() || v > cuts.back())) cuts.push_back(v);
                }
            }
            std::vector<double>& th = bin_thresholds_[f];
            th.resize(cuts.size());
            for (size_t b = 0; b < cuts.size(); ++b) {
                const float next = *std::upper_bound(distinct.begin(), distinct.end(), cuts[b]);
                th[b] = (static_cast<double>(cuts[b]) + static_cast<double>(next)) / 2.0;
            }
            for (int i = 0; i < n_; ++i) {
                const float v = x_.values[static_cast<size_t>(i) * c_ + f];
                const int b = static_cast<int>(std::lower_bound(cuts.begin(), cuts.end(), v) -
                                               cuts.begin());
                binned_[static_cast<size_t>(i) * c_ + f] = static_cast<uint8_t>(b);
            }
        }
    }

    void compute_probs() {
        for (int i = 0; i < n_; ++i) {
            const double* m = margins_.data() + static_cast<size_t>(i) * kNumClasses;
            double* p = probs_.data() + static_cast<size_t>(i) * kNumClasses;
            double mx = m[0];
            for (int k = 1; k < kNumClasses; ++k) mx = std::max(mx, m[k]);
            double denom = 0.0;
            for (int k = 0; k < kNumClasses; ++k) {
                p[k] = std::exp(m[k] - mx);
                denom += p[k];
            }
            for (int k = 0; k < kNumClasses; ++k) p[k] /= denom;
        }
    }

    double current_loss() const {
        double total = 0.0;
        for (int i = 0; i < n_; ++i) {
            const double* m = margins_.data() + static_cast<size_t>(i) * kNumClasses;
            double mx = m[0];
            for (int k = 1; k < kNumClasses; ++k) mx = std::max(mx, m[k]);
            double denom = 0.0;
            for (int k = 0; k < kNumClasses; ++k) denom += std::exp(m[k] - mx);
            const double py = std::exp(m[y_[i]] - mx) / denom;
            total -= std::log(std::max(py, 1e-300));
        }
        return total / n_;
    }

    /// Bernoulli row sampling with an explicit 53-bit uniform, so results do
    /// not depend on the standard library's distribution internals.
    std::vector<int> draw_subsample(std::mt19937_64& rng) {
        std::vector<int> rows;
        if (cfg_.row_subsample >= 1.0) {
            rows.resize(n_);
            std::iota(rows.begin(), rows.end(), 0);
            return rows;
        }
        rows.reserve(static_cast<size_t>(n_ * cfg_.row_subsample) + 16);
        for (int i = 0; i < n_; ++i) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
            if (u < cfg_.row_subsample) rows.push_back(i);
        }
        if (rows.empty()) {
            rows.resize(n_);
            std::iota(rows.begin(), rows.end(), 0);
        }
        return rows;
    }

    struct Split {
        bool valid = false;
        int feature = -1;
        double threshold = 0.0;
        int bin = -1;  // histogram mode only
        double gain = 0.0;
    };

    RegressionTree grow_tree(const std::vector<int>& rows) {
        RegressionTree tree;
        std::vector<int> node_rows(rows);
        if (cfg_.exhaustive_splits) {
            grow_exhaustive(tree, std::move(node_rows), 0);
        } else {
            GradHist hist;
            build_hist(node_rows, hist);
            grow_histogram(tree, std::move(node_rows), std::move(hist), 0);
        }
        return tree;
    }

    void build_hist(const std::vector<int>& rows, GradHist& hist) const {
        hist.resize(static_cast<size_t>(c_) * cfg_.histogram_bins);
        for (int i : rows) {
            const uint8_t* b = binned_.data() + static_cast<size_t>(i) * c_;
            const double g = grad_[i];
            const double h = hess_[i];
            for (int f = 0; f < c_; ++f) {
                const size_t idx = static_cast<size_t>(f) * cfg_.histogram_bins + b[f];
                hist.g[idx] += g;
                hist.h[idx] += h;
                ++hist.cnt[idx];
            }
        }
    }

    void emit_leaf(RegressionTree& tree, const std::vector<int>& rows, double g_sum, double h_sum) {
        TreeNode leaf;
        const double denom = h_sum + cfg_.l2_reg;
        leaf.weight = denom > 0.0 ? -g_sum / denom : 0.0;
        tree.nodes.push_back(leaf);
        const double delta = cfg_.learning_rate * leaf.weight;
        for (int i : rows) margins_[static_cast<size_t>(i) * kNumClasses + class_] += delta;
    }

    int grow_histogram(RegressionTree& tree, std::vector<int>&& rows, GradHist&& hist, int depth) {
        double g_sum = 0.0, h_sum = 0.0;
        int64_t count = 0;
        for (int b = 0; b < cfg_.histogram_bins; ++b) {
            g_sum += hist.g[b];
            h_sum += hist.h[b];
            count += hist.cnt[b];
        }

        Split best;
        if (depth < cfg_.max_depth && count >= 2) {
            const double parent_term = gain_term(g_sum, h_sum, cfg_.l2_reg);
            for (int f = 0; f < c_; ++f) {
                const int ncuts = static_cast<int>(cuts_[f].size());
                double gl = 0.0, hl = 0.0;
                int64_t cl = 0;
                const size_t base = static_cast<size_t>(f) * cfg_.histogram_bins;
                for (int b = 0; b < ncuts; ++b) {
                    gl += hist.g[base + b];
                    hl += hist.h[base + b];
                    cl += hist.cnt[base + b];
                    if (cl == 0) continue;
                    if (cl == count) break;
                    const double hr = h_sum - hl;
                    if (hl < cfg_.min_child_weight || hr < cfg_.min_child_weight) continue;
                    const double gain = 0.5 * (gain_term(gl, hl, cfg_.l2_reg) +
                                               gain_term(g_sum - gl, hr, cfg_.l2_reg) - parent_term);
                    if (gain > best.gain && gain > 1e-10) {
                        best.valid = true;
                        best.feature = f;
                        best.bin = b;
                        best.threshold = bin_thresholds_[f][b];
                        best.gain = gain;
                    }
                }
            }
        }

        const int index = static_cast<int>(tree.nodes.size());
        if (!best.valid) {
            emit_leaf(tree, rows, g_sum, h_sum);
            return index;
        }

        tree.nodes.push_back(TreeNode{best.feature, best.threshold, -1, -1, 0.0});
        std::vector<int> left_rows, right_rows;
        left_rows.reserve(rows.size());
        right_rows.reserve(rows.size());
        for (int i : rows)
            if (binned_[static_cast<size_t>(i) * c_ + best.feature] <= best.bin)
                left_rows.push_back(i);
            else
                right_rows.push_back(i);
        rows.clear();
        rows.shrink_to_fit();

        // Scan the smaller child; the sibling is the parent minus it.
        GradHist left_hist, right_hist;
        if (left_rows.size() <= right_rows.size()) {
            build_hist(left_rows, left_hist);
            right_hist = std::move(hist);
            right_hist.subtract(left_hist);
        } else {
            build_hist(right_rows, right_hist);
            left_hist = std::move(hist);
            left_hist.subtract(right_hist);
        }

        tree.nodes[index].left = static_cast<int>(tree.nodes.size());
        grow_histogram(tree, std::move(left_rows), std::move(left_hist), depth + 1);
        tree.nodes[index].right = static_cast<int>(tree.nodes.size());
        grow_histogram(tree, std::move(right_rows), std::move(right_hist), depth + 1);
        return index;
    }

    void grow_exhaustive(RegressionTree& tree, std::vector<int>&& rows, int depth) {
        double g_sum = 0.0, h_sum = 0.0;
        for (int i : rows) {
            g_sum += grad_[i];
            h_sum += hess_[i];
        }

        Split best;
        if (depth < cfg_.max_depth && rows.size() >= 2) {
            const double parent_term = gain_term(g_sum, h_sum, cfg_.l2_reg);
            std::vector<int> order(rows);
            for (int f = 0; f < c_; ++f) {
                std::sort(order.begin(), order.end(), [&](int a, int b) {
                    const float va = x_.values[static_cast<size_t>(a) * c_ + f];
                    const float vb = x_.values[static_cast<size_t>(b) * c_ + f];
                    return va < vb || (va == vb && a < b);
                });
                double gl = 0.0, hl = 0.0;
                for (size_t i = 0; i + 1 < order.size(); ++i) {
                    gl += grad_[order[i]];
                    hl += hess_[order[i]];
                    const float v = x_.values[static_cast<size_t>(order[i]) * c_ + f];
                    const float next = x_.values[static_cast<size_t>(order[i + 1]) * c_ + f];
                    if (v == next) continue;
                    const double hr = h_sum - hl;
                    if (hl < cfg_.min_child_weight || hr < cfg_.min_child_weight) continue;
                    const double gain = 0.5 * (gain_term(gl, hl, cfg_.l2_reg) +
                                               gain_term(g_sum - gl, hr, cfg_.l2_reg) - parent_term);
                    if (gain > best.gain && gain > 1e-10) {
                        best.valid = true;
                        best.feature = f;
                        best.threshold = (static_cast<double>(v) + static_cast<double>(next)) / 2.0;
                        best.gain = gain;
                    }
                }
            }
        }

        if (!best.valid) {
            emit_leaf(tree, rows, g_sum, h_sum);
            return;
        }

        const int index = static_cast<int>(tree.nodes.size());
        tree.nodes.push_back(TreeNode{best.feature, best.threshold, -1, -1, 0.0});
        std::vector<int> left_rows, right_rows;
        for (int i : rows)
            if (static_cast<double>(x_.values[static_cast<size_t>(i) * c_ + best.feature]) <=
                best.threshold)
                left_rows.push_back(i);
            else
                right_rows.push_back(i);
        rows.clear();
        rows.shrink_to_fit();

        tree.nodes[index].left = static_cast<int>(tree.nodes.size());
        grow_exhaustive(tree, std::move(left_rows), depth + 1);
        tree.nodes[index].right = static_cast<int>(tree.nodes.size());
        grow_exhaustive(tree, std::move(right_rows), depth + 1);
    }

    const FeatureMatrix& x_;
    const std::vector<uint8_t>& y_;
    GbdtConfig cfg_;
    int n_;
    int c_;
    int class_ = 0;

    std::vector<std::vector<float>> cuts_;            // per feature, ascending
    std::vector<std::vector<double>> bin_thresholds_; // raw-value threshold per cut
    std::vector<uint8_t> binned_;
    std::vector<double> margins_;
    std::vector<double> probs_;
    std::vector<double> grad_;
    std::vector<double> hess_;
};

}  // namespace detail

/// Multiclass gradient boosting with softmax cross-entropy: each round fits
/// one second-order regression tree per class on the shared row subsample,
/// then advances all margins by learning_rate times the leaf values.
inline TreeEnsemble fit_gbdt(const FeatureMatrix& features, const std::vector<uint8_t>& labels,
                             const GbdtConfig& config = {}) {
    detail::GbdtBuilder builder(features, labels, config);
    return builder.run();
}

/// Softmax class probabilities from summed, learning-rate-scaled tree outputs.
/// An ensemble with no trees yields uniform rows.
inline std::vector<double> predict_proba(const TreeEnsemble& ensemble, const FeatureMatrix& features) {
    if (ensemble.num_features > 0 && features.cols != ensemble.num_features)
        throw std::invalid_argument("predict_proba: feature width does not match ensemble");
    const int n = features.rows;
    const int k_total = ensemble.num_classes;
    std::vector<double> out(static_cast<size_t>(n) * k_total);
    std::vector<double> margin(k_total);
    for (int i = 0; i < n; ++i) {
        std::fill(margin.begin(), margin.end(), 0.0);
        const float* row = features.values.data() + static_cast<size_t>(i) * features.cols;
        for (size_t t = 0; t < ensemble.trees.size(); ++t)
            margin[t % k_total] += detail::tree_predict(ensemble.trees[t], row);
        double mx = -std::numeric_limits<double>::infinity();
        for (int k = 0; k < k_total; ++k) {
            margin[k] *= ensemble.learning_rate;
            mx = std::max(mx, margin[k]);
        }
        double denom = 0.0;
        double* p = out.data() + static_cast<size_t>(i) * k_total;
        for (int k = 0; k < k_total; ++k) {
            p[k] = std::exp(margin[k] - mx);
            denom += p[k];
        }
        for (int k = 0; k < k_total; ++k) p[k] /= denom;
    }
    return out;
}

}  // namespace sslseg

#include "sparsetx/forest.hpp"

#include <algorithm>
#include <numeric>
#include <optional>

#include "sparsetx/error.hpp"
#include "sparsetx/parallel.hpp"
#include "sparsetx/rng.hpp"

namespace sparsetx::impute {

namespace {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double gain = 0.0;
    std::size_t left_count = 0;
};

class TreeBuilder {
public:
    TreeBuilder(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestConfig& cfg, int mtry, Rng rng)
        : X_(X), y_(y), cfg_(cfg), mtry_(mtry), rng_(rng), features_(static_cast<std::size_t>(X.cols())) {
        std::iota(features_.begin(), features_.end(), 0);
    }

    RegressionTree build() {
        const auto n = static_cast<std::size_t>(X_.rows());
        std::vector<Eigen::Index> sample(n);
        for (auto& s : sample) s = static_cast<Eigen::Index>(rng_.index(n));
        grow(sample, 0);
        return RegressionTree(std::move(nodes_));
    }

private:
    int grow(std::vector<Eigen::Index>& idx, int depth) {
        const int id = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        double sum = 0.0;
        for (const auto i : idx) sum += y_(i);
        nodes_[static_cast<std::size_t>(id)].value = sum / static_cast<double>(idx.size());

        const auto min_leaf = static_cast<std::size_t>(cfg_.min_leaf);
        if ((cfg_.max_depth > 0 && depth >= cfg_.max_depth) || idx.size() < 2 * min_leaf) return id;

        const Split split = best_split(idx);
        if (split.feature < 0) return id;

        std::vector<Eigen::Index> left;
        std::vector<Eigen::Index> right;
        left.reserve(split.left_count);
        right.reserve(idx.size() - split.left_count);
        for (const auto i : idx) (X_(i, split.feature) <= split.threshold ? left : right).push_back(i);
        idx.clear();
        idx.shrink_to_fit();

        const int l = grow(left, depth + 1);
        const int r = grow(right, depth + 1);
        auto& node = nodes_[static_cast<std::size_t>(id)];
        node.feature = split.feature;
        node.threshold = split.threshold;
        node.left = l;
        node.right = r;
        return id;
    }

    Split best_split(const std::vector<Eigen::Index>& idx) {
        const auto n = idx.size();
        const auto min_leaf = static_cast<std::size_t>(cfg_.min_leaf);
        double total = 0.0;
        double total_sq = 0.0;
        for (const auto i : idx) {
            total += y_(i);
            total_sq += y_(i) * y_(i);
        }
        const double parent_sse = total_sq - total * total / static_cast<double>(n);
        Split best;
        if (parent_sse <= 1e-12 * std::max(1.0, total_sq)) return best;

        // Partial Fisher-Yates picks mtry distinct candidate features.
        const auto p = features_.size();
        for (std::size_t k = 0; k < static_cast<std::size_t>(mtry_); ++k) {
            std::swap(features_[k], features_[k + rng_.index(p - k)]);
        }

        std::vector<Eigen::Index> order(idx);
        for (std::size_t k = 0; k < static_cast<std::size_t>(mtry_); ++k) {
            const int f = features_[k];
            std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
                const double xa = X_(a, f);
                const double xb = X_(b, f);
                return xa < xb || (xa == xb && a < b);
            });
            double left_sum = 0.0;
            for (std::size_t pos = 0; pos + 1 < n; ++pos) {
                left_sum += y_(order[pos]);
                const std::size_t nl = pos + 1;
                const std::size_t nr = n - nl;
                const double xv = X_(order[pos], f);
                const double xn = X_(order[pos + 1], f);
                if (nl < min_leaf || nr < min_leaf || xv == xn) continue;
                const double right_sum = total - left_sum;
                // SSE reduction = sum_l^2/n_l + sum_r^2/n_r - total^2/n.
                const double gain = left_sum * left_sum / static_cast<double>(nl) +
                                    right_sum * right_sum / static_cast<double>(nr) -
                                    total * total / static_cast<double>(n);
                if (gain > best.gain) {
                    best.gain = gain;
                    best.feature = f;
                    best.threshold = 0.5 * (xv + xn);
                    if (best.threshold >= xn) best.threshold = xv;
                    best.left_count = nl;
                }
            }
        }
        if (best.gain <= 1e-12 * parent_sse) best.feature = -1;
        return best;
    }

    const Eigen::MatrixXd& X_;
    const Eigen::VectorXd& y_;
    const ForestConfig& cfg_;
    int mtry_;
    Rng rng_;
    std::vector<int> features_;
    std::vector<TreeNode> nodes_;
};

}  // namespace

double RegressionTree::predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
    std::size_t k = 0;
    while (nodes_[k].feature >= 0) {
        const auto& node = nodes_[k];
        k = static_cast<std::size_t>(row(node.feature) <= node.threshold ? node.left : node.right);
    }
    return nodes_[k].value;
}

ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestConfig& cfg) {
    if (X.rows() != y.size()) throw Error(ErrorKind::ShapeMismatch, "X rows and y length differ");
    if (cfg.n_trees < 1 || cfg.min_leaf < 1) throw Error(ErrorKind::InvalidConfig, "n_trees and min_leaf must be >= 1");
    if (X.cols() < 1) throw Error(ErrorKind::ShapeMismatch, "forest needs at least one feature");
    if (X.rows() < 2 * static_cast<Eigen::Index>(cfg.min_leaf)) {
        throw Error(ErrorKind::InsufficientData, "forest needs at least 2 * min_leaf rows");
    }
    if (!X.allFinite() || !y.allFinite()) throw Error(ErrorKind::InvalidConfig, "forest inputs must be finite");

    int mtry = cfg.mtry > 0 ? cfg.mtry : std::max<int>(1, static_cast<int>(X.cols()) / 3);
    mtry = std::min<int>(mtry, static_cast<int>(X.cols()));

    std::vector<std::optional<RegressionTree>> slots(static_cast<std::size_t>(cfg.n_trees));
    parallel_for(
        slots.size(),
        [&](std::size_t b) {
            TreeBuilder builder(X, y, cfg, mtry, Rng(cfg.seed, stream_id({tag_of("tree"), b})));
            slots[b].emplace(builder.build());
        },
        cfg.threads);

    std::vector<RegressionTree> trees;
    trees.reserve(slots.size());
    for (auto& s : slots) trees.push_back(std::move(*s));
    return ForestModel(std::move(trees), X.cols());
}

Eigen::VectorXd predict_forest(const ForestModel& model, const Eigen::MatrixXd& X) {
    if (X.cols() != model.n_features()) throw Error(ErrorKind::ShapeMismatch, "feature count differs from training");
    Eigen::VectorXd out = Eigen::VectorXd::Zero(X.rows());
    for (Eigen::Index i = 0; i < X.rows(); ++i) {
        double s = 0.0;
        for (const auto& tree : model.trees()) s += tree.predict(X.row(i));
        out(i) = s / static_cast<double>(model.trees().size());
    }
    return out;
}

}  // namespace sparsetx::impute

#pragma once

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace sparsetx::impute {

struct ForestConfig {
    int n_trees = 100;
    int max_depth = 16;
    int min_leaf = 1;
    int mtry = 0;  // 0 selects max(1, p / 3)
    std::uint64_t seed = 1;
    unsigned threads = 0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double value = 0.0;
};

class RegressionTree {
public:
    explicit RegressionTree(std::vector<TreeNode> nodes) : nodes_(std::move(nodes)) {}
    double predict(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
    std::size_t size() const noexcept { return nodes_.size(); }

private:
    std::vector<TreeNode> nodes_;
};

class ForestModel {
public:
    ForestModel(std::vector<RegressionTree> trees, Eigen::Index n_features)
        : trees_(std::move(trees)), n_features_(n_features) {}
    Eigen::Index n_features() const noexcept { return n_features_; }
    const std::vector<RegressionTree>& trees() const noexcept { return trees_; }

private:
    std::vector<RegressionTree> trees_;
    Eigen::Index n_features_;
};

/// Bagged CART regression trees with variance-reduction splits on `mtry`
/// randomly chosen features per node. Tree b draws from stream (seed, b), so
/// results do not depend on the number of worker threads.
ForestModel fit_forest(const Eigen::MatrixXd& X, const Eigen::VectorXd& y, const ForestConfig& cfg);

/// Mean of tree outputs per row.
Eigen::VectorXd predict_forest(const ForestModel& model, const Eigen::MatrixXd& X);

}  // namespace sparsetx::impute

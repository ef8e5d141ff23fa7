#pragma once

#include <vector>

#include <Eigen/Core>

namespace telem::pca {

struct PCAModel {
    Eigen::VectorXd mean;               // length d
    Eigen::MatrixXd loadings;           // d x k, orthonormal columns
    Eigen::VectorXd explained_variance; // length k, non-increasing
    bool degenerate = false;            // all inputs identical
};

/// Principal components of the rows of X (n x d): mean-centered, components
/// ordered by descending variance, each loading's largest-magnitude entry
/// made positive. Requires n >= 2. Keeps min(n, d) components.
PCAModel fit(const Eigen::MatrixXd& X);

/// Scores of x on the first k loadings: <x - mean, loading_j>.
Eigen::VectorXd project(const Eigen::VectorXd& x, const PCAModel& model, int k);

} // namespace telem::pca

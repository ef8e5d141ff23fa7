#include "telem/pca.hpp"

#include <Eigen/SVD>

#include "telem/errors.hpp"

namespace telem::pca {

PCAModel fit(const Eigen::MatrixXd& X) {
    const Eigen::Index n = X.rows();
    const Eigen::Index d = X.cols();
    if (n < 2) throw NumericError("pca: need at least 2 observations");

    PCAModel model;
    model.mean = X.colwise().mean();
    Eigen::MatrixXd centered = X.rowwise() - model.mean.transpose();

    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::Index k = std::min(n, d);
    model.loadings = svd.matrixV().leftCols(k);
    model.explained_variance =
        svd.singularValues().head(k).array().square() / static_cast<double>(n - 1);
    model.degenerate = model.explained_variance.maxCoeff() <= 0.0;

    // Sign convention: largest-magnitude entry of each loading is positive.
    for (Eigen::Index j = 0; j < model.loadings.cols(); ++j) {
        Eigen::Index imax;
        model.loadings.col(j).cwiseAbs().maxCoeff(&imax);
        if (model.loadings(imax, j) < 0.0) model.loadings.col(j) = -model.loadings.col(j);
    }
    return model;
}

Eigen::VectorXd project(const Eigen::VectorXd& x, const PCAModel& model, int k) {
    if (k < 0 || k > model.loadings.cols())
        throw ConfigError("pca: requested " + std::to_string(k) + " components, model has " +
                          std::to_string(model.loadings.cols()));
    return model.loadings.leftCols(k).transpose() * (x - model.mean);
}

} // namespace telem::pca

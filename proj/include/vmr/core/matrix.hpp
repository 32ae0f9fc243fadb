#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "vmr/core/rng.hpp"

namespace vmr {

// Everything numeric runs in double; gradient checks against central
// finite differences need the headroom and desk-scale compute allows it.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1>;

using BoolVec = std::vector<uint8_t>;  // attention masks, true = position is real

inline bool all_finite(const Mat& m) { return m.allFinite(); }

inline Mat gaussian_mat(Eigen::Index rows, Eigen::Index cols, Rng& rng, double std = 1.0) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.gaussian(0.0, std);
    return m;
}

inline Mat softmax_rows(const Mat& z) {
    Mat p(z.rows(), z.cols());
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
        double mx = z.row(i).maxCoeff();
        Eigen::RowVectorXd e = (z.row(i).array() - mx).exp();
        p.row(i) = e / e.sum();
    }
    return p;
}

}  // namespace vmr

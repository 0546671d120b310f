#pragma once

// Reference computations written independently of the library code, used to
// pin library results in tests. They favour directness over speed.

#include <cstdint>
#include <vector>

#include <Eigen/Dense>

namespace deffiller::oracle {

// Saliency metrics on a dense H x W grid. gt holds 0/1.
double mae(const Eigen::MatrixXd& pred, const Eigen::MatrixXi& gt);
double f_measure_max(const Eigen::MatrixXd& pred, const Eigen::MatrixXi& gt, double beta_squared = 0.3);
double s_measure(const Eigen::MatrixXd& pred, const Eigen::MatrixXi& gt, double alpha = 0.5);
double e_measure_max(const Eigen::MatrixXd& pred, const Eigen::MatrixXi& gt);

// Frechet distance for diagonal covariances, term by term.
double fid_diagonal(const Eigen::VectorXd& mean_a, const Eigen::VectorXd& var_a, const Eigen::VectorXd& mean_b,
                    const Eigen::VectorXd& var_b);

// prod_{t=1..T} (1 - beta_t) with beta_t interpolated linearly between the
// end points (scaled by 1000/T when `scaled`), accumulated in long double.
long double alpha_bar_product(int steps, int t, double beta_start, double beta_end, bool scaled);

// Single-head softmax attention, rows are tokens: softmax(Q K^T / sqrt(d)) V
// with Q = x Wq^T, K = c Wk^T, V = c Wv^T, then Wo^T + bo.
Eigen::MatrixXd dense_attention(const Eigen::MatrixXd& x, const Eigen::MatrixXd& context, const Eigen::MatrixXd& wq,
                                const Eigen::MatrixXd& wk, const Eigen::MatrixXd& wv, const Eigen::MatrixXd& wo,
                                const Eigen::VectorXd& bo);

// Row-wise layer norm without affine terms.
Eigen::MatrixXd layer_norm_rows(const Eigen::MatrixXd& x, double eps = 1e-5);

}  // namespace deffiller::oracle

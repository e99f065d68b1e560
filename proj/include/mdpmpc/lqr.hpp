#pragma once

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace mdpmpc {

/// Discounted linear-Gaussian regulator: dynamics s+ = A s + B a + e,
/// e ~ N(0, sigma), quadratic stage cost [s;a]' [T N; N' R] [s;a].
struct LqrProblem {
    Eigen::MatrixXd a_mat;      // n x n
    Eigen::MatrixXd b_mat;      // n x m
    Eigen::MatrixXd cost_block; // (n+m) x (n+m), symmetric, [T N; N' R]
    Eigen::MatrixXd sigma;      // n x n, PSD
    double gamma = 0.9;

    int state_dim() const { return static_cast<int>(a_mat.rows()); }
    int input_dim() const { return static_cast<int>(b_mat.cols()); }
    Eigen::MatrixXd t_block() const { return cost_block.topLeftCorner(state_dim(), state_dim()); }
    Eigen::MatrixXd n_block() const {
        return cost_block.topRightCorner(state_dim(), input_dim());
    }
    Eigen::MatrixXd r_block() const {
        return cost_block.bottomRightCorner(input_dim(), input_dim());
    }
    void validate() const;
};

struct RiccatiSolution {
    Eigen::MatrixXd s_mat; // n x n symmetric
    Eigen::MatrixXd k_gain; // m x n, policy a = -K s
    double v_infinity = 0.0;
    long iterations = 0;
    double residual = 0.0;
};

/// Quadratic stage-cost blocks of the undiscounted problem on the model
/// (model_a, model_b) that reproduce the discounted optimum.
struct ModifiedQuadraticCost {
    Eigen::MatrixXd t_hat;
    Eigen::MatrixXd n_hat;
    Eigen::MatrixXd r_hat;
    Eigen::MatrixXd model_a;
    Eigen::MatrixXd model_b;
};

struct LqrEquivalenceReport {
    double gap_s = 0.0;
    double gap_k = 0.0;
    double v_infinity = 0.0;
    double max_offset_error = 0.0; // |v*(s) - v_inf(s) - v_infinity| over sampled states
};

/// Fixed-point iteration of the discounted Riccati map, symmetrized each
/// sweep, started from the state cost block.
RiccatiSolution solve_discounted_riccati(const LqrProblem& p, double tol = 1e-13,
                                         long max_iter = 100000);

ModifiedQuadraticCost build_modified_quadratic_cost(const RiccatiSolution& sol,
                                                    const LqrProblem& p,
                                                    const Eigen::MatrixXd& model_a,
                                                    const Eigen::MatrixXd& model_b);

/// Undiscounted Riccati pair on the model with the modified cost blocks.
/// Returns (s_hat, k_hat).
std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
solve_undiscounted_model_riccati(const ModifiedQuadraticCost& mqc, double tol = 1e-13,
                                 long max_iter = 100000);

/// End-to-end check that the undiscounted model problem reproduces the
/// discounted matrix and gain, plus the constant value offset.
LqrEquivalenceReport verify_lqr_equivalence(const LqrProblem& p, const Eigen::MatrixXd& model_a,
                                            const Eigen::MatrixXd& model_b, double tol = 1e-8);

nlohmann::json lqr_problem_to_json(const LqrProblem& p);
LqrProblem lqr_problem_from_json(const nlohmann::json& j);
nlohmann::json lqr_report_to_json(const LqrEquivalenceReport& r);

} // namespace mdpmpc

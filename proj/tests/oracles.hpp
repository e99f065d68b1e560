#pragma once

// Independent reference computations for the test suites. Everything here is
// deliberately written along a different algorithmic route than the library
// (exhaustive enumeration, direct linear solves, explicit recursions) so the
// two sides cross-check each other.

#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "mdpmpc/mdp.hpp"

namespace oracles {

// Value of a fixed deterministic policy by a dense linear solve (gamma < 1).
inline std::vector<double> evaluate_policy_exact(const mdpmpc::TabularMdp& mdp,
                                                 const std::vector<int>& policy) {
    const int n = mdp.n_states;
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs(n);
    for (int s = 0; s < n; ++s) {
        rhs(s) = mdp.cost(s, policy[s]);
        for (int s2 = 0; s2 < n; ++s2) m(s, s2) -= mdp.gamma * mdp.p(s, policy[s], s2);
    }
    Eigen::VectorXd v = m.partialPivLu().solve(rhs);
    return std::vector<double>(v.data(), v.data() + n);
}

// Optimal values by exhaustive enumeration of all deterministic policies,
// each evaluated exactly; the componentwise minimum over policies is v*
// because one policy attains the minimum in every component at once. Only
// sensible for tiny instances.
inline std::vector<double> brute_force_values(const mdpmpc::TabularMdp& mdp) {
    const int n = mdp.n_states;
    const int m = mdp.n_actions;
    long total = 1;
    for (int s = 0; s < n; ++s) total *= m;

    std::vector<double> best(n, std::numeric_limits<double>::infinity());
    std::vector<int> policy(n, 0);
    for (long code = 0; code < total; ++code) {
        long c = code;
        bool feasible = true;
        for (int s = 0; s < n; ++s) {
            policy[s] = static_cast<int>(c % m);
            c /= m;
            if (std::isinf(mdp.cost(s, policy[s]))) feasible = false;
        }
        if (!feasible) continue;
        std::vector<double> v = evaluate_policy_exact(mdp, policy);
        for (int s = 0; s < n; ++s) best[s] = std::min(best[s], v[s]);
    }
    return best;
}

// Finite-horizon linear-quadratic recursion: terminal weight p_f, stage
// [s;a]' [t n; n' r] [s;a], dynamics s+ = a_mat s + b_mat a. Returns the
// stage-0 value weight and gain (input = -k0 * s).
struct LqFiniteHorizon {
    Eigen::MatrixXd p0;
    Eigen::MatrixXd k0;
};

inline LqFiniteHorizon lq_finite_horizon(const Eigen::MatrixXd& a_mat,
                                         const Eigen::MatrixXd& b_mat,
                                         const Eigen::MatrixXd& stage_block,
                                         const Eigen::MatrixXd& p_f, int horizon) {
    const int n = static_cast<int>(a_mat.rows());
    const int m = static_cast<int>(b_mat.cols());
    Eigen::MatrixXd t = stage_block.topLeftCorner(n, n);
    Eigen::MatrixXd nn = stage_block.topRightCorner(n, m);
    Eigen::MatrixXd r = stage_block.bottomRightCorner(m, m);
    Eigen::MatrixXd p = p_f;
    Eigen::MatrixXd k;
    for (int stage = 0; stage < horizon; ++stage) {
        Eigen::MatrixXd inner = r + b_mat.transpose() * p * b_mat;
        k = inner.ldlt().solve(nn.transpose() + b_mat.transpose() * p * a_mat);
        p = t + a_mat.transpose() * p * a_mat -
            (nn + a_mat.transpose() * p * b_mat) * k;
        p = 0.5 * (p + p.transpose());
    }
    return {p, k};
}

} // namespace oracles

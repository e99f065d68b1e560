#include "mdpmpc/lqr.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mdpmpc/errors.hpp"
#include "mdpmpc/json_util.hpp"
#include "mdpmpc/rng.hpp"

namespace mdpmpc {

namespace {

double inf_norm(const Eigen::MatrixXd& m) {
    return m.size() == 0 ? 0.0 : m.cwiseAbs().maxCoeff();
}

Eigen::MatrixXd symmetrize(const Eigen::MatrixXd& m) { return 0.5 * (m + m.transpose()); }

// One sweep of the Riccati map for dynamics (a, b), cost blocks (t, n, r)
// and discount applied to the continuation term.
Eigen::MatrixXd riccati_map(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            const Eigen::MatrixXd& t, const Eigen::MatrixXd& n,
                            const Eigen::MatrixXd& r, double gamma, const Eigen::MatrixXd& s,
                            Eigen::MatrixXd* k_out) {
    Eigen::MatrixXd inner = r + gamma * b.transpose() * s * b;
    Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(inner));
    if (llt.info() != Eigen::Success)
        throw IndefiniteInnerBlock("input-cost block is not positive definite along the sweep");
    Eigen::MatrixXd rhs = n.transpose() + gamma * b.transpose() * s * a;
    Eigen::MatrixXd k = llt.solve(rhs); // m x n
    if (k_out) *k_out = k;
    Eigen::MatrixXd next =
        t + gamma * a.transpose() * s * a - (n + gamma * a.transpose() * s * b) * k;
    return symmetrize(next);
}

Eigen::MatrixXd solve_riccati_fixed_point(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                          const Eigen::MatrixXd& t, const Eigen::MatrixXd& n,
                                          const Eigen::MatrixXd& r, double gamma, double tol,
                                          long max_iter, Eigen::MatrixXd* k_out,
                                          long* iters_out) {
    Eigen::MatrixXd s = symmetrize(t);
    double delta = std::numeric_limits<double>::infinity();
    for (long it = 0; it < max_iter; ++it) {
        Eigen::MatrixXd next = riccati_map(a, b, t, n, r, gamma, s, nullptr);
        delta = inf_norm(next - s);
        s = next;
        if (delta <= tol) {
            if (iters_out) *iters_out = it + 1;
            riccati_map(a, b, t, n, r, gamma, s, k_out); // gain from the converged matrix
            return s;
        }
        if (!s.allFinite())
            throw NonConvergence("Riccati iteration diverged to non-finite values");
    }
    throw NonConvergence("Riccati iteration step size " + std::to_string(delta) +
                         " above tolerance after max_iter sweeps");
}

} // namespace

void LqrProblem::validate() const {
    const int n = state_dim();
    const int m = input_dim();
    if (a_mat.rows() != n || a_mat.cols() != n || b_mat.rows() != n)
        throw ShapeMismatch("dynamics matrices have inconsistent shapes");
    if (cost_block.rows() != n + m || cost_block.cols() != n + m)
        throw ShapeMismatch("cost block must be (n+m) x (n+m)");
    if (inf_norm(cost_block - cost_block.transpose()) > 1e-12)
        throw std::invalid_argument("cost block is not symmetric");
    if (sigma.rows() != n || sigma.cols() != n)
        throw ShapeMismatch("noise covariance must be n x n");
    Eigen::LLT<Eigen::MatrixXd> llt(r_block());
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("input cost block must be positive definite");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(sigma));
    if (es.eigenvalues().minCoeff() < -1e-10)
        throw std::invalid_argument("noise covariance must be positive semidefinite");
    if (!(gamma > 0.0) || gamma >= 1.0)
        throw InvalidDiscount("discount factor must lie in (0, 1)");
}

RiccatiSolution solve_discounted_riccati(const LqrProblem& p, double tol, long max_iter) {
    p.validate();
    RiccatiSolution sol;
    Eigen::MatrixXd t = p.t_block(), n = p.n_block(), r = p.r_block();
    sol.s_mat = solve_riccati_fixed_point(p.a_mat, p.b_mat, t, n, r, p.gamma, tol, max_iter,
                                          &sol.k_gain, &sol.iterations);
    sol.v_infinity = p.gamma / (1.0 - p.gamma) * (sol.s_mat * p.sigma).trace();
    Eigen::MatrixXd lhs1 = t + p.gamma * p.a_mat.transpose() * sol.s_mat * p.a_mat - sol.s_mat -
                           (n + p.gamma * p.a_mat.transpose() * sol.s_mat * p.b_mat) * sol.k_gain;
    Eigen::MatrixXd lhs2 =
        (r + p.gamma * p.b_mat.transpose() * sol.s_mat * p.b_mat) * sol.k_gain - n.transpose() -
        p.gamma * p.b_mat.transpose() * sol.s_mat * p.a_mat;
    sol.residual = std::max(inf_norm(lhs1), inf_norm(lhs2));
    return sol;
}

ModifiedQuadraticCost build_modified_quadratic_cost(const RiccatiSolution& sol,
                                                    const LqrProblem& p,
                                                    const Eigen::MatrixXd& model_a,
                                                    const Eigen::MatrixXd& model_b) {
    const int n = p.state_dim();
    const int m = p.input_dim();
    if (model_a.rows() != n || model_a.cols() != n || model_b.rows() != n || model_b.cols() != m)
        throw ShapeMismatch("model matrices do not match the problem dimensions");
    const Eigen::MatrixXd& s = sol.s_mat;
    ModifiedQuadraticCost mqc;
    mqc.model_a = model_a;
    mqc.model_b = model_b;
    mqc.t_hat = p.t_block() + p.gamma * p.a_mat.transpose() * s * p.a_mat -
                model_a.transpose() * s * model_a;
    mqc.n_hat = p.n_block() + p.gamma * p.a_mat.transpose() * s * p.b_mat -
                model_a.transpose() * s * model_b;
    mqc.r_hat = p.r_block() + p.gamma * p.b_mat.transpose() * s * p.b_mat -
                model_b.transpose() * s * model_b;
    mqc.t_hat = symmetrize(mqc.t_hat);
    mqc.r_hat = symmetrize(mqc.r_hat);
    return mqc;
}

std::pair<Eigen::MatrixXd, Eigen::MatrixXd>
solve_undiscounted_model_riccati(const ModifiedQuadraticCost& mqc, double tol, long max_iter) {
    Eigen::MatrixXd k;
    long iters = 0;
    Eigen::MatrixXd s = solve_riccati_fixed_point(mqc.model_a, mqc.model_b, mqc.t_hat, mqc.n_hat,
                                                  mqc.r_hat, 1.0, tol, max_iter, &k, &iters);
    return {s, k};
}

LqrEquivalenceReport verify_lqr_equivalence(const LqrProblem& p, const Eigen::MatrixXd& model_a,
                                            const Eigen::MatrixXd& model_b, double tol) {
    const double solver_tol = std::min(1e-13, tol * 1e-5);
    RiccatiSolution sol = solve_discounted_riccati(p, solver_tol);
    ModifiedQuadraticCost mqc = build_modified_quadratic_cost(sol, p, model_a, model_b);
    auto [s_hat, k_hat] = solve_undiscounted_model_riccati(mqc, solver_tol);

    LqrEquivalenceReport report;
    report.gap_s = inf_norm(s_hat - sol.s_mat);
    report.gap_k = inf_norm(k_hat - sol.k_gain);
    report.v_infinity = sol.v_infinity;

    // v*(s) = s'Ss + v_inf while the model problem value is s'S_hat s; their
    // difference must equal the constant offset on any sampled state.
    Rng rng(20240);
    const int n = p.state_dim();
    for (int i = 0; i < 16; ++i) {
        Eigen::VectorXd s(n);
        for (int j = 0; j < n; ++j) s(j) = rng.uniform(-2.0, 2.0);
        double v_real = s.dot(sol.s_mat * s) + sol.v_infinity;
        double v_model = s.dot(s_hat * s);
        report.max_offset_error =
            std::max(report.max_offset_error, std::abs(v_real - v_model - sol.v_infinity));
    }
    return report;
}

nlohmann::json lqr_problem_to_json(const LqrProblem& p) {
    nlohmann::json j;
    j["a"] = matrix_to_json(p.a_mat);
    j["b"] = matrix_to_json(p.b_mat);
    j["cost_block"] = matrix_to_json(p.cost_block);
    j["sigma"] = matrix_to_json(p.sigma);
    j["gamma"] = p.gamma;
    return j;
}

LqrProblem lqr_problem_from_json(const nlohmann::json& j) {
    LqrProblem p;
    p.a_mat = matrix_from_json(j.at("a"));
    p.b_mat = matrix_from_json(j.at("b"));
    p.cost_block = matrix_from_json(j.at("cost_block"));
    p.sigma = matrix_from_json(j.at("sigma"));
    p.gamma = j.at("gamma").get<double>();
    p.validate();
    return p;
}

nlohmann::json lqr_report_to_json(const LqrEquivalenceReport& r) {
    nlohmann::json j;
    j["gap_s"] = r.gap_s;
    j["gap_k"] = r.gap_k;
    j["v_infinity"] = r.v_infinity;
    j["max_offset_error"] = r.max_offset_error;
    return j;
}

} // namespace mdpmpc

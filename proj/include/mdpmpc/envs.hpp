#pragma once

#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mdpmpc/mpc.hpp"
#include "mdpmpc/rng.hpp"

namespace mdpmpc {

/// Optimal-investment benchmark: real dynamics s+ = a with stage cost
/// -ln(A s^alpha - a) and discount gamma; the (wrong) deterministic model is
/// s+ = mu * a. The discounted optimum is known in closed form.
struct InvestmentProblem {
    double a_const = 5.0;
    double alpha = 0.34;
    double gamma = 0.9;
    double model_mu = 0.8;

    void validate() const;
};

/// v*(s) = B + C ln s and pi*(s) = gamma * alpha * A * s^alpha.
std::pair<double, double> investment_closed_form(const InvestmentProblem& p, double s);

struct InvestmentMpcResult {
    double v_hat = 0.0;
    double pi_hat = 0.0;
};

/// Value and first input of the N-stage undiscounted problem on the wrong
/// model with the rebuilt costs (terminal = v*, stage = q* - v* at the model
/// successor). Inputs are kept inside 0 < a < A s^alpha by a sigmoid
/// reparameterization and the sequence is optimized by the shooting solver.
InvestmentMpcResult investment_mpc_value(const InvestmentProblem& p, int horizon, double s,
                                         double tol = 1e-9);

/// The underlying shooting program of investment_mpc_value; the decision
/// variable is the logit of the invested fraction.
MpcScheme make_investment_scheme(const InvestmentProblem& p, int horizon);

/// Stochastic inverted pendulum with uniformly distributed support
/// excitation; explicit Euler discretization.
struct PendulumEnv {
    double gravity = 9.81;
    double length = 0.3;
    double mass = 0.5;
    double dt = 0.1;
    double xi_lo = -0.5, xi_hi = 0.5;
    double state_box = 1.0;  // |s_i| <= 1
    double input_box = 0.8;  // |a| <= 0.8
    double gamma = 0.95;

    mutable long clip_count = 0; // inputs clipped into the box so far
};

/// One transition: returns (s_next, stage cost s's + a^2). Out-of-box inputs
/// are clipped (counted on the env).
std::pair<Eigen::Vector2d, double> pendulum_step(const PendulumEnv& env, const Eigen::Vector2d& s,
                                                 double a, Rng& rng);

struct GridSpec {
    int n1 = 41;             // nodes per state dimension
    int n2 = 41;
    int n_actions = 17;
    int quadrature_order = 5;
    double boundary_penalty = 100.0; // quadratic weight on out-of-box successors
};

/// Interpolated value iteration baseline on the state box.
struct GridDpBaseline {
    std::vector<double> grid1, grid2, actions;
    std::vector<double> v_grid;      // [i1 * n2 + i2]
    std::vector<double> q_grid;      // [(i1 * n2 + i2) * n_actions + ai]
    std::vector<int> policy_grid;    // action indices
    double residual = 0.0;
    GridSpec spec;
    PendulumEnv env;

    double value_at(const Eigen::Vector2d& s) const; // bilinear, clamped to the box
    double policy_value(int i1, int i2) const { return actions[policy_grid[i1 * spec.n2 + i2]]; }
    int node_index(int i1, int i2) const { return i1 * spec.n2 + i2; }
};

/// Value iteration with Gauss-Legendre quadrature over the disturbance.
/// Successors leaving the box are clamped and charged a quadratic penalty.
GridDpBaseline pendulum_dp(const PendulumEnv& env, const GridSpec& spec, double tol = 1e-6,
                           long max_iter = 5000);

/// MPC scheme for the pendulum around a deterministic linearized model with
/// an adjustable length parameter and quadratic stage/terminal costs; the
/// state box enters as soft path and terminal constraints.
MpcScheme make_pendulum_mpc_scheme(const PendulumEnv& env, int horizon = 10,
                                   double slack_weight = 1e3);

/// theta = {model_l = 0.25, terminal factor = chol(I2), stage factor = chol(I3)}
ThetaVector initial_pendulum_theta();

struct RolloutResult {
    double discounted_cost = 0.0;
    Eigen::MatrixXd trajectory; // state_dim x (steps+1)
    std::vector<double> costs;
};

using EnvStepFn = std::function<std::pair<Eigen::VectorXd, double>(const Eigen::VectorXd&,
                                                                   const Eigen::VectorXd&, Rng&)>;
using PolicyFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

/// Seeded closed-loop rollout accumulating sum gamma^k cost_k.
RolloutResult rollout(const EnvStepFn& step_fn, const PolicyFn& policy_fn,
                      const Eigen::VectorXd& s0, int steps, double gamma, Rng& rng);

/// Gauss-Legendre nodes and weights on [-1, 1].
std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order);

} // namespace mdpmpc

#include "mdpmpc/envs.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mdpmpc/errors.hpp"
#include "mdpmpc/json_util.hpp"

namespace mdpmpc {

void InvestmentProblem::validate() const {
    if (a_const <= 0.0) throw std::invalid_argument("A must be positive");
    if (alpha <= 0.0 || alpha >= 1.0) throw std::invalid_argument("alpha must lie in (0, 1)");
    if (gamma <= 0.0 || gamma >= 1.0) throw std::invalid_argument("gamma must lie in (0, 1)");
    if (model_mu <= 0.0) throw std::invalid_argument("mu must be positive");
    if (alpha * gamma >= 1.0)
        throw std::invalid_argument("alpha * gamma must be below 1 for a finite optimum");
}

std::pair<double, double> investment_closed_form(const InvestmentProblem& p, double s) {
    p.validate();
    if (s <= 0.0) throw DomainError("state must be positive");
    const double ag = p.alpha * p.gamma;
    const double c = p.alpha / (ag - 1.0);
    const double b =
        (std::log((1.0 - ag) * p.a_const) + ag / (1.0 - ag) * std::log(ag * p.a_const)) /
        (p.gamma - 1.0);
    double v = b + c * std::log(s);
    double pi = ag * p.a_const * std::pow(s, p.alpha);
    return {v, pi};
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

MpcScheme make_investment_scheme(const InvestmentProblem& p, int horizon) {
    const double a_const = p.a_const;
    const double alpha = p.alpha;
    const double gamma = p.gamma;
    const double mu = p.model_mu;
    const double ag = alpha * gamma;
    const double c = alpha / (ag - 1.0);
    const double b =
        (std::log((1.0 - ag) * a_const) + ag / (1.0 - ag) * std::log(ag * a_const)) /
        (gamma - 1.0);
    auto v_star = [b, c](double s) { return b + c * std::log(s); };
    auto invest = [a_const, alpha](double s, double u) {
        return sigmoid(u) * a_const * std::pow(s, alpha);
    };

    MpcScheme scheme;
    scheme.horizon = horizon;
    scheme.state_dim = 1;
    scheme.input_dim = 1;
    scheme.model = [invest, mu](const ThetaVector&, const Eigen::VectorXd& s,
                                const Eigen::VectorXd& u) -> Eigen::VectorXd {
        Eigen::VectorXd out(1);
        out(0) = mu * invest(s(0), u(0));
        return out;
    };
    scheme.stage_cost = [invest, v_star, a_const, alpha, gamma, mu](
                            const ThetaVector&, const Eigen::VectorXd& s,
                            const Eigen::VectorXd& u) {
        double a = invest(s(0), u(0));
        double consumption = a_const * std::pow(s(0), alpha) - a;
        double real_cost = -std::log(consumption);
        // stage = real cost + gamma v*(real successor) - v*(model successor)
        return real_cost + gamma * v_star(a) - v_star(mu * a);
    };
    scheme.terminal_cost = [v_star](const ThetaVector&, const Eigen::VectorXd& s) {
        return v_star(s(0));
    };
    scheme.input_lower = Eigen::VectorXd::Constant(1, -12.0);
    scheme.input_upper = Eigen::VectorXd::Constant(1, 12.0);
    scheme.kind = "investment";
    nlohmann::json params;
    params["a_const"] = a_const;
    params["alpha"] = alpha;
    params["gamma"] = gamma;
    params["model_mu"] = mu;
    params["horizon"] = horizon;
    scheme.params_json = params.dump();
    return scheme;
}

InvestmentMpcResult investment_mpc_value(const InvestmentProblem& p, int horizon, double s,
                                         double tol) {
    p.validate();
    if (s <= 0.0) throw InfeasibleDomain("state must be positive");
    if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");

    MpcScheme scheme = make_investment_scheme(p, horizon);
    ThetaVector theta; // the scheme has no tunable parameters
    MpcSolveOptions options;
    options.tol = std::min(tol, 1e-9);
    options.max_iter = 600;
    Eigen::VectorXd s0(1);
    s0 << s;
    MpcSolution sol = solve_value(scheme, theta, s0, options);
    if (sol.solver_status == SolverStatus::infeasible_box)
        throw InfeasibleDomain("input reparameterization box is empty");
    if (sol.solver_status != SolverStatus::converged)
        throw NonConvergence("investment program did not reach stationarity, residual " +
                             std::to_string(sol.stationarity_residual));
    InvestmentMpcResult out;
    out.v_hat = sol.objective;
    out.pi_hat = sigmoid(sol.first_input(0)) * p.a_const * std::pow(s, p.alpha);
    return out;
}

std::pair<Eigen::Vector2d, double> pendulum_step(const PendulumEnv& env, const Eigen::Vector2d& s,
                                                 double a, Rng& rng) {
    double a_clipped = std::clamp(a, -env.input_box, env.input_box);
    if (a_clipped != a) {
        if (env.clip_count == 0)
            std::cerr << "pendulum_step: input " << a << " clipped to the box\n";
        ++env.clip_count;
    }
    double xi = rng.uniform(env.xi_lo, env.xi_hi);
    Eigen::Vector2d next;
    next(0) = s(0) + s(1) * env.dt;
    next(1) = s(1) + (env.gravity / env.length + xi) * std::sin(s(0)) * env.dt +
              env.dt / (env.mass * env.length * env.length) * a_clipped;
    double cost = s.squaredNorm() + a_clipped * a_clipped;
    return {next, cost};
}

std::pair<std::vector<double>, std::vector<double>> gauss_legendre(int order) {
    if (order < 1) throw std::invalid_argument("quadrature order must be positive");
    std::vector<double> nodes(order), weights(order);
    for (int i = 0; i < order; ++i) {
        // Newton iteration from the Chebyshev-based initial guess
        double x = std::cos(M_PI * (i + 0.75) / (order + 0.5));
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0, p1 = 0.0;
            for (int j = 0; j < order; ++j) {
                double p2 = p1;
                p1 = p0;
                p0 = ((2.0 * j + 1.0) * x * p1 - j * p2) / (j + 1.0);
            }
            pp = order * (x * p0 - p1) / (x * x - 1.0);
            double dx = p0 / pp;
            x -= dx;
            if (std::abs(dx) < 1e-15) break;
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * pp * pp);
    }
    return {nodes, weights};
}

namespace {

std::vector<double> linspace(double lo, double hi, int n) {
    std::vector<double> v(n);
    for (int i = 0; i < n; ++i) v[i] = lo + (hi - lo) * i / (n - 1);
    return v;
}

// Bilinear interpolation with clamping; returns the interpolated value plus
// the quadratic boundary penalty for the clamped amount.
double interp_with_penalty(const std::vector<double>& grid1, const std::vector<double>& grid2,
                           const std::vector<double>& values, double x, double y,
                           double penalty_weight, double box) {
    double cx = std::clamp(x, -box, box);
    double cy = std::clamp(y, -box, box);
    double dx = x - cx, dy = y - cy;
    const int n1 = static_cast<int>(grid1.size());
    const int n2 = static_cast<int>(grid2.size());
    double h1 = grid1[1] - grid1[0];
    double h2 = grid2[1] - grid2[0];
    int i = std::min(static_cast<int>((cx - grid1.front()) / h1), n1 - 2);
    int j = std::min(static_cast<int>((cy - grid2.front()) / h2), n2 - 2);
    i = std::max(i, 0);
    j = std::max(j, 0);
    double tx = (cx - grid1[i]) / h1;
    double ty = (cy - grid2[j]) / h2;
    double v00 = values[i * n2 + j];
    double v01 = values[i * n2 + j + 1];
    double v10 = values[(i + 1) * n2 + j];
    double v11 = values[(i + 1) * n2 + j + 1];
    double v = (1 - tx) * ((1 - ty) * v00 + ty * v01) + tx * ((1 - ty) * v10 + ty * v11);
    return v + penalty_weight * (dx * dx + dy * dy);
}

} // namespace

double GridDpBaseline::value_at(const Eigen::Vector2d& s) const {
    return interp_with_penalty(grid1, grid2, v_grid, s(0), s(1), spec.boundary_penalty,
                               env.state_box);
}

GridDpBaseline pendulum_dp(const PendulumEnv& env, const GridSpec& spec, double tol,
                           long max_iter) {
    if (spec.n1 < 2 || spec.n2 < 2 || spec.n_actions < 2)
        throw std::invalid_argument("grid must have at least two nodes per dimension");
    GridDpBaseline dp;
    dp.spec = spec;
    dp.env = env;
    dp.grid1 = linspace(-env.state_box, env.state_box, spec.n1);
    dp.grid2 = linspace(-env.state_box, env.state_box, spec.n2);
    dp.actions = linspace(-env.input_box, env.input_box, spec.n_actions);

    auto [qn, qw] = gauss_legendre(spec.quadrature_order);
    std::vector<double> xi(spec.quadrature_order), w(spec.quadrature_order);
    for (int i = 0; i < spec.quadrature_order; ++i) {
        xi[i] = 0.5 * (env.xi_lo + env.xi_hi) + 0.5 * (env.xi_hi - env.xi_lo) * qn[i];
        w[i] = 0.5 * qw[i]; // mean over the uniform disturbance
    }

    const int n_nodes = spec.n1 * spec.n2;
    const double accel = env.dt / (env.mass * env.length * env.length);
    std::vector<double> v(n_nodes, 0.0), v_next(n_nodes);
    std::vector<double> q(static_cast<std::size_t>(n_nodes) * spec.n_actions);

    auto sweep = [&](const std::vector<double>& v_in, std::vector<double>& v_out,
                     std::vector<double>& q_out) {
        for (int i1 = 0; i1 < spec.n1; ++i1) {
            double s1 = dp.grid1[i1];
            double sin_s1 = std::sin(s1);
            for (int i2 = 0; i2 < spec.n2; ++i2) {
                double s2 = dp.grid2[i2];
                double x_next = s1 + s2 * env.dt; // independent of action and noise
                double base = s1 * s1 + s2 * s2;
                double best = std::numeric_limits<double>::infinity();
                for (int ai = 0; ai < spec.n_actions; ++ai) {
                    double a = dp.actions[ai];
                    double expect = 0.0;
                    for (int k = 0; k < spec.quadrature_order; ++k) {
                        double y_next =
                            s2 + (env.gravity / env.length + xi[k]) * sin_s1 * env.dt + accel * a;
                        expect += w[k] * interp_with_penalty(dp.grid1, dp.grid2, v_in, x_next,
                                                             y_next, spec.boundary_penalty,
                                                             env.state_box);
                    }
                    double val = base + a * a + env.gamma * expect;
                    q_out[static_cast<std::size_t>(i1 * spec.n2 + i2) * spec.n_actions + ai] = val;
                    best = std::min(best, val);
                }
                v_out[i1 * spec.n2 + i2] = best;
            }
        }
    };

    double diff = std::numeric_limits<double>::infinity();
    for (long it = 0; it < max_iter; ++it) {
        sweep(v, v_next, q);
        diff = 0.0;
        for (int i = 0; i < n_nodes; ++i) diff = std::max(diff, std::abs(v_next[i] - v[i]));
        v.swap(v_next);
        if (diff <= tol) break;
    }
    if (diff > tol)
        throw NonConvergence("grid value iteration residual " + std::to_string(diff) +
                             " above tolerance");

    // final consistent tables: q from the converged v, then the greedy pass
    sweep(v, v_next, q);
    dp.v_grid = v_next;
    dp.q_grid = q;
    dp.policy_grid.resize(n_nodes);
    double residual = 0.0;
    for (int i = 0; i < n_nodes; ++i) {
        double best = std::numeric_limits<double>::infinity();
        int best_a = 0;
        for (int ai = 0; ai < spec.n_actions; ++ai) {
            double val = q[static_cast<std::size_t>(i) * spec.n_actions + ai];
            if (val < best) {
                best = val;
                best_a = ai;
            }
        }
        dp.policy_grid[i] = best_a;
        residual = std::max(residual, std::abs(v_next[i] - v[i]));
    }
    dp.residual = residual;
    return dp;
}

MpcScheme make_pendulum_mpc_scheme(const PendulumEnv& env, int horizon, double slack_weight) {
    MpcScheme scheme;
    scheme.horizon = horizon;
    scheme.state_dim = 2;
    scheme.input_dim = 1;
    const double dt = env.dt;
    const double g = env.gravity;
    const double mass = env.mass;
    const double box = env.state_box;
    scheme.model = [dt, g, mass](const ThetaVector& theta, const Eigen::VectorXd& s,
                                 const Eigen::VectorXd& a) -> Eigen::VectorXd {
        double l = std::max(theta.scalar("model_l"), 1e-2); // guard against degenerate lengths
        Eigen::VectorXd out(2);
        out(0) = s(0) + s(1) * dt;
        out(1) = s(1) + g / l * s(0) * dt + dt / (mass * l * l) * a(0);
        return out;
    };
    scheme.stage_cost = [](const ThetaVector& theta, const Eigen::VectorXd& s,
                           const Eigen::VectorXd& a) {
        Eigen::Vector3d z(s(0), s(1), a(0));
        return z.dot(theta.pd_matrix("stage_factor") * z);
    };
    scheme.terminal_cost = [](const ThetaVector& theta, const Eigen::VectorXd& s) {
        return s.dot(theta.pd_matrix("terminal_factor") * s);
    };
    scheme.path_constraint = [box](const ThetaVector&, const Eigen::VectorXd& s,
                                   const Eigen::VectorXd&) -> Eigen::VectorXd {
        Eigen::VectorXd h(4);
        h << s(0) - box, -s(0) - box, s(1) - box, -s(1) - box;
        return h;
    };
    scheme.terminal_constraint = [box](const ThetaVector&,
                                       const Eigen::VectorXd& s) -> Eigen::VectorXd {
        Eigen::VectorXd h(4);
        h << s(0) - box, -s(0) - box, s(1) - box, -s(1) - box;
        return h;
    };
    scheme.input_lower = Eigen::VectorXd::Constant(1, -env.input_box);
    scheme.input_upper = Eigen::VectorXd::Constant(1, env.input_box);
    scheme.slack_weight = Eigen::VectorXd::Constant(4, slack_weight);
    scheme.terminal_slack_weight = Eigen::VectorXd::Constant(4, slack_weight);
    scheme.kind = "pendulum";
    nlohmann::json params;
    params["horizon"] = horizon;
    params["dt"] = dt;
    params["gravity"] = g;
    params["mass"] = mass;
    params["length"] = env.length;
    params["state_box"] = box;
    params["input_box"] = env.input_box;
    params["gamma"] = env.gamma;
    params["slack_weight"] = slack_weight;
    scheme.params_json = params.dump();
    return scheme;
}

ThetaVector initial_pendulum_theta() {
    ThetaLayout layout;
    layout.slices.push_back({"model_l", 0, 1, 0});
    layout.slices.push_back({"terminal_factor", 0, ThetaLayout::packed_size(2), 2});
    layout.slices.push_back({"stage_factor", 0, ThetaLayout::packed_size(3), 3});
    ThetaVector theta = make_theta(layout);
    theta.values(theta.layout.at("model_l").offset) = 0.25;
    theta.set_pd_matrix("terminal_factor", Eigen::Matrix2d::Identity());
    theta.set_pd_matrix("stage_factor", Eigen::Matrix3d::Identity());
    return theta;
}

RolloutResult rollout(const EnvStepFn& step_fn, const PolicyFn& policy_fn,
                      const Eigen::VectorXd& s0, int steps, double gamma, Rng& rng) {
    if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
    RolloutResult out;
    out.trajectory.resize(s0.size(), steps + 1);
    out.trajectory.col(0) = s0;
    out.costs.reserve(steps);
    Eigen::VectorXd s = s0;
    double discount = 1.0;
    for (int k = 0; k < steps; ++k) {
        Eigen::VectorXd a = policy_fn(s);
        std::pair<Eigen::VectorXd, double> step;
        try {
            step = step_fn(s, a, rng);
        } catch (const std::exception& e) {
            throw std::runtime_error("environment step " + std::to_string(k) +
                                     " failed: " + e.what());
        }
        out.discounted_cost += discount * step.second;
        out.costs.push_back(step.second);
        discount *= gamma;
        s = step.first;
        out.trajectory.col(k + 1) = s;
    }
    return out;
}

} // namespace mdpmpc

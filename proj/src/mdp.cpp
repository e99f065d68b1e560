#include "mdpmpc/mdp.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mdpmpc/errors.hpp"

namespace mdpmpc {

namespace {

double span(const std::vector<double>& d) {
    double lo = d[0], hi = d[0];
    for (double x : d) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    return hi - lo;
}

double sup_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

} // namespace

void TabularMdp::validate() const {
    if (n_states <= 0 || n_actions <= 0)
        throw std::invalid_argument("state and action counts must be positive");
    if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states ||
        stage_cost.size() != static_cast<std::size_t>(n_states) * n_actions)
        throw std::invalid_argument("table shapes do not match state/action counts");
    for (int s = 0; s < n_states; ++s) {
        bool has_finite = false;
        for (int a = 0; a < n_actions; ++a) {
            double row_sum = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                double pr = p(s, a, s2);
                if (pr < 0.0)
                    throw std::invalid_argument("negative transition probability");
                row_sum += pr;
            }
            if (std::abs(row_sum - 1.0) > 1e-12)
                throw std::invalid_argument("transition row does not sum to 1 at state " +
                                            std::to_string(s) + ", action " + std::to_string(a));
            if (std::isfinite(cost(s, a))) has_finite = true;
        }
        if (!has_finite)
            throw std::invalid_argument("state " + std::to_string(s) +
                                        " has no finite-cost action");
    }
}

double dot_extended(const double* p, const std::vector<double>& v) {
    double acc = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (p[i] == 0.0) continue;
        if (std::isinf(v[i])) return kInf;
        acc += p[i] * v[i];
    }
    return acc;
}

std::vector<double> bellman_apply(const TabularMdp& mdp, const std::vector<double>& v) {
    std::vector<double> out(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) {
        double best = kInf;
        for (int a = 0; a < mdp.n_actions; ++a) {
            double c = mdp.cost(s, a);
            if (std::isinf(c)) continue;
            const double* row = &mdp.transition[(static_cast<std::size_t>(s) * mdp.n_actions + a) *
                                                mdp.n_states];
            double q = c + mdp.gamma * dot_extended(row, v);
            if (q < best) best = q;
        }
        out[s] = best;
    }
    return out;
}

std::vector<double> q_from_v(const TabularMdp& mdp, const std::vector<double>& v) {
    std::vector<double> q(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int a = 0; a < mdp.n_actions; ++a) {
            double c = mdp.cost(s, a);
            if (std::isinf(c)) {
                q[static_cast<std::size_t>(s) * mdp.n_actions + a] = kInf;
                continue;
            }
            const double* row = &mdp.transition[(static_cast<std::size_t>(s) * mdp.n_actions + a) *
                                                mdp.n_states];
            q[static_cast<std::size_t>(s) * mdp.n_actions + a] =
                c + mdp.gamma * dot_extended(row, v);
        }
    }
    return q;
}

DpSolution value_iteration(const TabularMdp& mdp, double tol, long max_iter) {
    if (!(mdp.gamma > 0.0) || mdp.gamma > 1.0)
        throw InvalidDiscount("discount factor must lie in (0, 1], got " +
                              std::to_string(mdp.gamma));
    mdp.validate();
    const bool undiscounted = (mdp.gamma == 1.0);

    std::vector<double> v(mdp.n_states, 0.0);
    double resid = kInf;
    bool converged = false;
    for (long it = 0; it < max_iter; ++it) {
        std::vector<double> w = bellman_apply(mdp, v);
        if (undiscounted) {
            std::vector<double> d(mdp.n_states);
            for (int s = 0; s < mdp.n_states; ++s) d[s] = w[s] - v[s];
            resid = span(d);
            // keep the iterates anchored so they cannot drift
            double w0 = w[0];
            for (double& x : w) x -= w0;
        } else {
            resid = sup_norm_diff(w, v);
        }
        v = std::move(w);
        if (resid <= tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NonConvergence("value iteration residual " + std::to_string(resid) +
                             " above tolerance after max_iter sweeps");

    DpSolution sol;
    sol.gamma_used = mdp.gamma;
    sol.q = q_from_v(mdp, v);
    // A final greedy pass makes v[s] == min_a q[s][a] hold exactly, so the
    // returned tables are mutually consistent to the last bit.
    sol.v.resize(mdp.n_states);
    sol.policy.resize(mdp.n_states);
    for (int s = 0; s < mdp.n_states; ++s) {
        double best = kInf;
        int best_a = 0;
        for (int a = 0; a < mdp.n_actions; ++a) {
            double q = sol.q[static_cast<std::size_t>(s) * mdp.n_actions + a];
            if (q < best) {
                best = q;
                best_a = a;
            }
        }
        if (std::isinf(best)) throw AllActionsInfeasible(s);
        sol.v[s] = best;
        sol.policy[s] = best_a;
    }
    if (undiscounted) {
        // Re-anchor at state 0. Subtracting the same constant from v and q
        // keeps v[s] == min_a q[s][a] exact (rounding is monotone).
        double v0 = sol.v[0];
        for (double& x : sol.v) x -= v0;
        for (double& x : sol.q)
            if (!std::isinf(x)) x -= v0;
    }
    sol.advantage.resize(sol.q.size());
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            std::size_t i = static_cast<std::size_t>(s) * mdp.n_actions + a;
            sol.advantage[i] = std::isinf(sol.q[i]) ? kInf : sol.q[i] - sol.v[s];
        }
    std::vector<double> w = bellman_apply(mdp, sol.v);
    if (undiscounted) {
        std::vector<double> d(mdp.n_states);
        for (int s = 0; s < mdp.n_states; ++s) d[s] = w[s] - sol.v[s];
        sol.bellman_residual = span(d);
    } else {
        sol.bellman_residual = sup_norm_diff(w, sol.v);
    }
    return sol;
}

std::vector<double> policy_evaluation(const TabularMdp& mdp, const std::vector<int>& policy) {
    mdp.validate();
    if (policy.size() != static_cast<std::size_t>(mdp.n_states))
        throw ShapeMismatch("policy length does not match the state count");
    const int n = mdp.n_states;
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(n, n);
    Eigen::VectorXd rhs(n);
    for (int s = 0; s < n; ++s) {
        int a = policy[s];
        if (a < 0 || a >= mdp.n_actions)
            throw std::invalid_argument("policy action out of range at state " + std::to_string(s));
        double c = mdp.cost(s, a);
        if (std::isinf(c))
            throw std::invalid_argument("policy selects an infinite-cost action at state " +
                                        std::to_string(s));
        rhs(s) = c;
        for (int s2 = 0; s2 < n; ++s2) m(s, s2) -= mdp.gamma * mdp.p(s, a, s2);
    }

    Eigen::VectorXd x;
    if (mdp.gamma < 1.0) {
        Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
        if (!lu.isInvertible())
            throw SingularSystem("closed-loop evaluation system is singular");
        x = lu.solve(rhs);
    } else {
        // Relative evaluation for a zero-gain policy: (I - P) v = cost with
        // v[0] = 0 replacing the (redundant) first equation.
        Eigen::MatrixXd m2 = m;
        Eigen::VectorXd rhs2 = rhs;
        m2.row(0).setZero();
        m2(0, 0) = 1.0;
        rhs2(0) = 0.0;
        Eigen::FullPivLU<Eigen::MatrixXd> lu(m2);
        if (!lu.isInvertible())
            throw SingularSystem("relative evaluation system is singular");
        x = lu.solve(rhs2);
        // The dropped equation only holds when the policy really has zero
        // gain; a large residual there means the premise is violated.
        double r0 = std::abs((m.row(0) * x - rhs.row(0))(0));
        if (r0 > 1e-6 * std::max(1.0, rhs.cwiseAbs().maxCoeff()))
            throw SingularSystem("relative evaluation inconsistent: policy gain is not zero");
    }
    return std::vector<double>(x.data(), x.data() + n);
}

AverageCostSolution relative_value_iteration(const TabularMdp& mdp, double tol, long max_iter) {
    mdp.validate();
    const int n = mdp.n_states;
    TabularMdp m1 = mdp;
    m1.gamma = 1.0;

    std::vector<double> h(n, 0.0);
    std::vector<double> d(n, 0.0), d_prev(n, kInf);
    double sp = kInf;
    bool converged = false;
    for (long it = 0; it < max_iter; ++it) {
        if (it > 0) d_prev = d;
        std::vector<double> w = bellman_apply(m1, h);
        for (int s = 0; s < n; ++s) d[s] = w[s] - h[s];
        sp = span(d);
        double w0 = w[0];
        for (int s = 0; s < n; ++s) h[s] = w[s] - w0;
        if (sp <= tol) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        // Stable but state-dependent per-state gains indicate a multichain
        // instance rather than slow mixing.
        if (sup_norm_diff(d, d_prev) <= tol && sp > 10.0 * tol)
            throw GainNotConstant("per-state average-cost estimates differ by " +
                                  std::to_string(sp));
        throw NonConvergence("relative value iteration span " + std::to_string(sp) +
                             " above tolerance after max_iter sweeps");
    }

    AverageCostSolution sol;
    double lo = d[0], hi = d[0];
    for (double x : d) {
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }
    sol.gain = 0.5 * (lo + hi);
    sol.bias = h;
    sol.policy.resize(n);
    std::vector<double> q = q_from_v(m1, h);
    for (int s = 0; s < n; ++s) {
        double best = kInf;
        int best_a = 0;
        for (int a = 0; a < mdp.n_actions; ++a) {
            double qa = q[static_cast<std::size_t>(s) * mdp.n_actions + a];
            if (qa < best) {
                best = qa;
                best_a = a;
            }
        }
        sol.policy[s] = best_a;
    }
    // residual of the average-cost optimality equation gain + bias = T(bias)
    std::vector<double> w = bellman_apply(m1, sol.bias);
    double r = 0.0;
    for (int s = 0; s < n; ++s) r = std::max(r, std::abs(w[s] - sol.gain - sol.bias[s]));
    sol.residual = r;
    return sol;
}

TabularMdp shift_stage_cost(const TabularMdp& mdp, double gain) {
    TabularMdp out = mdp;
    for (double& c : out.stage_cost)
        if (std::isfinite(c)) c -= gain;
    return out;
}

TabularMdp random_mdp(Rng& rng, int n_states, int n_actions, double gamma) {
    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.resize(static_cast<std::size_t>(n_states) * n_actions * n_states);
    mdp.stage_cost.resize(static_cast<std::size_t>(n_states) * n_actions);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                double x = -std::log(1.0 - rng.uniform()); // Exp(1) draws normalize
                mdp.p(s, a, s2) = x;                       // to a Dirichlet(1,...,1) row
                sum += x;
            }
            for (int s2 = 0; s2 < n_states; ++s2) mdp.p(s, a, s2) /= sum;
            mdp.cost(s, a) = rng.uniform();
        }
    return mdp;
}

std::vector<double> random_transition(Rng& rng, int n_states, int n_actions) {
    std::vector<double> t(static_cast<std::size_t>(n_states) * n_actions * n_states);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            std::size_t base = (static_cast<std::size_t>(s) * n_actions + a) * n_states;
            for (int s2 = 0; s2 < n_states; ++s2) {
                double x = -std::log(1.0 - rng.uniform());
                t[base + s2] = x;
                sum += x;
            }
            for (int s2 = 0; s2 < n_states; ++s2) t[base + s2] /= sum;
        }
    return t;
}

nlohmann::json mdp_to_json(const TabularMdp& mdp) {
    nlohmann::json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    nlohmann::json trans = nlohmann::json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
        nlohmann::json per_s = nlohmann::json::array();
        for (int a = 0; a < mdp.n_actions; ++a) {
            nlohmann::json row = nlohmann::json::array();
            for (int s2 = 0; s2 < mdp.n_states; ++s2) row.push_back(mdp.p(s, a, s2));
            per_s.push_back(std::move(row));
        }
        trans.push_back(std::move(per_s));
    }
    j["transition"] = std::move(trans);
    nlohmann::json costs = nlohmann::json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (int a = 0; a < mdp.n_actions; ++a) {
            double c = mdp.cost(s, a);
            if (std::isinf(c))
                row.push_back("inf");
            else
                row.push_back(c);
        }
        costs.push_back(std::move(row));
    }
    j["stage_cost"] = std::move(costs);
    return j;
}

TabularMdp mdp_from_json(const nlohmann::json& j) {
    TabularMdp mdp;
    mdp.n_states = j.at("n_states").get<int>();
    mdp.n_actions = j.at("n_actions").get<int>();
    mdp.gamma = j.at("gamma").get<double>();
    mdp.transition.resize(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states);
    mdp.stage_cost.resize(static_cast<std::size_t>(mdp.n_states) * mdp.n_actions);
    const auto& trans = j.at("transition");
    const auto& costs = j.at("stage_cost");
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            for (int s2 = 0; s2 < mdp.n_states; ++s2)
                mdp.p(s, a, s2) = trans.at(s).at(a).at(s2).get<double>();
            const auto& c = costs.at(s).at(a);
            mdp.cost(s, a) = c.is_string() ? kInf : c.get<double>();
        }
    mdp.validate();
    return mdp;
}

} // namespace mdpmpc

#include "mdpmpc/equivalence.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mdpmpc/errors.hpp"

namespace mdpmpc {

namespace {

constexpr double kTieMargin = 1e-7;

std::vector<double> closed_loop_step(const ModelTransition& model, const std::vector<int>& policy,
                                     const std::vector<double>& dist) {
    std::vector<double> out(model.n_states, 0.0);
    for (int s = 0; s < model.n_states; ++s) {
        if (dist[s] == 0.0) continue;
        const double* row = model.row(s, policy[s]);
        for (int s2 = 0; s2 < model.n_states; ++s2) out[s2] += dist[s] * row[s2];
    }
    return out;
}

} // namespace

void ModelTransition::validate() const {
    if (n_states <= 0 || n_actions <= 0)
        throw std::invalid_argument("state and action counts must be positive");
    if (transition.size() != static_cast<std::size_t>(n_states) * n_actions * n_states)
        throw std::invalid_argument("transition table shape mismatch");
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                double pr = p(s, a, s2);
                if (pr < 0.0) throw std::invalid_argument("negative model probability");
                sum += pr;
            }
            if (std::abs(sum - 1.0) > 1e-12)
                throw std::invalid_argument("model row does not sum to 1 at state " +
                                            std::to_string(s) + ", action " + std::to_string(a));
        }
}

ModifiedOcp build_modified_costs(const DpSolution& real_solution, const ModelTransition& model) {
    const int n = model.n_states;
    const int m = model.n_actions;
    if (real_solution.v.size() != static_cast<std::size_t>(n) ||
        real_solution.q.size() != static_cast<std::size_t>(n) * m)
        throw ShapeMismatch("solution tables do not match the model shape");

    ModifiedOcp ocp;
    ocp.model = model;
    ocp.terminal_cost_hat = real_solution.v;
    ocp.stage_cost_hat.assign(static_cast<std::size_t>(n) * m, kInf);
    ocp.feasible_mask.assign(static_cast<std::size_t>(n) * m, 0);
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < m; ++a) {
            std::size_t i = static_cast<std::size_t>(s) * m + a;
            double expect = dot_extended(model.row(s, a), real_solution.v);
            double q = real_solution.q[i];
            if (std::isfinite(expect) && std::isfinite(q)) {
                ocp.stage_cost_hat[i] = q - expect;
                ocp.feasible_mask[i] = 1;
            }
        }
    return ocp;
}

FiniteHorizonSolution backward_induction(const ModifiedOcp& ocp, int horizon) {
    if (horizon < 0) throw std::invalid_argument("horizon must be nonnegative");
    const int n = ocp.model.n_states;
    const int m = ocp.model.n_actions;
    if (horizon >= 1)
        for (int s = 0; s < n; ++s) {
            bool any = false;
            for (int a = 0; a < m; ++a) any = any || ocp.feasible(s, a);
            if (!any) throw AllActionsInfeasible(s);
        }

    FiniteHorizonSolution sol;
    sol.horizon = horizon;
    sol.values_by_stage.reserve(horizon + 1);
    sol.values_by_stage.push_back(ocp.terminal_cost_hat);
    std::vector<double> q(static_cast<std::size_t>(n) * m, kInf);
    for (int k = 1; k <= horizon; ++k) {
        const std::vector<double>& prev = sol.values_by_stage.back();
        std::vector<double> v(n);
        for (int s = 0; s < n; ++s) {
            double best = kInf;
            for (int a = 0; a < m; ++a) {
                std::size_t i = static_cast<std::size_t>(s) * m + a;
                double l = ocp.stage_cost_hat[i];
                double val = std::isinf(l) ? kInf : l + dot_extended(ocp.model.row(s, a), prev);
                q[i] = val;
                if (val < best) best = val;
            }
            v[s] = best;
        }
        sol.values_by_stage.push_back(std::move(v));
    }
    if (horizon >= 1) {
        sol.q_hat = q;
        sol.policy_hat.resize(n);
        for (int s = 0; s < n; ++s) {
            double best = kInf;
            int best_a = 0;
            for (int a = 0; a < m; ++a) {
                double val = q[static_cast<std::size_t>(s) * m + a];
                if (val < best) {
                    best = val;
                    best_a = a;
                }
            }
            sol.policy_hat[s] = best_a;
        }
    }
    return sol;
}

std::vector<std::vector<double>> finite_horizon_policy_values(const ModifiedOcp& ocp,
                                                              const std::vector<int>& policy,
                                                              int horizon) {
    const int n = ocp.model.n_states;
    if (policy.size() != static_cast<std::size_t>(n))
        throw ShapeMismatch("policy length does not match the state count");
    std::vector<std::vector<double>> stages;
    stages.reserve(horizon + 1);
    stages.push_back(ocp.terminal_cost_hat);
    for (int k = 1; k <= horizon; ++k) {
        const std::vector<double>& prev = stages.back();
        std::vector<double> v(n);
        for (int s = 0; s < n; ++s) {
            double l = ocp.l_hat(s, policy[s]);
            v[s] = std::isinf(l) ? kInf : l + dot_extended(ocp.model.row(s, policy[s]), prev);
        }
        stages.push_back(std::move(v));
    }
    return stages;
}

std::vector<char> estimate_s_set(const ModifiedOcp& ocp, const std::vector<int>& real_policy,
                                 const std::vector<double>& v_star, int n_bar) {
    const int n = ocp.model.n_states;
    std::vector<char> marked(n, 1);
    for (int s0 = 0; s0 < n; ++s0) {
        // boolean support propagation; exact regardless of probability size
        std::vector<char> support(n, 0);
        support[s0] = 1;
        bool ok = std::isfinite(v_star[s0]);
        for (int k = 1; k <= n_bar && ok; ++k) {
            std::vector<char> next(n, 0);
            for (int s = 0; s < n; ++s) {
                if (!support[s]) continue;
                const double* row = ocp.model.row(s, real_policy[s]);
                for (int s2 = 0; s2 < n; ++s2)
                    if (row[s2] > 0.0) next[s2] = 1;
            }
            for (int s2 = 0; s2 < n; ++s2)
                if (next[s2] && !std::isfinite(v_star[s2])) ok = false;
            support.swap(next);
        }
        marked[s0] = ok ? 1 : 0;
    }
    return marked;
}

double estimate_v_infinity(const ModifiedOcp& ocp, const std::vector<int>& real_policy,
                           const std::vector<double>& v_star, long max_horizon, double tol) {
    const int n = ocp.model.n_states;
    std::vector<char> admissible =
        estimate_s_set(ocp, real_policy, v_star, static_cast<int>(std::min<long>(max_horizon, n)));
    std::vector<int> starts;
    for (int s = 0; s < n; ++s)
        if (admissible[s]) starts.push_back(s);
    if (starts.empty())
        throw NonConvergence("no start state keeps the expected optimal value finite");

    std::vector<std::vector<double>> dists;
    dists.reserve(starts.size());
    for (int s0 : starts) {
        std::vector<double> d(n, 0.0);
        d[s0] = 1.0;
        dists.push_back(std::move(d));
    }
    std::vector<double> expect(starts.size());
    for (std::size_t i = 0; i < starts.size(); ++i)
        expect[i] = dot_extended(dists[i].data(), v_star);

    double succ = kInf;
    double spread = kInf;
    for (long k = 0; k < max_horizon; ++k) {
        succ = 0.0;
        for (std::size_t i = 0; i < starts.size(); ++i) {
            dists[i] = closed_loop_step(ocp.model, real_policy, dists[i]);
            double e = dot_extended(dists[i].data(), v_star);
            succ = std::max(succ, std::abs(e - expect[i]));
            expect[i] = e;
        }
        double lo = expect[0], hi = expect[0];
        for (double e : expect) {
            lo = std::min(lo, e);
            hi = std::max(hi, e);
        }
        spread = hi - lo;
        if (succ <= tol && spread <= 10.0 * tol)
            return 0.5 * (lo + hi);
    }
    if (succ <= tol && spread > 10.0 * tol)
        throw StartStateDependent("limits differ across start states by " +
                                  std::to_string(spread));
    throw NonConvergence("expected optimal value did not settle within the horizon");
}

InfiniteHorizonSolution infinite_horizon_solution(const ModifiedOcp& ocp, double tol,
                                                  long max_iter) {
    const int n = ocp.model.n_states;
    const int m = ocp.model.n_actions;
    for (int s = 0; s < n; ++s) {
        bool any = false;
        for (int a = 0; a < m; ++a) any = any || ocp.feasible(s, a);
        if (!any) throw AllActionsInfeasible(s);
    }

    auto apply = [&](const std::vector<double>& v) {
        std::vector<double> out(n);
        for (int s = 0; s < n; ++s) {
            double best = kInf;
            for (int a = 0; a < m; ++a) {
                double l = ocp.l_hat(s, a);
                if (std::isinf(l)) continue;
                double val = l + dot_extended(ocp.model.row(s, a), v);
                if (val < best) best = val;
            }
            out[s] = best;
        }
        return out;
    };

    std::vector<double> h(n, 0.0);
    double sp = kInf;
    bool converged = false;
    for (long it = 0; it < max_iter; ++it) {
        std::vector<double> w = apply(h);
        double lo = kInf, hi = -kInf;
        for (int s = 0; s < n; ++s) {
            double d = w[s] - h[s];
            lo = std::min(lo, d);
            hi = std::max(hi, d);
        }
        sp = hi - lo;
        double w0 = w[0];
        for (int s = 0; s < n; ++s) h[s] = w[s] - w0;
        if (sp <= tol) {
            converged = true;
            break;
        }
    }
    if (!converged)
        throw NonConvergence("terminal-cost-free value iteration span " + std::to_string(sp) +
                             " above tolerance");

    InfiniteHorizonSolution sol;
    sol.policy.resize(n);
    sol.q.assign(static_cast<std::size_t>(n) * m, kInf);
    for (int s = 0; s < n; ++s) {
        double best = kInf;
        int best_a = 0;
        for (int a = 0; a < m; ++a) {
            double l = ocp.l_hat(s, a);
            double val = std::isinf(l) ? kInf : l + dot_extended(ocp.model.row(s, a), h);
            sol.q[static_cast<std::size_t>(s) * m + a] = val;
            if (val < best) {
                best = val;
                best_a = a;
            }
        }
        sol.policy[s] = best_a;
    }

    // Pin the additive constant: along the closed-loop model chain the
    // expectation of the returned values must tend to zero, which is the
    // normalization carried by the limit of the finite-horizon sums.
    double offset;
    try {
        offset = estimate_v_infinity(ocp, sol.policy, h, max_iter, std::min(tol, 1e-11));
    } catch (const StartStateDependent&) {
        throw;
    } catch (const NonConvergence& e) {
        throw NonConvergence(std::string("normalization limit failed: ") + e.what());
    }
    sol.v = h;
    for (double& x : sol.v) x -= offset;
    for (double& x : sol.q)
        if (!std::isinf(x)) x -= offset;

    std::vector<double> w = apply(sol.v);
    double r = 0.0;
    for (int s = 0; s < n; ++s) r = std::max(r, std::abs(w[s] - sol.v[s]));
    sol.residual = r;
    return sol;
}

EquivalenceReport verify_theorems(const TabularMdp& real, const ModelTransition& model,
                                  const std::vector<int>& horizons, double tol) {
    real.validate();
    model.validate();
    if (model.n_states != real.n_states || model.n_actions != real.n_actions)
        throw ShapeMismatch("model shape does not match the real process");

    const double solver_tol = std::min(tol / 10.0, 1e-10);
    EquivalenceReport report;
    std::string notes;

    DpSolution sol;
    if (real.gamma == 1.0) {
        AverageCostSolution avg = relative_value_iteration(real, solver_tol);
        if (std::abs(avg.gain) > 100.0 * solver_tol)
            notes += "warning: undiscounted instance has optimal gain " +
                     std::to_string(avg.gain) + "; shift the stage cost first. ";
        TabularMdp m1 = real;
        m1.gamma = 1.0;
        sol.gamma_used = 1.0;
        sol.q = q_from_v(m1, avg.bias);
        sol.v.resize(real.n_states);
        sol.policy.resize(real.n_states);
        for (int s = 0; s < real.n_states; ++s) {
            double best = kInf;
            int best_a = 0;
            for (int a = 0; a < real.n_actions; ++a) {
                double q = sol.q[static_cast<std::size_t>(s) * real.n_actions + a];
                if (q < best) {
                    best = q;
                    best_a = a;
                }
            }
            sol.v[s] = best;
            sol.policy[s] = best_a;
        }
        sol.advantage.resize(sol.q.size());
        for (std::size_t i = 0; i < sol.q.size(); ++i) {
            int s = static_cast<int>(i) / real.n_actions;
            sol.advantage[i] = std::isinf(sol.q[i]) ? kInf : sol.q[i] - sol.v[s];
        }
        sol.bellman_residual = avg.residual;
        notes += "real solution from relative value iteration (bias values). ";
    } else {
        sol = value_iteration(real, solver_tol);
    }

    ModifiedOcp ocp = build_modified_costs(sol, model);
    int n_bar = horizons.empty() ? 0 : *std::max_element(horizons.begin(), horizons.end());
    report.s_set = estimate_s_set(ocp, sol.policy, sol.v, n_bar);
    int n_in_s = 0;
    for (char c : report.s_set) n_in_s += (c != 0);
    if (n_in_s == 0) {
        report.notes = notes + "admissible start set is empty; nothing to verify.";
        return report;
    }

    long agree = 0, ties = 0, checked_states = 0;
    for (int N : horizons) {
        FiniteHorizonSolution fh;
        try {
            fh = backward_induction(ocp, N);
        } catch (const AllActionsInfeasible& e) {
            notes += std::string("horizon ") + std::to_string(N) + " skipped: " + e.what() + ". ";
            continue;
        }
        for (int s = 0; s < real.n_states; ++s) {
            if (!report.s_set[s]) continue;
            report.max_value_gap =
                std::max(report.max_value_gap, std::abs(fh.value()[s] - sol.v[s]));
        }
        if (N >= 1) {
            for (int s = 0; s < real.n_states; ++s) {
                if (!report.s_set[s]) continue;
                ++checked_states;
                if (fh.policy_hat[s] == sol.policy[s]) {
                    ++agree;
                } else {
                    double q_alt =
                        sol.q[static_cast<std::size_t>(s) * real.n_actions + fh.policy_hat[s]];
                    if (std::abs(q_alt - sol.v[s]) <= kTieMargin) ++ties;
                }
                for (int a = 0; a < real.n_actions; ++a) {
                    std::size_t i = static_cast<std::size_t>(s) * real.n_actions + a;
                    if (!ocp.feasible_mask[i]) continue;
                    report.max_q_gap_on_feasible =
                        std::max(report.max_q_gap_on_feasible, std::abs(fh.q_hat[i] - sol.q[i]));
                }
            }
        }
    }
    if (checked_states > 0) {
        report.policy_agreement = static_cast<double>(agree + ties) / checked_states;
        report.tie_fraction = static_cast<double>(ties) / checked_states;
    }

    try {
        double v_inf = estimate_v_infinity(ocp, sol.policy, sol.v, 100000, solver_tol);
        InfiniteHorizonSolution inf = infinite_horizon_solution(ocp, solver_tol);
        report.v_infinity = v_inf;
        report.inf_horizon_checked = true;
        for (int s = 0; s < real.n_states; ++s) {
            if (!report.s_set[s]) continue;
            report.max_inf_value_gap =
                std::max(report.max_inf_value_gap, std::abs(inf.v[s] - (sol.v[s] - v_inf)));
            for (int a = 0; a < real.n_actions; ++a) {
                std::size_t i = static_cast<std::size_t>(s) * real.n_actions + a;
                if (!ocp.feasible_mask[i]) continue;
                report.max_inf_q_gap =
                    std::max(report.max_inf_q_gap, std::abs(inf.q[i] - (sol.q[i] - v_inf)));
            }
        }
        notes += "infinite-horizon clauses checked. ";
    } catch (const std::exception& e) {
        notes += std::string("infinite-horizon clauses skipped: ") + e.what() + ". ";
    }

    report.notes = notes;
    return report;
}

nlohmann::json report_to_json(const EquivalenceReport& report) {
    nlohmann::json j;
    j["max_value_gap"] = report.max_value_gap;
    j["policy_agreement"] = report.policy_agreement;
    j["tie_fraction"] = report.tie_fraction;
    j["max_q_gap_on_feasible"] = report.max_q_gap_on_feasible;
    j["s_set"] = nlohmann::json::array();
    for (char c : report.s_set) j["s_set"].push_back(c != 0);
    if (report.v_infinity)
        j["v_infinity"] = *report.v_infinity;
    else
        j["v_infinity"] = nullptr;
    j["inf_horizon_checked"] = report.inf_horizon_checked;
    j["max_inf_value_gap"] = report.max_inf_value_gap;
    j["max_inf_q_gap"] = report.max_inf_q_gap;
    j["notes"] = report.notes;
    return j;
}

} // namespace mdpmpc

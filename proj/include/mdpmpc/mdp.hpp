#pragma once

#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdpmpc/rng.hpp"

namespace mdpmpc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Finite state/action decision process with extended-real stage costs.
/// Entries of `stage_cost` may be +inf to mark forbidden pairs; every state
/// must keep at least one finite-cost action.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    double gamma = 1.0;
    std::vector<double> transition; // [s][a][s'] row-major
    std::vector<double> stage_cost; // [s][a] row-major

    double p(int s, int a, int s2) const {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double& p(int s, int a, int s2) {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double cost(int s, int a) const { return stage_cost[static_cast<std::size_t>(s) * n_actions + a]; }
    double& cost(int s, int a) { return stage_cost[static_cast<std::size_t>(s) * n_actions + a]; }

    /// Throws std::invalid_argument when a transition row is not a probability
    /// distribution (tolerance 1e-12) or a state has no finite-cost action.
    void validate() const;
};

struct DpSolution {
    std::vector<double> v;       // [s]
    std::vector<double> q;       // [s][a], +inf where stage cost is +inf
    std::vector<double> advantage; // [s][a]
    std::vector<int> policy;     // [s]
    double bellman_residual = 0.0;
    double gamma_used = 1.0;

    double q_at(int s, int a, int n_actions) const {
        return q[static_cast<std::size_t>(s) * n_actions + a];
    }
};

struct AverageCostSolution {
    double gain = 0.0;
    std::vector<double> bias; // [s], bias[0] == 0
    std::vector<int> policy;
    double residual = 0.0;
};

/// Expectation sum(p[i] * v[i]) that treats +inf values as absorbing:
/// zero-probability entries never contribute, a positive-probability +inf
/// makes the result +inf.
double dot_extended(const double* p, const std::vector<double>& v);

/// Solves the discounted (or gain-zero undiscounted) problem by value
/// iteration. For gamma < 1 the stopping rule is the sup norm of successive
/// differences; for gamma == 1 a span seminorm is used and the returned
/// values are normalized to v[0] = 0. The returned (v, q) pair is exactly
/// greedy-consistent: v[s] == min_a q[s][a] bitwise.
DpSolution value_iteration(const TabularMdp& mdp, double tol = 1e-10, long max_iter = 100000);

/// Value of a fixed deterministic policy. gamma < 1 solves the linear system
/// directly; gamma == 1 performs relative evaluation assuming the policy has
/// zero gain (value pinned at state 0).
std::vector<double> policy_evaluation(const TabularMdp& mdp, const std::vector<int>& policy);

/// Average-cost (gain) and bias solution via relative value iteration with a
/// span-seminorm stopping rule; bias normalized at state 0.
AverageCostSolution relative_value_iteration(const TabularMdp& mdp, double tol = 1e-10,
                                             long max_iter = 100000);

/// Returns a copy with every finite stage cost reduced by `gain`.
TabularMdp shift_stage_cost(const TabularMdp& mdp, double gain);

/// q[s][a] = cost[s][a] + gamma * E[v(s')], +inf exactly where the stage cost
/// is +inf.
std::vector<double> q_from_v(const TabularMdp& mdp, const std::vector<double>& v);

/// One Bellman sweep: returns min_a (cost + gamma * E v).
std::vector<double> bellman_apply(const TabularMdp& mdp, const std::vector<double>& v);

/// Dense random instance: Dirichlet-like positive transition rows, uniform
/// costs in [0, 1). Used by the verification experiments and tests.
TabularMdp random_mdp(Rng& rng, int n_states, int n_actions, double gamma);

/// Random transition table of the same shape as `mdp` (an arbitrary,
/// generally wrong, model of it).
std::vector<double> random_transition(Rng& rng, int n_states, int n_actions);

nlohmann::json mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const nlohmann::json& j);

} // namespace mdpmpc

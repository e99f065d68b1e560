#pragma once

#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "mdpmpc/mdp.hpp"

namespace mdpmpc {

/// Transition table of an (arbitrary, generally wrong) model of the real
/// system. Same [s][a][s'] layout as TabularMdp::transition.
struct ModelTransition {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> transition;

    double p(int s, int a, int s2) const {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    const double* row(int s, int a) const {
        return &transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states];
    }
    void validate() const;
};

/// Undiscounted optimal control problem on the model whose stage and
/// terminal costs are rebuilt from the real system's solution:
///   terminal_cost_hat = v*,  stage_cost_hat = q* - E_model[v*]
/// wherever that expectation is finite, +inf elsewhere.
struct ModifiedOcp {
    ModelTransition model;
    std::vector<double> stage_cost_hat;    // [s][a]
    std::vector<double> terminal_cost_hat; // [s]
    std::vector<char> feasible_mask;       // [s][a]

    double l_hat(int s, int a) const {
        return stage_cost_hat[static_cast<std::size_t>(s) * model.n_actions + a];
    }
    bool feasible(int s, int a) const {
        return feasible_mask[static_cast<std::size_t>(s) * model.n_actions + a] != 0;
    }
};

struct FiniteHorizonSolution {
    int horizon = 0;
    std::vector<std::vector<double>> values_by_stage; // [k][s], k=0 is the terminal layer
    std::vector<double> q_hat;                        // [s][a], outermost stage
    std::vector<int> policy_hat;                      // [s], defined for horizon >= 1

    const std::vector<double>& value() const { return values_by_stage.back(); }
};

struct InfiniteHorizonSolution {
    std::vector<double> v;  // [s]
    std::vector<double> q;  // [s][a]
    std::vector<int> policy;
    double residual = 0.0;
};

struct EquivalenceReport {
    double max_value_gap = 0.0;
    double policy_agreement = 1.0; // fraction of checked states, ties counted as agreement
    double tie_fraction = 0.0;     // fraction of checked states flagged as argmin ties
    double max_q_gap_on_feasible = 0.0;
    std::vector<char> s_set;
    std::optional<double> v_infinity;
    double max_inf_value_gap = 0.0; // infinite-horizon clauses, when checked
    double max_inf_q_gap = 0.0;
    bool inf_horizon_checked = false;
    std::string notes;
};

ModifiedOcp build_modified_costs(const DpSolution& real_solution, const ModelTransition& model);

/// Exact stagewise recursion v_k = min_a (l_hat + E_model v_{k-1}) starting
/// from the terminal layer. Ties break toward the lowest action index.
FiniteHorizonSolution backward_induction(const ModifiedOcp& ocp, int horizon);

/// Stage values of a fixed policy in the modified problem (v_0 is the
/// terminal layer); the last entry is the horizon-N policy value.
std::vector<std::vector<double>> finite_horizon_policy_values(const ModifiedOcp& ocp,
                                                              const std::vector<int>& policy,
                                                              int horizon);

/// Marks state s when the k-step closed-loop model distribution started at s
/// keeps the expectation of v_star finite for every k <= n_bar.
std::vector<char> estimate_s_set(const ModifiedOcp& ocp, const std::vector<int>& real_policy,
                                 const std::vector<double>& v_star, int n_bar);

/// Limit of E[v_star] along the model's closed-loop chain, estimated by
/// power iteration from every admissible start state.
double estimate_v_infinity(const ModifiedOcp& ocp, const std::vector<int>& real_policy,
                           const std::vector<double>& v_star, long max_horizon = 100000,
                           double tol = 1e-10);

/// Terminal-cost-free undiscounted problem solved by span-seminorm value
/// iteration. The additive constant is pinned intrinsically: the expectation
/// of the returned values along the closed-loop model chain tends to zero.
InfiniteHorizonSolution infinite_horizon_solution(const ModifiedOcp& ocp, double tol = 1e-10,
                                                  long max_iter = 100000);

/// End-to-end pipeline: solve the real process, rebuild the costs, check the
/// finite-horizon value/policy/action-value identities for each horizon and
/// the infinite-horizon ones when the limit exists. Constituent failures are
/// recorded in the notes instead of aborting.
EquivalenceReport verify_theorems(const TabularMdp& real, const ModelTransition& model,
                                  const std::vector<int>& horizons, double tol = 1e-9);

nlohmann::json report_to_json(const EquivalenceReport& report);

} // namespace mdpmpc

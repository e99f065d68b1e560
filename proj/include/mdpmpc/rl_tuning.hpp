#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "mdpmpc/envs.hpp"
#include "mdpmpc/mpc.hpp"

namespace mdpmpc {

enum class LearningAlgorithm { q_learning, policy_search };

struct LearningConfig {
    LearningAlgorithm algorithm = LearningAlgorithm::q_learning;
    double learning_rate = 1e-3;
    double discount = 0.95; // discount of the real process
    int episodes = 10;
    int steps_per_episode = 20;
    double exploration_std = 0.1; // Gaussian action noise, clipped to the box
    std::uint64_t seed = 0;
    std::vector<Eigen::VectorXd> eval_states;

    int rollout_repeats = 1;   // rollouts per eval state in the performance estimate
    double spsa_step = 0.05;   // relative simultaneous-perturbation size
    MpcSolveOptions solve_options;
    std::function<double(const Eigen::VectorXd&)> violation_fn; // optional, per-state measure

    void validate() const;
};

struct Transition {
    Eigen::VectorXd s;
    Eigen::VectorXd a;
    double cost = 0.0;
    Eigen::VectorXd s_next;
};

struct QLearningStepResult {
    ThetaVector theta;
    double td_error = 0.0;
    bool skipped = false; // solver failure left theta unchanged
};

/// One temporal-difference update of theta on the action-value program:
/// td = cost + discount * min_a' q(s', a') - q(s, a); theta moves along
/// td * grad_theta q with the positive-definiteness floor re-applied.
QLearningStepResult q_learning_step(const MpcScheme& scheme, const ThetaVector& theta,
                                    const Transition& transition, const LearningConfig& cfg);

struct PolicySearchStepResult {
    ThetaVector theta;
    double j_estimate = 0.0;
    double violation = 0.0; // max over the estimate's rollouts, when measured
};

/// Two-point simultaneous-perturbation step on the empirical discounted
/// closed-loop cost over the fixed evaluation states; rollout seeds are
/// common across evaluations, perturbation signs fixed by step_index.
PolicySearchStepResult policy_search_step(const EnvStepFn& env_step, const MpcScheme& scheme,
                                          const ThetaVector& theta, const LearningConfig& cfg,
                                          long step_index = 0);

/// Empirical discounted closed-loop cost J(theta) averaged over eval states
/// and rollout repeats with seeds derived only from cfg.seed.
double closed_loop_cost(const EnvStepFn& env_step, const MpcScheme& scheme,
                        const ThetaVector& theta, const LearningConfig& cfg,
                        double* max_violation = nullptr);

struct LearningRecord {
    long step = 0;
    double value = 0.0; // TD error or J estimate
    double theta_norm = 0.0;
    double violation = 0.0;
};

struct LearningTrace {
    std::vector<LearningRecord> records;
    ThetaVector final_theta;
    long skipped_updates = 0;
    long aborted_episodes = 0;
};

/// Orchestrates episodes of the selected tuner. Q-learning explores with
/// Gaussian noise around the MPC policy and updates once per environment
/// transition; policy search performs one perturbation step per episode.
/// Deterministic given (cfg.seed, theta0).
LearningTrace run_learning(const EnvStepFn& env_step, const MpcScheme& scheme,
                           const ThetaVector& theta0, const LearningConfig& cfg);

void write_trace_csv(const LearningTrace& trace, const std::string& path);

} // namespace mdpmpc

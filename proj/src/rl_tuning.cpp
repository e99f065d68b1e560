#include "mdpmpc/rl_tuning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "mdpmpc/errors.hpp"

namespace mdpmpc {

void LearningConfig::validate() const {
    if (learning_rate <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (discount <= 0.0 || discount > 1.0)
        throw std::invalid_argument("discount must lie in (0, 1]");
    if (episodes < 0 || steps_per_episode < 0)
        throw std::invalid_argument("episode counts must be nonnegative");
    if (exploration_std < 0.0) throw std::invalid_argument("exploration std must be nonnegative");
    if (eval_states.empty()) throw std::invalid_argument("eval states must be nonempty");
}

QLearningStepResult q_learning_step(const MpcScheme& scheme, const ThetaVector& theta,
                                    const Transition& transition, const LearningConfig& cfg) {
    QLearningStepResult out;
    out.theta = theta;
    try {
        // min over a' comes from the value program, which equals the
        // minimized action-value program up to solver tolerance.
        double q_sa = q_value(scheme, theta, transition.s, transition.a, cfg.solve_options);
        MpcSolution next = solve_value(scheme, theta, transition.s_next, cfg.solve_options);
        if (next.solver_status != SolverStatus::converged) {
            out.skipped = true;
            return out;
        }
        out.td_error = transition.cost + cfg.discount * next.objective - q_sa;
        if (cfg.learning_rate == 0.0) return out;
        ThetaGradient grad = theta_gradient(scheme, theta, transition.s, GradientTarget::q_value,
                                            transition.a, 1e-5, cfg.solve_options);
        for (int i = 0; i < out.theta.values.size(); ++i)
            if (grad.valid[i])
                out.theta.values(i) += cfg.learning_rate * out.td_error * grad.grad(i);
        out.theta.apply_pd_floor();
    } catch (const NonConvergence&) {
        out.theta = theta;
        out.skipped = true;
    }
    return out;
}

double closed_loop_cost(const EnvStepFn& env_step, const MpcScheme& scheme,
                        const ThetaVector& theta, const LearningConfig& cfg,
                        double* max_violation) {
    double total = 0.0;
    long count = 0;
    double viol = 0.0;
    for (std::size_t ei = 0; ei < cfg.eval_states.size(); ++ei) {
        for (int rep = 0; rep < cfg.rollout_repeats; ++rep) {
            // fixed seeds per (eval state, repeat): common random numbers
            Rng rng(Rng::mix(Rng::mix(cfg.seed, 0x726f6c6c6f757421ULL + ei), rep));
            Eigen::VectorXd warm;
            PolicyFn policy_fn = [&](const Eigen::VectorXd& s) {
                MpcSolveOptions opt = cfg.solve_options;
                if (warm.size() > 0) opt.warm_start = warm;
                MpcSolution sol = solve_value(scheme, theta, s, opt);
                warm = Eigen::VectorXd(sol.inputs.size());
                for (int k = 0; k < scheme.horizon; ++k)
                    warm.segment(k * scheme.input_dim, scheme.input_dim) = sol.inputs.col(k);
                return sol.first_input;
            };
            RolloutResult r = rollout(env_step, policy_fn, cfg.eval_states[ei],
                                      cfg.steps_per_episode, cfg.discount, rng);
            total += r.discounted_cost;
            ++count;
            if (cfg.violation_fn)
                for (int k = 0; k < r.trajectory.cols(); ++k)
                    viol = std::max(viol, cfg.violation_fn(r.trajectory.col(k)));
        }
    }
    if (max_violation) *max_violation = viol;
    return total / std::max<long>(count, 1);
}

PolicySearchStepResult policy_search_step(const EnvStepFn& env_step, const MpcScheme& scheme,
                                          const ThetaVector& theta, const LearningConfig& cfg,
                                          long step_index) {
    PolicySearchStepResult out;
    out.theta = theta;
    out.j_estimate = closed_loop_cost(env_step, scheme, theta, cfg, &out.violation);

    const int np = static_cast<int>(theta.values.size());
    Rng perturb(Rng::mix(Rng::mix(cfg.seed, 0x7370736121ULL), static_cast<std::uint64_t>(step_index)));
    Eigen::VectorXd delta(np);
    for (int i = 0; i < np; ++i) delta(i) = perturb.uniform() < 0.5 ? -1.0 : 1.0;

    Eigen::VectorXd scale(np);
    for (int i = 0; i < np; ++i)
        scale(i) = cfg.spsa_step * std::max(1.0, std::abs(theta.values(i)));

    ThetaVector plus = theta, minus = theta;
    plus.values += scale.cwiseProduct(delta);
    minus.values -= scale.cwiseProduct(delta);
    plus.apply_pd_floor();
    minus.apply_pd_floor();

    double j_plus = closed_loop_cost(env_step, scheme, plus, cfg, nullptr);
    double j_minus = closed_loop_cost(env_step, scheme, minus, cfg, nullptr);

    for (int i = 0; i < np; ++i) {
        double g = (j_plus - j_minus) / (2.0 * scale(i) * delta(i));
        out.theta.values(i) -= cfg.learning_rate * g;
    }
    out.theta.apply_pd_floor();
    return out;
}

LearningTrace run_learning(const EnvStepFn& env_step, const MpcScheme& scheme,
                           const ThetaVector& theta0, const LearningConfig& cfg) {
    cfg.validate();
    LearningTrace trace;
    trace.final_theta = theta0;
    if (cfg.episodes == 0) return trace;

    if (cfg.algorithm == LearningAlgorithm::policy_search) {
        ThetaVector theta = theta0;
        for (int step = 0; step < cfg.episodes; ++step) {
            PolicySearchStepResult r = policy_search_step(env_step, scheme, theta, cfg, step);
            trace.records.push_back({step, r.j_estimate, theta.values.norm(), r.violation});
            theta = r.theta;
        }
        trace.final_theta = theta;
        return trace;
    }

    ThetaVector theta = theta0;
    long global_step = 0;
    for (int ep = 0; ep < cfg.episodes; ++ep) {
        Eigen::VectorXd s = cfg.eval_states[ep % cfg.eval_states.size()];
        Rng noise(Rng::mix(Rng::mix(cfg.seed, 0x6578706c6f726521ULL), ep));
        for (int k = 0; k < cfg.steps_per_episode; ++k) {
            try {
                Eigen::VectorXd a = policy(scheme, theta, s, cfg.solve_options);
                for (int i = 0; i < a.size(); ++i) {
                    a(i) += noise.normal(0.0, cfg.exploration_std);
                    a(i) = std::clamp(a(i), scheme.input_lower(i), scheme.input_upper(i));
                }
                Rng step_rng = noise.split(0x656e76ULL + k);
                auto [s_next, cost] = env_step(s, a, step_rng);
                QLearningStepResult r = q_learning_step(scheme, theta, {s, a, cost, s_next}, cfg);
                if (r.skipped) ++trace.skipped_updates;
                theta = r.theta;
                double viol = cfg.violation_fn ? cfg.violation_fn(s_next) : 0.0;
                trace.records.push_back({global_step, r.td_error, theta.values.norm(), viol});
                s = s_next;
                ++global_step;
            } catch (const std::exception&) {
                ++trace.aborted_episodes;
                break;
            }
        }
    }
    trace.final_theta = theta;
    return trace;
}

void write_trace_csv(const LearningTrace& trace, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open trace file " + path);
    out << "step,j_or_td,theta_norm,violation\n";
    char buf[128];
    for (const auto& r : trace.records) {
        std::snprintf(buf, sizeof(buf), "%ld,%.17g,%.17g,%.17g\n", r.step, r.value, r.theta_norm,
                      r.violation);
        out << buf;
    }
}

} // namespace mdpmpc

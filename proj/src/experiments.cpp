#include "mdpmpc/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "mdpmpc/envs.hpp"
#include "mdpmpc/equivalence.hpp"
#include "mdpmpc/errors.hpp"
#include "mdpmpc/lqr.hpp"
#include "mdpmpc/mdp.hpp"
#include "mdpmpc/mpc.hpp"
#include "mdpmpc/rl_tuning.hpp"
#include "mdpmpc/rng.hpp"

namespace mdpmpc {

namespace {

using nlohmann::json;

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& context) {
    if (!obj.is_object()) throw ConfigError(context + " must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + context);
}

double get_or(const json& obj, const std::string& key, double def) {
    return obj.contains(key) ? obj.at(key).get<double>() : def;
}

long get_or(const json& obj, const std::string& key, long def) {
    return obj.contains(key) ? obj.at(key).get<long>() : def;
}

struct CheckList {
    json entries = json::array();
    bool all_pass = true;

    void add(const std::string& name, double value, double threshold, bool pass) {
        json e;
        e["name"] = name;
        e["value"] = value;
        e["threshold"] = threshold;
        e["pass"] = pass;
        entries.push_back(std::move(e));
        all_pass = all_pass && pass;
    }
    void add_upper(const std::string& name, double value, double threshold) {
        add(name, value, threshold, value <= threshold);
    }
};

struct CsvFile {
    std::string name;
    std::vector<std::string> columns;
    std::string body;

    void row(std::initializer_list<double> values) {
        bool first = true;
        for (double v : values) {
            if (!first) body += ',';
            body += fmt(v);
            first = false;
        }
        body += '\n';
    }
};

void write_outputs(const std::string& output_dir, const json& report,
                   const std::vector<CsvFile>& csvs) {
    std::filesystem::create_directories(output_dir);
    for (const auto& c : csvs) {
        std::ofstream out(std::filesystem::path(output_dir) / c.name, std::ios::binary);
        for (std::size_t i = 0; i < c.columns.size(); ++i)
            out << (i ? "," : "") << c.columns[i];
        out << '\n' << c.body;
    }
    std::ofstream out(std::filesystem::path(output_dir) / "report.json", std::ios::binary);
    out << report.dump(2) << '\n';
}

json file_manifest(const std::vector<CsvFile>& csvs) {
    json files;
    for (const auto& c : csvs) files[c.name] = {{"columns", c.columns}};
    return files;
}

// ---------------------------------------------------------------------------
// tabular-verify: random (real process, wrong model) pairs across discount
// factors and horizons, including the undiscounted gain-shifted path.
// ---------------------------------------------------------------------------

json run_tabular_verify(const json& cfg, const std::string& output_dir, std::ostream& log,
                        int* exit_code) {
    require_keys(cfg, {"experiment", "seed", "output_dir", "n_seeds", "n_states", "n_actions",
                       "gammas", "horizons", "include_undiscounted", "tolerances"},
                 "tabular-verify config");
    const std::uint64_t seed = static_cast<std::uint64_t>(get_or(cfg, "seed", 0L));
    const long n_seeds = get_or(cfg, "n_seeds", 100L);
    const int n_states = static_cast<int>(get_or(cfg, "n_states", 20L));
    const int n_actions = static_cast<int>(get_or(cfg, "n_actions", 5L));
    std::vector<double> gammas = cfg.contains("gammas")
                                     ? cfg.at("gammas").get<std::vector<double>>()
                                     : std::vector<double>{0.8, 0.95};
    std::vector<int> horizons = cfg.contains("horizons")
                                    ? cfg.at("horizons").get<std::vector<int>>()
                                    : std::vector<int>{0, 1, 2, 5};
    const bool include_undiscounted =
        cfg.contains("include_undiscounted") ? cfg.at("include_undiscounted").get<bool>() : false;
    json tol = cfg.contains("tolerances") ? cfg.at("tolerances") : json::object();
    require_keys(tol, {"value_gap", "q_gap", "tie_fraction"}, "tabular-verify tolerances");
    const double tol_value = get_or(tol, "value_gap", 1e-9);
    const double tol_q = get_or(tol, "q_gap", 1e-9);
    const double tol_tie = get_or(tol, "tie_fraction", 0.02);

    CsvFile csv{"pairs.csv",
                {"pair", "gamma", "value_gap", "q_gap", "policy_agreement", "tie_fraction"},
                ""};
    double worst_value = 0.0, worst_q = 0.0, worst_tie = 0.0, worst_agreement = 1.0;
    long pair_index = 0;
    for (long i = 0; i < n_seeds; ++i) {
        for (double gamma : gammas) {
            Rng rng(Rng::mix(Rng::mix(seed, i), static_cast<std::uint64_t>(gamma * 1e6)));
            TabularMdp real = random_mdp(rng, n_states, n_actions, gamma);
            ModelTransition model{n_states, n_actions, random_transition(rng, n_states, n_actions)};
            EquivalenceReport rep = verify_theorems(real, model, horizons, tol_value);
            csv.row({static_cast<double>(pair_index), gamma, rep.max_value_gap,
                     rep.max_q_gap_on_feasible, rep.policy_agreement, rep.tie_fraction});
            worst_value = std::max(worst_value, rep.max_value_gap);
            worst_q = std::max(worst_q, rep.max_q_gap_on_feasible);
            worst_tie = std::max(worst_tie, rep.tie_fraction);
            worst_agreement = std::min(worst_agreement, rep.policy_agreement);
            ++pair_index;
        }
        if (include_undiscounted) {
            Rng rng(Rng::mix(Rng::mix(seed, i), 0x756e64697363ULL));
            TabularMdp real = random_mdp(rng, n_states, n_actions, 0.95);
            AverageCostSolution avg = relative_value_iteration(real, 1e-11);
            TabularMdp shifted = shift_stage_cost(real, avg.gain);
            shifted.gamma = 1.0;
            ModelTransition model{n_states, n_actions, random_transition(rng, n_states, n_actions)};
            EquivalenceReport rep = verify_theorems(shifted, model, horizons, tol_value);
            csv.row({static_cast<double>(pair_index), 1.0, rep.max_value_gap,
                     rep.max_q_gap_on_feasible, rep.policy_agreement, rep.tie_fraction});
            worst_value = std::max(worst_value, rep.max_value_gap);
            worst_q = std::max(worst_q, rep.max_q_gap_on_feasible);
            worst_tie = std::max(worst_tie, rep.tie_fraction);
            worst_agreement = std::min(worst_agreement, rep.policy_agreement);
            ++pair_index;
        }
    }

    CheckList checks;
    checks.add_upper("max_value_gap", worst_value, tol_value);
    checks.add_upper("max_q_gap_on_feasible", worst_q, tol_q);
    checks.add("policy_agreement", worst_agreement, 1.0, worst_agreement >= 1.0);
    checks.add_upper("tie_fraction", worst_tie, tol_tie);

    json report;
    report["experiment"] = "tabular-verify";
    report["config_echo"] = cfg;
    report["results"] = {{"pairs", pair_index},
                         {"max_value_gap", worst_value},
                         {"max_q_gap_on_feasible", worst_q},
                         {"min_policy_agreement", worst_agreement},
                         {"max_tie_fraction", worst_tie}};
    report["checks"] = checks.entries;
    report["all_pass"] = checks.all_pass;
    report["files"] = file_manifest({csv});
    write_outputs(output_dir, report, {csv});
    log << "tabular-verify: " << pair_index << " pairs, max value gap " << worst_value
        << ", max q gap " << worst_q << "\n";
    *exit_code = checks.all_pass ? 0 : 1;
    return report;
}

// ---------------------------------------------------------------------------
// lqr-verify: scalar reference instance plus random perturbed-model problems.
// ---------------------------------------------------------------------------

json run_lqr_verify(const json& cfg, const std::string& output_dir, std::ostream& log,
                    int* exit_code) {
    require_keys(cfg, {"experiment", "seed", "output_dir", "n_random", "state_dim",
                       "perturbations", "gamma", "sigma_scale", "tolerances"},
                 "lqr-verify config");
    const std::uint64_t seed = static_cast<std::uint64_t>(get_or(cfg, "seed", 0L));
    const long n_random = get_or(cfg, "n_random", 20L);
    const int state_dim = static_cast<int>(get_or(cfg, "state_dim", 2L));
    const double gamma = get_or(cfg, "gamma", 0.9);
    const double sigma_scale = get_or(cfg, "sigma_scale", 0.01);
    std::vector<double> perturbations =
        cfg.contains("perturbations") ? cfg.at("perturbations").get<std::vector<double>>()
                                      : std::vector<double>{0.0, 0.05, 0.1, 0.2};
    json tol = cfg.contains("tolerances") ? cfg.at("tolerances") : json::object();
    require_keys(tol, {"gap", "scalar", "offset"}, "lqr-verify tolerances");
    const double tol_gap = get_or(tol, "gap", 1e-8);
    const double tol_scalar = get_or(tol, "scalar", 1e-9);
    const double tol_offset = get_or(tol, "offset", 1e-8);

    // scalar reference instance: the positive root of 0.9 s^2 - 0.8 s - 1 = 0
    LqrProblem scalar;
    scalar.a_mat = Eigen::MatrixXd::Ones(1, 1);
    scalar.b_mat = Eigen::MatrixXd::Ones(1, 1);
    scalar.cost_block = Eigen::MatrixXd::Identity(2, 2);
    scalar.sigma = Eigen::MatrixXd::Zero(1, 1);
    scalar.gamma = 0.9;
    RiccatiSolution ssol = solve_discounted_riccati(scalar);
    const double s_expected = (0.8 + std::sqrt(0.64 + 3.6)) / 1.8;
    const double k_expected = 0.9 * s_expected / (1.0 + 0.9 * s_expected);
    const double scalar_s_err = std::abs(ssol.s_mat(0, 0) - s_expected);
    const double scalar_k_err = std::abs(ssol.k_gain(0, 0) - k_expected);

    Eigen::MatrixXd model_a_scalar = Eigen::MatrixXd::Constant(1, 1, 0.8);
    Eigen::MatrixXd model_b_scalar = Eigen::MatrixXd::Constant(1, 1, 1.2);
    LqrEquivalenceReport scalar_rep = verify_lqr_equivalence(scalar, model_a_scalar,
                                                             model_b_scalar, tol_gap);

    LqrProblem noisy = scalar;
    noisy.sigma = Eigen::MatrixXd::Constant(1, 1, sigma_scale);
    LqrEquivalenceReport noisy_rep = verify_lqr_equivalence(noisy, model_a_scalar, model_b_scalar,
                                                            tol_gap);
    const double v_inf_expected = 0.9 / 0.1 * sigma_scale * ssol.s_mat(0, 0);

    CsvFile csv{"instances.csv", {"instance", "perturbation", "gap_s", "gap_k", "offset_error"},
                ""};
    double worst_s = std::max(scalar_rep.gap_s, noisy_rep.gap_s);
    double worst_k = std::max(scalar_rep.gap_k, noisy_rep.gap_k);
    double worst_offset = noisy_rep.max_offset_error;
    long idx = 0;
    for (long i = 0; i < n_random; ++i) {
        for (double pert : perturbations) {
            Rng rng(Rng::mix(Rng::mix(seed, i), static_cast<std::uint64_t>(pert * 1e6) + 17));
            LqrProblem p;
            p.gamma = gamma;
            p.a_mat = Eigen::MatrixXd(state_dim, state_dim);
            p.b_mat = Eigen::MatrixXd(state_dim, 1);
            for (int r = 0; r < state_dim; ++r) {
                for (int c = 0; c < state_dim; ++c) p.a_mat(r, c) = rng.uniform(-1.0, 1.0);
                p.b_mat(r, 0) = rng.uniform(-1.0, 1.0);
            }
            // keep the discounted problem comfortably solvable
            double spectral = p.a_mat.cwiseAbs().rowwise().sum().maxCoeff();
            if (spectral > 1.0) p.a_mat *= 0.95 / spectral;
            Eigen::MatrixXd w(state_dim + 1, state_dim + 1);
            for (int r = 0; r < state_dim + 1; ++r)
                for (int c = 0; c < state_dim + 1; ++c) w(r, c) = rng.uniform(-1.0, 1.0);
            p.cost_block = w * w.transpose() +
                           0.5 * Eigen::MatrixXd::Identity(state_dim + 1, state_dim + 1);
            p.sigma = sigma_scale * Eigen::MatrixXd::Identity(state_dim, state_dim);

            Eigen::MatrixXd da(state_dim, state_dim), db(state_dim, 1);
            for (int r = 0; r < state_dim; ++r) {
                for (int c = 0; c < state_dim; ++c) da(r, c) = rng.uniform(-1.0, 1.0);
                db(r, 0) = rng.uniform(-1.0, 1.0);
            }
            Eigen::MatrixXd model_a = p.a_mat + pert * da;
            Eigen::MatrixXd model_b = p.b_mat + pert * db;

            LqrEquivalenceReport rep = verify_lqr_equivalence(p, model_a, model_b, tol_gap);
            csv.row({static_cast<double>(idx), pert, rep.gap_s, rep.gap_k,
                     rep.max_offset_error});
            worst_s = std::max(worst_s, rep.gap_s);
            worst_k = std::max(worst_k, rep.gap_k);
            worst_offset = std::max(worst_offset, rep.max_offset_error);
            ++idx;
        }
    }

    CheckList checks;
    checks.add_upper("scalar_s_error", scalar_s_err, tol_scalar);
    checks.add_upper("scalar_k_error", scalar_k_err, tol_scalar);
    checks.add_upper("scalar_v_infinity_error",
                     std::abs(noisy_rep.v_infinity - v_inf_expected), tol_offset);
    checks.add_upper("max_gap_s", worst_s, tol_gap);
    checks.add_upper("max_gap_k", worst_k, tol_gap);
    checks.add_upper("max_offset_error", worst_offset, tol_offset);

    json report;
    report["experiment"] = "lqr-verify";
    report["config_echo"] = cfg;
    report["results"] = {{"scalar_s", ssol.s_mat(0, 0)},
                         {"scalar_k", ssol.k_gain(0, 0)},
                         {"scalar_v_infinity", noisy_rep.v_infinity},
                         {"max_gap_s", worst_s},
                         {"max_gap_k", worst_k},
                         {"max_offset_error", worst_offset}};
    report["checks"] = checks.entries;
    report["all_pass"] = checks.all_pass;
    report["files"] = file_manifest({csv});
    write_outputs(output_dir, report, {csv});
    log << "lqr-verify: scalar S " << ssol.s_mat(0, 0) << ", max gap_s " << worst_s
        << ", max gap_k " << worst_k << "\n";
    *exit_code = checks.all_pass ? 0 : 1;
    return report;
}

// ---------------------------------------------------------------------------
// investment: closed form against the wrong-model finite-horizon program on a
// log-spaced state grid.
// ---------------------------------------------------------------------------

json run_investment(const json& cfg, const std::string& output_dir, std::ostream& log,
                    int* exit_code) {
    require_keys(cfg, {"experiment", "seed", "output_dir", "a_const", "alpha", "gamma", "model_mu",
                       "horizon", "grid_min", "grid_max", "grid_points", "tolerances"},
                 "investment config");
    InvestmentProblem p;
    p.a_const = get_or(cfg, "a_const", 5.0);
    p.alpha = get_or(cfg, "alpha", 0.34);
    p.gamma = get_or(cfg, "gamma", 0.9);
    p.model_mu = get_or(cfg, "model_mu", 0.8);
    p.validate();
    const int horizon = static_cast<int>(get_or(cfg, "horizon", 10L));
    const double grid_min = get_or(cfg, "grid_min", 0.2);
    const double grid_max = get_or(cfg, "grid_max", 10.0);
    const int grid_points = static_cast<int>(get_or(cfg, "grid_points", 200L));
    json tol = cfg.contains("tolerances") ? cfg.at("tolerances") : json::object();
    require_keys(tol, {"sup_gap"}, "investment tolerances");
    const double tol_gap = get_or(tol, "sup_gap", 1e-4);

    CsvFile values{"value_functions.csv", {"s", "v_star", "v_hat"}, ""};
    CsvFile policies{"policy_functions.csv", {"s", "pi_star", "pi_hat"}, ""};
    double sup_v = 0.0, sup_pi = 0.0;
    for (int i = 0; i < grid_points; ++i) {
        double t = grid_points == 1 ? 0.0 : static_cast<double>(i) / (grid_points - 1);
        double s = grid_min * std::pow(grid_max / grid_min, t);
        auto [v_star, pi_star] = investment_closed_form(p, s);
        InvestmentMpcResult r = investment_mpc_value(p, horizon, s);
        values.row({s, v_star, r.v_hat});
        policies.row({s, pi_star, r.pi_hat});
        sup_v = std::max(sup_v, std::abs(r.v_hat - v_star));
        sup_pi = std::max(sup_pi, std::abs(r.pi_hat - pi_star));
    }

    CheckList checks;
    checks.add_upper("sup_value_gap", sup_v, tol_gap);
    checks.add_upper("sup_policy_gap", sup_pi, tol_gap);

    json report;
    report["experiment"] = "investment";
    report["config_echo"] = cfg;
    report["results"] = {{"sup_value_gap", sup_v}, {"sup_policy_gap", sup_pi}};
    report["checks"] = checks.entries;
    report["all_pass"] = checks.all_pass;
    report["files"] = file_manifest({values, policies});
    write_outputs(output_dir, report, {values, policies});
    log << "investment: sup value gap " << sup_v << ", sup policy gap " << sup_pi << "\n";
    *exit_code = checks.all_pass ? 0 : 1;
    return report;
}

// ---------------------------------------------------------------------------
// pendulum-dp: interpolated value-iteration baseline, optional refinement
// self-check.
// ---------------------------------------------------------------------------

GridSpec grid_spec_from_json(const json& g) {
    require_keys(g, {"n1", "n2", "n_actions", "quadrature_order", "boundary_penalty"},
                 "grid spec");
    GridSpec spec;
    spec.n1 = static_cast<int>(get_or(g, "n1", 41L));
    spec.n2 = static_cast<int>(get_or(g, "n2", 41L));
    spec.n_actions = static_cast<int>(get_or(g, "n_actions", 17L));
    spec.quadrature_order = static_cast<int>(get_or(g, "quadrature_order", 5L));
    spec.boundary_penalty = get_or(g, "boundary_penalty", 100.0);
    return spec;
}

json run_pendulum_dp(const json& cfg, const std::string& output_dir, std::ostream& log,
                     int* exit_code) {
    require_keys(cfg, {"experiment", "seed", "output_dir", "grid", "dp_tol", "refine_check",
                       "tolerances"},
                 "pendulum-dp config");
    GridSpec spec =
        cfg.contains("grid") ? grid_spec_from_json(cfg.at("grid")) : GridSpec{};
    const double dp_tol = get_or(cfg, "dp_tol", 1e-6);
    const bool refine = cfg.contains("refine_check") ? cfg.at("refine_check").get<bool>() : false;
    json tol = cfg.contains("tolerances") ? cfg.at("tolerances") : json::object();
    require_keys(tol, {"residual", "self_convergence"}, "pendulum-dp tolerances");
    const double tol_res = get_or(tol, "residual", 1e-6);
    const double tol_self = get_or(tol, "self_convergence", 0.05);

    PendulumEnv env;
    GridDpBaseline dp = pendulum_dp(env, spec, dp_tol);

    CsvFile csv{"dp_grid.csv", {"s1", "s2", "v", "pi"}, ""};
    for (int i1 = 0; i1 < spec.n1; ++i1)
        for (int i2 = 0; i2 < spec.n2; ++i2)
            csv.row({dp.grid1[i1], dp.grid2[i2], dp.v_grid[dp.node_index(i1, i2)],
                     dp.policy_value(i1, i2)});

    CheckList checks;
    checks.add_upper("bellman_residual", dp.residual, tol_res);

    double max_rel_change = 0.0;
    if (refine) {
        GridSpec fine = spec;
        fine.n1 = 2 * spec.n1 - 1;
        fine.n2 = 2 * spec.n2 - 1;
        GridDpBaseline dp_fine = pendulum_dp(env, fine, dp_tol);
        for (double x : {-0.8, -0.5, -0.3, 0.3, 0.8})
            for (double y : {-0.8, -0.4, 0.0, 0.4, 0.8}) {
                Eigen::Vector2d s(x, y);
                double v0 = dp.value_at(s);
                double v1 = dp_fine.value_at(s);
                max_rel_change =
                    std::max(max_rel_change, std::abs(v1 - v0) / std::max(std::abs(v0), 1e-3));
            }
        checks.add_upper("self_convergence", max_rel_change, tol_self);
    }

    json report;
    report["experiment"] = "pendulum-dp";
    report["config_echo"] = cfg;
    report["results"] = {{"bellman_residual", dp.residual},
                         {"value_at_origin", dp.value_at(Eigen::Vector2d::Zero())},
                         {"self_convergence", refine ? json(max_rel_change) : json(nullptr)}};
    report["checks"] = checks.entries;
    report["all_pass"] = checks.all_pass;
    report["files"] = file_manifest({csv});
    write_outputs(output_dir, report, {csv});
    log << "pendulum-dp: residual " << dp.residual << "\n";
    *exit_code = checks.all_pass ? 0 : 1;
    return report;
}

// ---------------------------------------------------------------------------
// pendulum-learn: tune the parameterized scheme against the stochastic
// pendulum; gaps are measured against the grid baseline at probe nodes.
// ---------------------------------------------------------------------------

struct GapPair {
    double value_gap = 0.0;
    double policy_gap = 0.0;
};

GapPair pendulum_gaps(const GridDpBaseline& dp, const MpcScheme& scheme, const ThetaVector& theta,
                      const std::vector<std::pair<int, int>>& probes,
                      const MpcSolveOptions& options) {
    GapPair g;
    for (auto [i1, i2] : probes) {
        Eigen::VectorXd s(2);
        s << dp.grid1[i1], dp.grid2[i2];
        MpcSolution sol = solve_value(scheme, theta, s, options);
        double v_dp = dp.v_grid[dp.node_index(i1, i2)];
        double pi_dp = dp.policy_value(i1, i2);
        g.value_gap = std::max(g.value_gap, std::abs(sol.objective - v_dp));
        g.policy_gap = std::max(g.policy_gap, std::abs(sol.first_input(0) - pi_dp));
    }
    return g;
}

json run_pendulum_learn(const json& cfg, const std::string& output_dir, std::ostream& log,
                        int* exit_code) {
    require_keys(cfg, {"experiment", "seed", "output_dir", "horizon", "algorithms", "steps",
                       "q_learning_rate", "policy_search_rate", "exploration_std", "spsa_step",
                       "eval_states", "grid", "dp_tol", "window", "tolerances"},
                 "pendulum-learn config");
    const std::uint64_t seed = static_cast<std::uint64_t>(get_or(cfg, "seed", 0L));
    const int horizon = static_cast<int>(get_or(cfg, "horizon", 10L));
    const long steps = get_or(cfg, "steps", 500L);
    const double q_lr = get_or(cfg, "q_learning_rate", 1e-3);
    const double ps_lr = get_or(cfg, "policy_search_rate", 5e-3);
    const double expl = get_or(cfg, "exploration_std", 0.2);
    const double spsa = get_or(cfg, "spsa_step", 0.05);
    const long window = get_or(cfg, "window", 50L);
    std::vector<std::string> algorithms =
        cfg.contains("algorithms") ? cfg.at("algorithms").get<std::vector<std::string>>()
                                   : std::vector<std::string>{"q_learning", "policy_search"};
    for (const auto& a : algorithms)
        if (a != "q_learning" && a != "policy_search")
            throw ConfigError("unknown algorithm '" + a + "'");
    GridSpec spec = cfg.contains("grid") ? grid_spec_from_json(cfg.at("grid")) : GridSpec{};
    const double dp_tol = get_or(cfg, "dp_tol", 1e-6);
    json tol = cfg.contains("tolerances") ? cfg.at("tolerances") : json::object();
    require_keys(tol, {}, "pendulum-learn tolerances");

    PendulumEnv env;
    log << "pendulum-learn: solving the grid baseline...\n";
    GridDpBaseline dp = pendulum_dp(env, spec, dp_tol);

    MpcScheme scheme = make_pendulum_mpc_scheme(env, horizon);
    ThetaVector theta0 = initial_pendulum_theta();

    std::vector<Eigen::VectorXd> eval_states;
    if (cfg.contains("eval_states")) {
        for (const auto& row : cfg.at("eval_states")) {
            Eigen::VectorXd s(2);
            s << row.at(0).get<double>(), row.at(1).get<double>();
            eval_states.push_back(s);
        }
    } else {
        for (double x : {-0.6, -0.3, 0.3, 0.6}) {
            Eigen::VectorXd s(2);
            s << x, 0.0;
            eval_states.push_back(s);
        }
    }

    // probe nodes for the value/policy gap metrics (interior grid points)
    std::vector<std::pair<int, int>> probes;
    for (int f1 = 1; f1 <= 5; ++f1)
        for (int f2 = 1; f2 <= 5; ++f2)
            probes.push_back({f1 * (spec.n1 - 1) / 6, f2 * (spec.n2 - 1) / 6});

    EnvStepFn env_step = [&env](const Eigen::VectorXd& s, const Eigen::VectorXd& a,
                                Rng& rng) -> std::pair<Eigen::VectorXd, double> {
        auto [s_next, cost] = pendulum_step(env, Eigen::Vector2d(s(0), s(1)), a(0), rng);
        return {Eigen::VectorXd(s_next), cost};
    };

    LearningConfig base_cfg;
    base_cfg.discount = env.gamma;
    base_cfg.seed = seed;
    base_cfg.eval_states = eval_states;
    base_cfg.exploration_std = expl;
    base_cfg.spsa_step = spsa;
    base_cfg.solve_options.random_starts = 0; // convex in the inputs: zeros + warm suffice
    base_cfg.violation_fn = [&env](const Eigen::VectorXd& s) {
        return std::max(0.0, s.cwiseAbs().maxCoeff() - env.state_box);
    };

    MpcSolveOptions probe_options = base_cfg.solve_options;
    GapPair gaps0 = pendulum_gaps(dp, scheme, theta0, probes, probe_options);

    CheckList checks;
    json results;
    results["value_gap_initial"] = gaps0.value_gap;
    results["policy_gap_initial"] = gaps0.policy_gap;
    std::vector<CsvFile> csvs;

    for (const std::string& algo : algorithms) {
        LearningConfig lc = base_cfg;
        if (algo == "q_learning") {
            lc.algorithm = LearningAlgorithm::q_learning;
            lc.learning_rate = q_lr;
            lc.steps_per_episode = 20;
            lc.episodes = static_cast<int>((steps + lc.steps_per_episode - 1) /
                                           lc.steps_per_episode);
        } else {
            lc.algorithm = LearningAlgorithm::policy_search;
            lc.learning_rate = ps_lr;
            lc.steps_per_episode = 15;
            lc.episodes = static_cast<int>(steps);
        }
        log << "pendulum-learn: running " << algo << " for "
            << (algo == "q_learning" ? steps : static_cast<long>(lc.episodes)) << " steps...\n";
        LearningTrace trace = run_learning(env_step, scheme, theta0, lc);

        CsvFile trace_csv{algo + "_trace.csv", {"step", "j_or_td", "theta_norm", "violation"}, ""};
        for (const auto& r : trace.records)
            trace_csv.row({static_cast<double>(r.step), r.value, r.theta_norm, r.violation});
        csvs.push_back(trace_csv);

        GapPair gaps1 = pendulum_gaps(dp, scheme, trace.final_theta, probes, probe_options);
        results[algo + "_value_gap_final"] = gaps1.value_gap;
        results[algo + "_policy_gap_final"] = gaps1.policy_gap;
        results[algo + "_skipped_updates"] = trace.skipped_updates;
        results[algo + "_aborted_episodes"] = trace.aborted_episodes;

        if (algo == "q_learning") {
            checks.add("q_learning_value_gap_reduced", gaps1.value_gap, gaps0.value_gap,
                       gaps1.value_gap < gaps0.value_gap);
            checks.add("q_learning_policy_gap_reduced", gaps1.policy_gap, gaps0.policy_gap,
                       gaps1.policy_gap < gaps0.policy_gap);
        } else {
            const long n = static_cast<long>(trace.records.size());
            const long w = std::min(window, n / 2);
            double first = 0.0, last = 0.0;
            for (long i = 0; i < w; ++i) first += trace.records[i].value;
            for (long i = n - w; i < n; ++i) last += trace.records[i].value;
            first /= std::max<long>(w, 1);
            last /= std::max<long>(w, 1);
            results["policy_search_first_window_cost"] = first;
            results["policy_search_last_window_cost"] = last;
            checks.add("closed_loop_cost_window_decreases", last, first, last < first);
        }
    }

    json report;
    report["experiment"] = "pendulum-learn";
    report["config_echo"] = cfg;
    report["results"] = results;
    report["checks"] = checks.entries;
    report["all_pass"] = checks.all_pass;
    report["files"] = file_manifest(csvs);
    write_outputs(output_dir, report, csvs);
    log << "pendulum-learn: done\n";
    *exit_code = checks.all_pass ? 0 : 1;
    return report;
}

} // namespace

RunOutcome run_experiment(const json& config, const std::string& output_dir, std::ostream& log) {
    if (!config.is_object()) throw ConfigError("config must be a JSON object");
    if (!config.contains("experiment")) throw ConfigError("config is missing 'experiment'");
    const std::string kind = config.at("experiment").get<std::string>();

    RunOutcome outcome;
    if (kind == "tabular-verify")
        outcome.report = run_tabular_verify(config, output_dir, log, &outcome.exit_code);
    else if (kind == "lqr-verify")
        outcome.report = run_lqr_verify(config, output_dir, log, &outcome.exit_code);
    else if (kind == "investment")
        outcome.report = run_investment(config, output_dir, log, &outcome.exit_code);
    else if (kind == "pendulum-dp")
        outcome.report = run_pendulum_dp(config, output_dir, log, &outcome.exit_code);
    else if (kind == "pendulum-learn")
        outcome.report = run_pendulum_learn(config, output_dir, log, &outcome.exit_code);
    else
        throw ConfigError("unknown experiment '" + kind + "'");
    return outcome;
}

namespace {

void diff_walk(const json& a, const json& b, double tol, const std::string& path,
               std::vector<std::string>& out) {
    if (a.type() != b.type()) {
        if (!(a.is_number() && b.is_number()))
            throw SchemaMismatch("type mismatch at " + path);
    }
    if (a.is_object()) {
        for (auto it = a.begin(); it != a.end(); ++it) {
            if (!b.contains(it.key())) throw SchemaMismatch("missing key " + path + "/" + it.key());
            diff_walk(it.value(), b.at(it.key()), tol, path + "/" + it.key(), out);
        }
        for (auto it = b.begin(); it != b.end(); ++it)
            if (!a.contains(it.key())) throw SchemaMismatch("extra key " + path + "/" + it.key());
        return;
    }
    if (a.is_array()) {
        if (a.size() != b.size()) throw SchemaMismatch("array length mismatch at " + path);
        for (std::size_t i = 0; i < a.size(); ++i)
            diff_walk(a.at(i), b.at(i), tol, path + "/" + std::to_string(i), out);
        return;
    }
    if (a.is_number() && b.is_number()) {
        double x = a.get<double>(), y = b.get<double>();
        if (std::abs(x - y) > tol)
            out.push_back(path + ": " + fmt(x) + " vs " + fmt(y));
        return;
    }
    if (a != b) out.push_back(path + ": " + a.dump() + " vs " + b.dump());
}

} // namespace

std::string report_diff(const json& a, const json& b, double tol) {
    std::vector<std::string> lines;
    diff_walk(a, b, tol, "", lines);
    if (lines.empty()) return "no differences";
    std::ostringstream out;
    out << lines.size() << " difference(s):\n";
    for (const auto& l : lines) out << "  " << l << "\n";
    return out.str();
}

} // namespace mdpmpc

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json_fwd.hpp>

namespace mdpmpc {

/// Flat parameter vector with a named-slice layout. Slices with pd_dim > 0
/// pack the lower triangle (row-major) of a Cholesky-like factor whose
/// diagonal is floored at 1e-6, so reconstructed matrices stay positive
/// definite under unconstrained updates.
struct ThetaSlice {
    std::string name;
    int offset = 0;
    int size = 0;
    int pd_dim = 0;
};

struct ThetaLayout {
    std::vector<ThetaSlice> slices;
    int total_size() const;
    const ThetaSlice& at(const std::string& name) const;
    static int packed_size(int dim) { return dim * (dim + 1) / 2; }
};

struct ThetaVector {
    Eigen::VectorXd values;
    ThetaLayout layout;

    Eigen::VectorXd slice(const std::string& name) const;
    void set_slice(const std::string& name, const Eigen::VectorXd& v);
    double scalar(const std::string& name) const;

    /// Reconstructs L * L' from a pd slice, flooring factor diagonals.
    Eigen::MatrixXd pd_matrix(const std::string& name) const;
    /// Packs the Cholesky factor of a PD matrix into a pd slice.
    void set_pd_matrix(const std::string& name, const Eigen::MatrixXd& m);
    /// Clamps every stored pd-factor diagonal entry up to the floor.
    void apply_pd_floor();
};

ThetaVector make_theta(const ThetaLayout& layout);

/// Soft-constrained finite-horizon program on a deterministic parametric
/// model. Constraint maps are satisfied when <= 0; violations enter the cost
/// through exact linear slack penalties with weights mu / mu_f. Null
/// constraint or storage functions mean "absent".
struct MpcScheme {
    int horizon = 1;
    int state_dim = 1;
    int input_dim = 1;
    std::function<Eigen::VectorXd(const ThetaVector&, const Eigen::VectorXd&,
                                  const Eigen::VectorXd&)>
        model;
    std::function<double(const ThetaVector&, const Eigen::VectorXd&, const Eigen::VectorXd&)>
        stage_cost;
    std::function<double(const ThetaVector&, const Eigen::VectorXd&)> terminal_cost;
    std::function<double(const ThetaVector&, const Eigen::VectorXd&)> storage;
    std::function<Eigen::VectorXd(const ThetaVector&, const Eigen::VectorXd&,
                                  const Eigen::VectorXd&)>
        path_constraint;
    std::function<Eigen::VectorXd(const ThetaVector&, const Eigen::VectorXd&)> terminal_constraint;
    Eigen::VectorXd input_lower;
    Eigen::VectorXd input_upper;
    Eigen::VectorXd slack_weight;          // mu > 0
    Eigen::VectorXd terminal_slack_weight; // mu_f > 0

    // set by the built-in factories so schemes can round-trip through JSON
    std::string kind = "custom";
    std::string params_json = "{}";

    void validate() const;
};

enum class SolverStatus { converged, max_iter, infeasible_box };

struct MpcSolution {
    Eigen::MatrixXd states;              // state_dim x (N+1)
    Eigen::MatrixXd inputs;              // input_dim x N
    std::vector<Eigen::VectorXd> slacks; // N path slack vectors then the terminal one
    double objective = 0.0;              // includes the -storage(s0) term
    Eigen::VectorXd first_input;
    SolverStatus solver_status = SolverStatus::converged;
    double stationarity_residual = 0.0;
};

struct MpcSolveOptions {
    long max_iter = 400;
    double tol = 1e-9;             // projected-stationarity target
    double status_tol = 1e-7;      // residual below which the run counts as converged
    std::uint64_t seed = 0;        // multistart sampling
    int random_starts = 3;
    bool warm_start_only = false;  // restrict to the provided warm start
    double fd_step = 1e-4;         // relative central-difference step over inputs
    double softplus_sharpness = 1e4;
    std::optional<Eigen::VectorXd> warm_start; // stacked inputs, input_dim * N
    std::string trace_csv;         // per-iteration dump when nonempty
};

/// Minimizes the soft-constrained shooting objective over the stacked input
/// sequence (projected BFGS, multistart). The storage term never enters the
/// search; it is added to the reported objective afterwards, so storage
/// changes cannot perturb the optimizer path.
MpcSolution solve_value(const MpcScheme& scheme, const ThetaVector& theta,
                        const Eigen::VectorXd& s, const MpcSolveOptions& options = {});

Eigen::VectorXd policy(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s,
                       const MpcSolveOptions& options = {});

/// Same program with the first input pinned to `a`.
double q_value(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s,
               const Eigen::VectorXd& a, const MpcSolveOptions& options = {});

enum class GradientTarget { value, q_value };

struct ThetaGradient {
    Eigen::VectorXd grad;
    std::vector<char> valid; // per-entry; false when a perturbed solve failed
};

/// Central finite differences of the chosen objective with respect to theta,
/// step scaled per entry by max(1, |theta_i|) * step; perturbed problems are
/// re-solved warm-started from the base solution.
ThetaGradient theta_gradient(const MpcScheme& scheme, const ThetaVector& theta,
                             const Eigen::VectorXd& s, GradientTarget target,
                             const Eigen::VectorXd& a = {}, double step = 1e-5,
                             const MpcSolveOptions& options = {});

/// Fixed (theta-independent) linear-quadratic scheme: dynamics s+ = A s + B a,
/// stage cost [s;a]' stage_block [s;a], terminal cost s' terminal s, no
/// constraints beyond the input box.
MpcScheme make_lq_scheme(const Eigen::MatrixXd& a_mat, const Eigen::MatrixXd& b_mat,
                         const Eigen::MatrixXd& stage_block, const Eigen::MatrixXd& terminal,
                         int horizon, double input_box_halfwidth);

nlohmann::json scheme_to_json(const MpcScheme& scheme);
MpcScheme scheme_from_json(const nlohmann::json& j);
nlohmann::json theta_to_json(const ThetaVector& theta);
ThetaVector theta_from_json(const nlohmann::json& j);

} // namespace mdpmpc

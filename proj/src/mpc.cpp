#include "mdpmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "mdpmpc/errors.hpp"
#include "mdpmpc/json_util.hpp"
#include "mdpmpc/rng.hpp"

namespace mdpmpc {

namespace {

constexpr double kPdFloor = 1e-6;
constexpr double kInfty = std::numeric_limits<double>::infinity();

double softplus(double x, double beta) {
    // max(x, 0) + log1p(exp(-beta*|x|)) / beta, stable for large |x|
    return std::max(x, 0.0) + std::log1p(std::exp(-beta * std::abs(x))) / beta;
}

} // namespace

int ThetaLayout::total_size() const {
    int total = 0;
    for (const auto& s : slices) total += s.size;
    return total;
}

const ThetaSlice& ThetaLayout::at(const std::string& name) const {
    for (const auto& s : slices)
        if (s.name == name) return s;
    throw std::invalid_argument("unknown theta slice: " + name);
}

Eigen::VectorXd ThetaVector::slice(const std::string& name) const {
    const ThetaSlice& s = layout.at(name);
    return values.segment(s.offset, s.size);
}

void ThetaVector::set_slice(const std::string& name, const Eigen::VectorXd& v) {
    const ThetaSlice& s = layout.at(name);
    if (v.size() != s.size) throw ShapeMismatch("slice size mismatch for " + name);
    values.segment(s.offset, s.size) = v;
}

double ThetaVector::scalar(const std::string& name) const {
    const ThetaSlice& s = layout.at(name);
    if (s.size != 1) throw ShapeMismatch("slice " + name + " is not scalar");
    return values(s.offset);
}

Eigen::MatrixXd ThetaVector::pd_matrix(const std::string& name) const {
    const ThetaSlice& s = layout.at(name);
    if (s.pd_dim <= 0) throw std::invalid_argument("slice " + name + " is not a pd factor");
    const int d = s.pd_dim;
    Eigen::MatrixXd l = Eigen::MatrixXd::Zero(d, d);
    int idx = s.offset;
    for (int i = 0; i < d; ++i)
        for (int j = 0; j <= i; ++j) {
            double v = values(idx++);
            l(i, j) = (i == j) ? std::max(v, kPdFloor) : v;
        }
    return l * l.transpose();
}

void ThetaVector::set_pd_matrix(const std::string& name, const Eigen::MatrixXd& m) {
    const ThetaSlice& s = layout.at(name);
    if (s.pd_dim <= 0) throw std::invalid_argument("slice " + name + " is not a pd factor");
    if (m.rows() != s.pd_dim || m.cols() != s.pd_dim)
        throw ShapeMismatch("matrix size mismatch for " + name);
    Eigen::LLT<Eigen::MatrixXd> llt(m);
    if (llt.info() != Eigen::Success)
        throw std::invalid_argument("matrix for " + name + " is not positive definite");
    Eigen::MatrixXd l = llt.matrixL();
    int idx = s.offset;
    for (int i = 0; i < s.pd_dim; ++i)
        for (int j = 0; j <= i; ++j) values(idx++) = l(i, j);
}

void ThetaVector::apply_pd_floor() {
    for (const auto& s : layout.slices) {
        if (s.pd_dim <= 0) continue;
        int idx = s.offset;
        for (int i = 0; i < s.pd_dim; ++i)
            for (int j = 0; j <= i; ++j) {
                if (i == j) values(idx) = std::max(values(idx), kPdFloor);
                ++idx;
            }
    }
}

ThetaVector make_theta(const ThetaLayout& layout) {
    ThetaVector t;
    t.layout = layout;
    int offset = 0;
    for (ThetaSlice& s : t.layout.slices) {
        s.offset = offset;
        offset += s.size;
    }
    t.values = Eigen::VectorXd::Zero(offset);
    return t;
}

void MpcScheme::validate() const {
    if (horizon < 1) throw std::invalid_argument("horizon must be at least 1");
    if (state_dim < 1 || input_dim < 1) throw std::invalid_argument("dimensions must be positive");
    if (!model || !stage_cost || !terminal_cost)
        throw std::invalid_argument("model, stage cost and terminal cost are required");
    if (input_lower.size() != input_dim || input_upper.size() != input_dim)
        throw ShapeMismatch("input box size mismatch");
    if (!input_lower.allFinite() || !input_upper.allFinite())
        throw std::invalid_argument("input box bounds must be finite");
    if (path_constraint && (slack_weight.size() == 0 || slack_weight.minCoeff() <= 0.0))
        throw std::invalid_argument("path slack weights must be strictly positive");
    if (terminal_constraint &&
        (terminal_slack_weight.size() == 0 || terminal_slack_weight.minCoeff() <= 0.0))
        throw std::invalid_argument("terminal slack weights must be strictly positive");
}

namespace {

// Shooting objective over a stacked input sequence. `fixed_head` pins the
// first input (action-value programs); decision variables then cover inputs
// 1..N-1. The storage term is deliberately excluded.
class ShootingObjective {
  public:
    ShootingObjective(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s0,
                      std::optional<Eigen::VectorXd> fixed_head, double beta)
        : scheme_(scheme), theta_(theta), s0_(s0), fixed_head_(std::move(fixed_head)),
          beta_(beta) {}

    int n_free_inputs() const {
        return fixed_head_ ? scheme_.horizon - 1 : scheme_.horizon;
    }
    int n_vars() const { return n_free_inputs() * scheme_.input_dim; }

    Eigen::VectorXd input_at(const Eigen::VectorXd& x, int k) const {
        if (fixed_head_) {
            if (k == 0) return *fixed_head_;
            return x.segment((k - 1) * scheme_.input_dim, scheme_.input_dim);
        }
        return x.segment(k * scheme_.input_dim, scheme_.input_dim);
    }

    // Core objective without storage; smooth == true replaces the slack kink
    // by a softplus (line searches only).
    double eval(const Eigen::VectorXd& x, bool smooth) const {
        Eigen::VectorXd s = s0_;
        double acc = 0.0;
        for (int k = 0; k < scheme_.horizon; ++k) {
            Eigen::VectorXd a = input_at(x, k);
            acc += scheme_.stage_cost(theta_, s, a);
            if (scheme_.path_constraint) {
                Eigen::VectorXd h = scheme_.path_constraint(theta_, s, a);
                for (int i = 0; i < h.size(); ++i)
                    acc += scheme_.slack_weight(i) *
                           (smooth ? softplus(h(i), beta_) : std::max(h(i), 0.0));
            }
            s = scheme_.model(theta_, s, a);
            if (!s.allFinite()) return kInfty;
        }
        acc += scheme_.terminal_cost(theta_, s);
        if (scheme_.terminal_constraint) {
            Eigen::VectorXd h = scheme_.terminal_constraint(theta_, s);
            for (int i = 0; i < h.size(); ++i)
                acc += scheme_.terminal_slack_weight(i) *
                       (smooth ? softplus(h(i), beta_) : std::max(h(i), 0.0));
        }
        return std::isfinite(acc) ? acc : kInfty;
    }

    Eigen::VectorXd gradient(const Eigen::VectorXd& x, double rel_step) const {
        Eigen::VectorXd g(x.size());
        Eigen::VectorXd xp = x;
        for (int i = 0; i < x.size(); ++i) {
            double h = rel_step * std::max(1.0, std::abs(x(i)));
            xp(i) = x(i) + h;
            double fp = eval(xp, true);
            xp(i) = x(i) - h;
            double fm = eval(xp, true);
            xp(i) = x(i);
            if (std::isfinite(fp) && std::isfinite(fm)) {
                g(i) = (fp - fm) / (2.0 * h);
            } else if (std::isfinite(fm)) {
                g(i) = (eval(x, true) - fm) / h;
            } else if (std::isfinite(fp)) {
                g(i) = (fp - eval(x, true)) / h;
            } else {
                g(i) = 0.0;
            }
        }
        return g;
    }

    // Box bounds replicated over the free inputs.
    Eigen::VectorXd lower() const { return replicate(scheme_.input_lower); }
    Eigen::VectorXd upper() const { return replicate(scheme_.input_upper); }

  private:
    Eigen::VectorXd replicate(const Eigen::VectorXd& b) const {
        Eigen::VectorXd out(n_vars());
        for (int k = 0; k < n_free_inputs(); ++k) out.segment(k * b.size(), b.size()) = b;
        return out;
    }

    const MpcScheme& scheme_;
    const ThetaVector& theta_;
    Eigen::VectorXd s0_;
    std::optional<Eigen::VectorXd> fixed_head_;
    double beta_;
};

Eigen::VectorXd clamp_box(const Eigen::VectorXd& x, const Eigen::VectorXd& lo,
                          const Eigen::VectorXd& hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
}

struct LocalSolveResult {
    Eigen::VectorXd x;
    double f_exact = kInfty;
    double residual = kInfty;
    bool finite = false;
};

// Projected BFGS with backtracking on the softplus-smoothed objective.
LocalSolveResult minimize_projected(const ShootingObjective& obj, Eigen::VectorXd x,
                                    const MpcSolveOptions& options, std::ofstream* trace,
                                    int start_index) {
    const Eigen::VectorXd lo = obj.lower();
    const Eigen::VectorXd hi = obj.upper();
    x = clamp_box(x, lo, hi);
    const int n = static_cast<int>(x.size());

    LocalSolveResult res;
    if (n == 0) {
        res.x = x;
        res.f_exact = obj.eval(x, false);
        res.residual = 0.0;
        res.finite = std::isfinite(res.f_exact);
        return res;
    }

    double f = obj.eval(x, true);
    if (!std::isfinite(f)) return res;
    Eigen::VectorXd g = obj.gradient(x, options.fd_step);
    Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(n, n);

    double residual = (x - clamp_box(x - g, lo, hi)).cwiseAbs().maxCoeff();
    for (long it = 0; it < options.max_iter && residual > options.tol; ++it) {
        if (trace && trace->is_open())
            (*trace) << start_index << ',' << it << ',' << f << ',' << residual << '\n';
        Eigen::VectorXd d = -(h_inv * g);
        if (d.dot(g) > -1e-14 * d.norm() * g.norm()) {
            d = -g;
            h_inv.setIdentity();
        }
        double alpha = 1.0;
        Eigen::VectorXd x_new;
        double f_new = kInfty;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            x_new = clamp_box(x + alpha * d, lo, hi);
            f_new = obj.eval(x_new, true);
            // projection can bend the step, so never accept a real increase
            if (std::isfinite(f_new) &&
                f_new - f <= 1e-4 * std::min(0.0, g.dot(x_new - x))) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted || (x_new - x).cwiseAbs().maxCoeff() == 0.0) {
            // retry along steepest descent once before giving up
            if ((h_inv - Eigen::MatrixXd::Identity(n, n)).cwiseAbs().maxCoeff() > 0.0) {
                h_inv.setIdentity();
                continue;
            }
            break;
        }
        Eigen::VectorXd g_new = obj.gradient(x_new, options.fd_step);
        Eigen::VectorXd step = x_new - x;
        Eigen::VectorXd y = g_new - g;
        double sy = step.dot(y);
        if (sy > 1e-12 * step.norm() * y.norm()) {
            Eigen::VectorXd hy = h_inv * y;
            double yhy = y.dot(hy);
            h_inv += ((sy + yhy) / (sy * sy)) * (step * step.transpose()) -
                     (hy * step.transpose() + step * hy.transpose()) / sy;
        }
        x = x_new;
        f = f_new;
        g = g_new;
        residual = (x - clamp_box(x - g, lo, hi)).cwiseAbs().maxCoeff();
    }

    res.x = x;
    res.f_exact = obj.eval(x, false);
    res.residual = residual;
    res.finite = std::isfinite(res.f_exact);
    return res;
}

MpcSolution assemble_solution(const MpcScheme& scheme, const ThetaVector& theta,
                              const Eigen::VectorXd& s0, const ShootingObjective& obj,
                              const LocalSolveResult& best, const MpcSolveOptions& options) {
    MpcSolution sol;
    sol.states.resize(scheme.state_dim, scheme.horizon + 1);
    sol.inputs.resize(scheme.input_dim, scheme.horizon);
    sol.slacks.clear();
    Eigen::VectorXd s = s0;
    double acc = 0.0;
    for (int k = 0; k < scheme.horizon; ++k) {
        Eigen::VectorXd a = obj.input_at(best.x, k);
        sol.states.col(k) = s;
        sol.inputs.col(k) = a;
        acc += scheme.stage_cost(theta, s, a);
        if (scheme.path_constraint) {
            Eigen::VectorXd h = scheme.path_constraint(theta, s, a);
            Eigen::VectorXd sigma = h.cwiseMax(0.0);
            acc += scheme.slack_weight.head(sigma.size()).dot(sigma);
            sol.slacks.push_back(sigma);
        } else {
            sol.slacks.push_back(Eigen::VectorXd());
        }
        s = scheme.model(theta, s, a);
    }
    if (!s.allFinite()) throw NonFiniteModel("model produced a non-finite terminal state");
    sol.states.col(scheme.horizon) = s;
    acc += scheme.terminal_cost(theta, s);
    if (scheme.terminal_constraint) {
        Eigen::VectorXd h = scheme.terminal_constraint(theta, s);
        Eigen::VectorXd sigma = h.cwiseMax(0.0);
        acc += scheme.terminal_slack_weight.head(sigma.size()).dot(sigma);
        sol.slacks.push_back(sigma);
    } else {
        sol.slacks.push_back(Eigen::VectorXd());
    }
    if (scheme.storage) acc -= scheme.storage(theta, s0);
    sol.objective = acc;
    sol.first_input = sol.inputs.col(0);
    sol.stationarity_residual = best.residual;
    sol.solver_status = best.residual <= options.status_tol ? SolverStatus::converged
                                                            : SolverStatus::max_iter;
    return sol;
}

MpcSolution solve_impl(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s,
                       std::optional<Eigen::VectorXd> fixed_head, const MpcSolveOptions& options) {
    scheme.validate();
    if (s.size() != scheme.state_dim) throw ShapeMismatch("query state dimension mismatch");
    if (!s.allFinite()) throw std::invalid_argument("query state must be finite");
    if ((scheme.input_upper - scheme.input_lower).minCoeff() < 0.0) {
        MpcSolution sol;
        sol.solver_status = SolverStatus::infeasible_box;
        sol.objective = std::numeric_limits<double>::quiet_NaN();
        return sol;
    }

    ShootingObjective obj(scheme, theta, s, fixed_head, options.softplus_sharpness);

    std::ofstream trace;
    if (!options.trace_csv.empty()) {
        trace.open(options.trace_csv);
        trace << "start,iteration,objective,residual\n";
    }

    std::vector<Eigen::VectorXd> starts;
    const int nv = obj.n_vars();
    if (options.warm_start_only) {
        if (!options.warm_start) throw std::invalid_argument("warm_start_only without warm start");
        starts.push_back(*options.warm_start);
    } else {
        starts.push_back(Eigen::VectorXd::Zero(nv));
        if (options.warm_start) {
            if (options.warm_start->size() != nv)
                throw ShapeMismatch("warm start size does not match the free inputs");
            starts.push_back(*options.warm_start);
        }
        Rng rng(Rng::mix(options.seed, 0x6d70637374617274ULL));
        const Eigen::VectorXd lo = obj.lower();
        const Eigen::VectorXd hi = obj.upper();
        for (int r = 0; r < options.random_starts; ++r) {
            Rng stream = rng.split(r + 1);
            Eigen::VectorXd x(nv);
            for (int i = 0; i < nv; ++i) x(i) = stream.uniform(lo(i), hi(i));
            starts.push_back(std::move(x));
        }
    }

    LocalSolveResult best;
    for (std::size_t i = 0; i < starts.size(); ++i) {
        LocalSolveResult r = minimize_projected(obj, starts[i], options,
                                                trace.is_open() ? &trace : nullptr,
                                                static_cast<int>(i));
        if (!r.finite) continue;
        if (!best.finite || r.f_exact < best.f_exact ||
            (r.f_exact == best.f_exact && r.residual < best.residual))
            best = std::move(r);
    }
    if (!best.finite)
        throw NonFiniteModel("every start produced a non-finite trajectory objective");

    return assemble_solution(scheme, theta, s, obj, best, options);
}

} // namespace

MpcSolution solve_value(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s,
                        const MpcSolveOptions& options) {
    return solve_impl(scheme, theta, s, std::nullopt, options);
}

Eigen::VectorXd policy(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s,
                       const MpcSolveOptions& options) {
    return solve_value(scheme, theta, s, options).first_input;
}

double q_value(const MpcScheme& scheme, const ThetaVector& theta, const Eigen::VectorXd& s,
               const Eigen::VectorXd& a, const MpcSolveOptions& options) {
    if (a.size() != scheme.input_dim) throw ShapeMismatch("action dimension mismatch");
    for (int i = 0; i < a.size(); ++i)
        if (a(i) < scheme.input_lower(i) || a(i) > scheme.input_upper(i))
            throw InputOutOfBox("pinned first input lies outside the input box");
    return solve_impl(scheme, theta, s, a, options).objective;
}

ThetaGradient theta_gradient(const MpcScheme& scheme, const ThetaVector& theta,
                             const Eigen::VectorXd& s, GradientTarget target,
                             const Eigen::VectorXd& a, double step,
                             const MpcSolveOptions& options) {
    MpcSolution base = solve_impl(
        scheme, theta, s, target == GradientTarget::q_value ? std::optional<Eigen::VectorXd>(a)
                                                            : std::nullopt,
        options);
    if (base.solver_status != SolverStatus::converged)
        throw NonConvergence("base solve did not converge; cannot differentiate");

    // stack the free inputs of the base solution for warm starting
    const int head = target == GradientTarget::q_value ? 1 : 0;
    const int nv = (scheme.horizon - head) * scheme.input_dim;
    Eigen::VectorXd warm(nv);
    for (int k = head; k < scheme.horizon; ++k)
        warm.segment((k - head) * scheme.input_dim, scheme.input_dim) = base.inputs.col(k);

    MpcSolveOptions warm_options = options;
    warm_options.warm_start = warm;
    warm_options.warm_start_only = true;
    warm_options.trace_csv.clear();

    const int np = static_cast<int>(theta.values.size());
    ThetaGradient out;
    out.grad = Eigen::VectorXd::Zero(np);
    out.valid.assign(np, 1);
    ThetaVector probe = theta;
    for (int i = 0; i < np; ++i) {
        double h = step * std::max(1.0, std::abs(theta.values(i)));
        double fp = 0.0, fm = 0.0;
        bool ok = true;
        for (int sign : {+1, -1}) {
            probe.values(i) = theta.values(i) + sign * h;
            try {
                MpcSolution r = solve_impl(scheme, probe, s,
                                           target == GradientTarget::q_value
                                               ? std::optional<Eigen::VectorXd>(a)
                                               : std::nullopt,
                                           warm_options);
                if (r.solver_status != SolverStatus::converged) ok = false;
                (sign > 0 ? fp : fm) = r.objective;
            } catch (const std::exception&) {
                ok = false;
            }
        }
        probe.values(i) = theta.values(i);
        if (ok) {
            out.grad(i) = (fp - fm) / (2.0 * h);
        } else {
            out.valid[i] = 0;
        }
    }
    return out;
}

MpcScheme make_lq_scheme(const Eigen::MatrixXd& a_mat, const Eigen::MatrixXd& b_mat,
                         const Eigen::MatrixXd& stage_block, const Eigen::MatrixXd& terminal,
                         int horizon, double input_box_halfwidth) {
    const int n = static_cast<int>(a_mat.rows());
    const int m = static_cast<int>(b_mat.cols());
    if (stage_block.rows() != n + m || stage_block.cols() != n + m)
        throw ShapeMismatch("stage cost block must be (n+m) x (n+m)");
    if (terminal.rows() != n || terminal.cols() != n)
        throw ShapeMismatch("terminal cost must be n x n");

    MpcScheme scheme;
    scheme.horizon = horizon;
    scheme.state_dim = n;
    scheme.input_dim = m;
    scheme.model = [a_mat, b_mat](const ThetaVector&, const Eigen::VectorXd& s,
                                  const Eigen::VectorXd& a) -> Eigen::VectorXd {
        return a_mat * s + b_mat * a;
    };
    scheme.stage_cost = [stage_block, n, m](const ThetaVector&, const Eigen::VectorXd& s,
                                            const Eigen::VectorXd& a) {
        Eigen::VectorXd z(n + m);
        z << s, a;
        return z.dot(stage_block * z);
    };
    scheme.terminal_cost = [terminal](const ThetaVector&, const Eigen::VectorXd& s) {
        return s.dot(terminal * s);
    };
    scheme.input_lower = Eigen::VectorXd::Constant(m, -input_box_halfwidth);
    scheme.input_upper = Eigen::VectorXd::Constant(m, input_box_halfwidth);
    scheme.kind = "lq";
    nlohmann::json params;
    params["a"] = matrix_to_json(a_mat);
    params["b"] = matrix_to_json(b_mat);
    params["stage_block"] = matrix_to_json(stage_block);
    params["terminal"] = matrix_to_json(terminal);
    params["horizon"] = horizon;
    params["input_box_halfwidth"] = input_box_halfwidth;
    scheme.params_json = params.dump();
    return scheme;
}

nlohmann::json scheme_to_json(const MpcScheme& scheme) {
    if (scheme.kind == "custom")
        throw std::invalid_argument("custom schemes are not serializable");
    nlohmann::json j;
    j["kind"] = scheme.kind;
    j["params"] = nlohmann::json::parse(scheme.params_json);
    return j;
}

nlohmann::json theta_to_json(const ThetaVector& theta) {
    nlohmann::json j;
    j["values"] = std::vector<double>(theta.values.data(),
                                      theta.values.data() + theta.values.size());
    nlohmann::json layout = nlohmann::json::array();
    for (const auto& s : theta.layout.slices) {
        nlohmann::json e;
        e["name"] = s.name;
        e["size"] = s.size;
        e["pd_dim"] = s.pd_dim;
        layout.push_back(std::move(e));
    }
    j["layout"] = std::move(layout);
    return j;
}

ThetaVector theta_from_json(const nlohmann::json& j) {
    ThetaLayout layout;
    for (const auto& e : j.at("layout")) {
        ThetaSlice s;
        s.name = e.at("name").get<std::string>();
        s.size = e.at("size").get<int>();
        s.pd_dim = e.at("pd_dim").get<int>();
        layout.slices.push_back(std::move(s));
    }
    ThetaVector t = make_theta(layout);
    std::vector<double> vals = j.at("values").get<std::vector<double>>();
    if (static_cast<int>(vals.size()) != t.values.size())
        throw SchemaMismatch("theta value count does not match the layout");
    for (int i = 0; i < t.values.size(); ++i) t.values(i) = vals[i];
    return t;
}

} // namespace mdpmpc

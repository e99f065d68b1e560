#include <nlohmann/json.hpp>

#include "mdpmpc/envs.hpp"
#include "mdpmpc/errors.hpp"
#include "mdpmpc/json_util.hpp"
#include "mdpmpc/mpc.hpp"

namespace mdpmpc {

MpcScheme scheme_from_json(const nlohmann::json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    const nlohmann::json& p = j.at("params");
    if (kind == "lq") {
        return make_lq_scheme(matrix_from_json(p.at("a")), matrix_from_json(p.at("b")),
                              matrix_from_json(p.at("stage_block")),
                              matrix_from_json(p.at("terminal")), p.at("horizon").get<int>(),
                              p.at("input_box_halfwidth").get<double>());
    }
    if (kind == "pendulum") {
        PendulumEnv env;
        env.dt = p.at("dt").get<double>();
        env.gravity = p.at("gravity").get<double>();
        env.mass = p.at("mass").get<double>();
        env.length = p.at("length").get<double>();
        env.state_box = p.at("state_box").get<double>();
        env.input_box = p.at("input_box").get<double>();
        env.gamma = p.at("gamma").get<double>();
        return make_pendulum_mpc_scheme(env, p.at("horizon").get<int>(),
                                        p.at("slack_weight").get<double>());
    }
    if (kind == "investment") {
        InvestmentProblem ip;
        ip.a_const = p.at("a_const").get<double>();
        ip.alpha = p.at("alpha").get<double>();
        ip.gamma = p.at("gamma").get<double>();
        ip.model_mu = p.at("model_mu").get<double>();
        return make_investment_scheme(ip, p.at("horizon").get<int>());
    }
    throw SchemaMismatch("unknown scheme kind: " + kind);
}

} // namespace mdpmpc

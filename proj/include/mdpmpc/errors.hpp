#pragma once

#include <stdexcept>
#include <string>

namespace mdpmpc {

struct NonConvergence : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InvalidDiscount : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SingularSystem : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct GainNotConstant : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ShapeMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct AllActionsInfeasible : std::runtime_error {
    explicit AllActionsInfeasible(int state)
        : std::runtime_error("every action has infinite stage cost at state " +
                             std::to_string(state)),
          state(state) {}
    int state;
};

struct StartStateDependent : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IndefiniteInnerBlock : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InputOutOfBox : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteModel : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct InfeasibleDomain : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DomainError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SchemaMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

} // namespace mdpmpc

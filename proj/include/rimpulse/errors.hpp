#pragma once

#include <stdexcept>
#include <string>

namespace rimpulse {

// Base of every error thrown by the library. Callers that only care about
// "numerical failure vs. bad input" can catch this and inspect kind().
class Error : public std::runtime_error {
public:
    enum class Kind {
        InvalidArgument,
        SingularDiffusion,
        IllConditioned,
        DriverNonFinite,
        BarrierAboveTerminal,
        PolicyRange,
        ProbabilityOutOfRange,
        OffTreeImpulse,
        ConfigInvalid,
    };

    Error(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

    // Numerical failures map to CLI exit code 3, everything else to 2.
    bool is_numerical() const noexcept {
        return kind_ != Kind::InvalidArgument && kind_ != Kind::ConfigInvalid;
    }

private:
    Kind kind_;
};

#define RIMPULSE_DEFINE_ERROR(Name)                                                   \
    class Name : public Error {                                                      \
    public:                                                                          \
        explicit Name(const std::string& what) : Error(Kind::Name, #Name ": " + what) {} \
    };

RIMPULSE_DEFINE_ERROR(InvalidArgument)
RIMPULSE_DEFINE_ERROR(SingularDiffusion)
RIMPULSE_DEFINE_ERROR(IllConditioned)
RIMPULSE_DEFINE_ERROR(DriverNonFinite)
RIMPULSE_DEFINE_ERROR(BarrierAboveTerminal)
RIMPULSE_DEFINE_ERROR(PolicyRange)
RIMPULSE_DEFINE_ERROR(ProbabilityOutOfRange)
RIMPULSE_DEFINE_ERROR(OffTreeImpulse)

#undef RIMPULSE_DEFINE_ERROR

// Carries the dotted path of the offending config field (e.g. "monte_carlo.paths").
class ConfigInvalid : public Error {
public:
    ConfigInvalid(std::string field, const std::string& what)
        : Error(Kind::ConfigInvalid, "ConfigInvalid: " + field + ": " + what), field_(std::move(field)) {}

    const std::string& field() const noexcept { return field_; }

private:
    std::string field_;
};

} // namespace rimpulse

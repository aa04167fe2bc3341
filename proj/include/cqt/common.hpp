#pragma once

#include <stdexcept>
#include <string>

namespace cqt {

inline constexpr const char* kVersion = "0.1.0";

// Base class for all toolkit errors.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConstantItem : Error {
    explicit ConstantItem(const std::string& item)
        : Error("item has zero variance: " + item) {}
};
struct TooFewObservations : Error {
    explicit TooFewObservations(const std::string& item)
        : Error("item has fewer than 2 observations: " + item) {}
};
struct ForbiddenRow : Error {
    explicit ForbiddenRow(const std::string& msg) : Error("forbidden row: " + msg) {}
};
struct UnbridgedClassroom : Error {
    explicit UnbridgedClassroom(const std::string& cls)
        : Error("classroom has no common-block items: " + cls) {}
};
struct SingularCovariance : Error {
    explicit SingularCovariance(const std::string& msg)
        : Error("singular covariance: " + msg) {}
};
struct DimensionMismatch : Error {
    explicit DimensionMismatch(const std::string& msg)
        : Error("dimension mismatch: " + msg) {}
};
struct DegenerateFactor : Error {
    explicit DegenerateFactor(const std::string& msg)
        : Error("degenerate factor: " + msg) {}
};
struct SingularA : Error {
    explicit SingularA() : Error("QCIT block of the factor covariance is singular") {}
};
struct ZeroWeightVector : Error {
    ZeroWeightVector() : Error("composite weight vector is zero") {}
};
struct InfeasibleConstraints : Error {
    explicit InfeasibleConstraints(const std::string& msg)
        : Error("balance constraints infeasible: " + msg) {}
};
struct DegenerateDose : Error {
    explicit DegenerateDose(const std::string& msg)
        : Error("dose is degenerate: " + msg) {}
};
struct TooFewDistinctDoses : Error {
    explicit TooFewDistinctDoses(const std::string& msg)
        : Error("too few distinct dose values: " + msg) {}
};
struct IoError : Error {
    explicit IoError(const std::string& msg) : Error("io: " + msg) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config: " + msg) {}
};

}  // namespace cqt

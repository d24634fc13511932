#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace mixica {

using Index = Eigen::Index;
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

/// Base class for all library errors.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad input: unreadable files, malformed metadata, invalid shapes or values.
class DataError : public Error {
public:
    using Error::Error;
};

/// Numerical breakdown: singular matrices, non-finite statistics, rank loss.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Seed pair used to initialize a decomposition. Defaults match the values
/// used for all reference runs.
struct SeedPair {
    std::uint64_t first = 123456;
    std::uint64_t second = 654321;

    friend bool operator==(const SeedPair&, const SeedPair&) = default;
};

inline std::string to_string(const SeedPair& s)
{
    return std::to_string(s.first) + "," + std::to_string(s.second);
}

} // namespace mixica

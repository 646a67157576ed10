#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace deepchoice {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Failure categories. The CLI maps each one to a distinct exit code.
enum class ErrorKind { Load, Schema, Train, Inference, Artifact, Config, Simulation };

class Error : public std::runtime_error {
  public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

  private:
    ErrorKind kind_;
};

struct LoadError : Error {
    explicit LoadError(const std::string& what) : Error(ErrorKind::Load, what) {}
};
struct SchemaError : Error {
    explicit SchemaError(const std::string& what) : Error(ErrorKind::Schema, what) {}
};
struct TrainError : Error {
    explicit TrainError(const std::string& what) : Error(ErrorKind::Train, what) {}
};
struct InferenceError : Error {
    explicit InferenceError(const std::string& what) : Error(ErrorKind::Inference, what) {}
};
struct ArtifactError : Error {
    explicit ArtifactError(const std::string& what) : Error(ErrorKind::Artifact, what) {}
};
struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};

// Logistic CDF G(v), written so neither branch overflows.
inline double logistic(double v) {
    if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
    const double e = std::exp(v);
    return e / (1.0 + e);
}

// G'(v) = G(v)(1 - G(v))
inline double logisticDensity(double v) {
    const double g = logistic(v);
    return g * (1.0 - g);
}

/// Pearson correlation. Returns 0 when either input has zero variance.
double correlation(std::span<const double> a, std::span<const double> b);
double correlation(const Vector& a, const Vector& b);

/// Two-sided standard normal tail probability P(|Z| > |z|).
double twoSidedNormalPValue(double z);

/// Warnings are routed through a replaceable handler (stderr by default).
using WarningHandler = std::function<void(const std::string&)>;
void warn(const std::string& message);
WarningHandler setWarningHandler(WarningHandler handler);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Work items must write
/// to disjoint outputs; the first exception (lowest index) is rethrown.
void parallelFor(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Resolves a thread count request: 0 means all available cores.
std::size_t resolveThreads(std::size_t requested);

/// SplitMix64 step; used to derive independent sub-seeds.
std::uint64_t mixSeed(std::uint64_t x);
std::uint64_t combineSeeds(std::initializer_list<std::uint64_t> parts);

}  // namespace deepchoice

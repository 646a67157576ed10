#pragma once

#include "deepchoice/common.hpp"
#include "deepchoice/dataio.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <vector>

namespace deepchoice {

enum class OptimizerKind { Adam, Sgd };

struct NetworkConfig {
    std::vector<std::size_t> hiddenSizes{32, 32, 16};
    std::size_t epochs = 2000;
    double learningRate = 1e-3;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double adamBeta1 = 0.9;
    double adamBeta2 = 0.999;
    double adamEpsilon = 1e-8;
    // Adds 0.5 * l2Penalty * sum(W^2) over weight matrices (biases excluded).
    double l2Penalty = 0.0;
    std::uint64_t seed = 0;
    // Respondents per mini-batch; 0 trains on the full batch.
    std::size_t batchSize = 0;

    void validate() const;
    nlohmann::json toJson() const;
    static NetworkConfig fromJson(const nlohmann::json& j);
};

struct DenseLayer {
    Matrix weight;  // out x in
    Vector bias;    // out
};

/// Feature network Z -> beta(Z): ReLU hidden layers and a linear output layer.
class Network {
  public:
    Network() = default;
    Network(std::size_t inputWidth, const std::vector<std::size_t>& hidden, std::size_t outputWidth);

    /// He-uniform hidden layers; zero output layer so beta(Z) == 0 at start.
    static Network initialized(std::size_t inputWidth, std::size_t outputWidth, const NetworkConfig& cfg);

    std::size_t inputWidth() const { return inputWidth_; }
    std::size_t outputWidth() const { return outputWidth_; }
    std::size_t hiddenLayers() const { return layers_.size() - 1; }
    std::size_t parameterCount() const;

    std::vector<DenseLayer>& layers() { return layers_; }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    Vector forwardBeta(const Vector& z) const;
    /// Column-batch forward pass: zt is pZ x M, result is p x M.
    Matrix forwardBatch(const Matrix& zt) const;
    /// Convenience: rows of z (M x pZ) to rows of beta (M x p).
    Matrix predict(const Matrix& z) const;

    /// Flat parameter view in layer order (W row-major, then b).
    Vector flatten() const;
    void assign(const Vector& flat);

    // Optional standardization echo so callers can query raw-scale covariates.
    CovariateScaling scaling;
    NetworkConfig config;
    std::vector<double> lossTrace;

  private:
    std::size_t inputWidth_ = 0;
    std::size_t outputWidth_ = 0;
    std::vector<DenseLayer> layers_;
};

/// dx' beta(z)
double logitIndex(const Network& net, const Vector& z, const Vector& dx);

/// Mean binary cross-entropy over all rows, probabilities clamped to
/// [1e-12, 1 - 1e-12]. The L2 term is not included.
double loss(const Network& net, const ConjointDataset& ds);

/// Gradient of loss + 0.5 * l2 * sum(W^2), one DenseLayer per network layer.
std::vector<DenseLayer> gradients(const Network& net, const ConjointDataset& ds, double l2Penalty = 0.0);

/// Trains from the default initialization. Deterministic for a fixed seed.
/// The returned network's lossTrace holds the loss before every optimizer step
/// followed by the final loss (epochs + 1 entries for full-batch training).
Network train(const ConjointDataset& ds, const NetworkConfig& cfg);
/// Continues training from a given starting network.
Network train(const ConjointDataset& ds, const NetworkConfig& cfg, Network start);

nlohmann::json toJson(const Network& net);
Network networkFromJson(const nlohmann::json& j);
void saveNetwork(const Network& net, const std::filesystem::path& path);
Network loadNetwork(const std::filesystem::path& path);

}  // namespace deepchoice

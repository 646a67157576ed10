#include "deepchoice/net.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

namespace deepchoice {

void NetworkConfig::validate() const {
    if (hiddenSizes.empty()) throw ConfigError("network needs at least one hidden layer");
    for (auto h : hiddenSizes)
        if (h == 0) throw ConfigError("hidden layer widths must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(learningRate > 0.0) || !std::isfinite(learningRate)) throw ConfigError("learning rate must be positive");
    if (!(l2Penalty >= 0.0)) throw ConfigError("l2 penalty must be nonnegative");
    if (!(adamBeta1 >= 0.0 && adamBeta1 < 1.0 && adamBeta2 >= 0.0 && adamBeta2 < 1.0 && adamEpsilon > 0.0))
        throw ConfigError("invalid Adam hyperparameters");
}

nlohmann::json NetworkConfig::toJson() const {
    return nlohmann::json{{"hidden", hiddenSizes},
                          {"epochs", epochs},
                          {"learning_rate", learningRate},
                          {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"},
                          {"adam_beta1", adamBeta1},
                          {"adam_beta2", adamBeta2},
                          {"adam_epsilon", adamEpsilon},
                          {"l2_penalty", l2Penalty},
                          {"seed", seed},
                          {"batch_size", batchSize == 0 ? nlohmann::json("full") : nlohmann::json(batchSize)}};
}

NetworkConfig NetworkConfig::fromJson(const nlohmann::json& j) {
    NetworkConfig c;
    if (j.contains("hidden")) c.hiddenSizes = j["hidden"].get<std::vector<std::size_t>>();
    c.epochs = j.value("epochs", c.epochs);
    c.learningRate = j.value("learning_rate", c.learningRate);
    const std::string opt = j.value("optimizer", std::string("adam"));
    if (opt == "adam")
        c.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd")
        c.optimizer = OptimizerKind::Sgd;
    else
        throw ConfigError("unknown optimizer '" + opt + "'");
    c.adamBeta1 = j.value("adam_beta1", c.adamBeta1);
    c.adamBeta2 = j.value("adam_beta2", c.adamBeta2);
    c.adamEpsilon = j.value("adam_epsilon", c.adamEpsilon);
    c.l2Penalty = j.value("l2_penalty", c.l2Penalty);
    c.seed = j.value("seed", c.seed);
    if (j.contains("batch_size") && j["batch_size"].is_number_integer()) c.batchSize = j["batch_size"].get<std::size_t>();
    return c;
}

// ---------------------------------------------------------------------------

Network::Network(std::size_t inputWidth, const std::vector<std::size_t>& hidden, std::size_t outputWidth)
    : inputWidth_(inputWidth), outputWidth_(outputWidth) {
    std::size_t in = inputWidth;
    for (auto h : hidden) {
        layers_.push_back({Matrix::Zero(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(in)),
                           Vector::Zero(static_cast<Eigen::Index>(h))});
        in = h;
    }
    layers_.push_back({Matrix::Zero(static_cast<Eigen::Index>(outputWidth), static_cast<Eigen::Index>(in)),
                       Vector::Zero(static_cast<Eigen::Index>(outputWidth))});
}

Network Network::initialized(std::size_t inputWidth, std::size_t outputWidth, const NetworkConfig& cfg) {
    cfg.validate();
    Network net(inputWidth, cfg.hiddenSizes, outputWidth);
    std::mt19937_64 rng(cfg.seed);
    for (std::size_t l = 0; l + 1 < net.layers_.size(); ++l) {
        auto& W = net.layers_[l].weight;
        if (W.cols() == 0) continue;
        const double limit = std::sqrt(6.0 / static_cast<double>(W.cols()));
        std::uniform_real_distribution<double> u(-limit, limit);
        for (Eigen::Index r = 0; r < W.rows(); ++r)
            for (Eigen::Index c = 0; c < W.cols(); ++c) W(r, c) = u(rng);
    }
    net.config = cfg;
    return net;
}

std::size_t Network::parameterCount() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
}

Matrix Network::forwardBatch(const Matrix& zt) const {
    if (static_cast<std::size_t>(zt.rows()) != inputWidth_)
        throw std::invalid_argument("forwardBatch: covariate dimension " + std::to_string(zt.rows()) +
                                    " does not match network input " + std::to_string(inputWidth_));
    Matrix h = zt;
    for (std::size_t l = 0; l + 1 < layers_.size(); ++l) {
        Matrix pre = layers_[l].weight * h;
        pre.colwise() += layers_[l].bias;
        h = pre.cwiseMax(0.0);
    }
    Matrix out = layers_.back().weight * h;
    out.colwise() += layers_.back().bias;
    return out;
}

Vector Network::forwardBeta(const Vector& z) const {
    if (static_cast<std::size_t>(z.size()) != inputWidth_)
        throw std::invalid_argument("forwardBeta: covariate dimension " + std::to_string(z.size()) +
                                    " does not match network input " + std::to_string(inputWidth_));
    return forwardBatch(z).col(0);
}

Matrix Network::predict(const Matrix& z) const { return forwardBatch(z.transpose()).transpose(); }

Vector Network::flatten() const {
    Vector flat(static_cast<Eigen::Index>(parameterCount()));
    Eigen::Index o = 0;
    for (const auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) flat[o++] = l.weight(r, c);
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) flat[o++] = l.bias[r];
    }
    return flat;
}

void Network::assign(const Vector& flat) {
    if (static_cast<std::size_t>(flat.size()) != parameterCount())
        throw std::invalid_argument("assign: wrong parameter count");
    Eigen::Index o = 0;
    for (auto& l : layers_) {
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) l.weight(r, c) = flat[o++];
        for (Eigen::Index r = 0; r < l.bias.size(); ++r) l.bias[r] = flat[o++];
    }
}

double logitIndex(const Network& net, const Vector& z, const Vector& dx) {
    if (static_cast<std::size_t>(dx.size()) != net.outputWidth())
        throw std::invalid_argument("logitIndex: contrast dimension " + std::to_string(dx.size()) +
                                    " does not match network output " + std::to_string(net.outputWidth()));
    return dx.dot(net.forwardBeta(z));
}

// ---------------------------------------------------------------------------
// Training internals

namespace {

constexpr double kProbClamp = 1e-12;

double rowLoss(double v, double y) {
    const double p = std::clamp(logistic(v), kProbClamp, 1.0 - kProbClamp);
    return -(y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
}

struct ForwardCache {
    std::vector<Matrix> pre;  // hidden pre-activations
    std::vector<Matrix> act;  // act[0] = input, act[l+1] = relu(pre[l])
    Matrix beta;              // p x B
};

void forward(const Network& net, const Matrix& zt, ForwardCache& cache) {
    const auto& layers = net.layers();
    const std::size_t hidden = layers.size() - 1;
    cache.pre.resize(hidden);
    cache.act.resize(hidden + 1);
    cache.act[0] = zt;
    for (std::size_t l = 0; l < hidden; ++l) {
        cache.pre[l].noalias() = layers[l].weight * cache.act[l];
        cache.pre[l].colwise() += layers[l].bias;
        cache.act[l + 1] = cache.pre[l].cwiseMax(0.0);
    }
    cache.beta.noalias() = layers.back().weight * cache.act[hidden];
    cache.beta.colwise() += layers.back().bias;
}

// Sums row losses of the listed respondents (beta column c belongs to
// respondents[c]) and fills dBeta with sum_t (G - y) dx scaled by 1/scale.
double rowPass(const ConjointDataset& ds, const std::vector<std::size_t>& respondents, const Matrix& beta,
               double scale, Matrix* dBeta) {
    const auto p = static_cast<Eigen::Index>(ds.width());
    double total = 0.0;
    if (dBeta) dBeta->setZero(p, static_cast<Eigen::Index>(respondents.size()));
    for (std::size_t c = 0; c < respondents.size(); ++c) {
        const std::size_t i = respondents[c];
        const auto b = beta.col(static_cast<Eigen::Index>(c));
        for (std::size_t r = ds.rowBegin[i]; r < ds.rowBegin[i + 1]; ++r) {
            const auto dx = ds.deltaX.row(static_cast<Eigen::Index>(r));
            const double v = dx.dot(b.transpose());
            const double y = ds.y[static_cast<Eigen::Index>(r)];
            total += rowLoss(v, y);
            if (dBeta) dBeta->col(static_cast<Eigen::Index>(c)) += ((logistic(v) - y) / scale) * dx.transpose();
        }
    }
    return total / scale;
}

std::vector<DenseLayer> backward(const Network& net, const ForwardCache& cache, const Matrix& dBeta,
                                 double l2Penalty) {
    const auto& layers = net.layers();
    const std::size_t hidden = layers.size() - 1;
    std::vector<DenseLayer> g(layers.size());
    g[hidden].weight.noalias() = dBeta * cache.act[hidden].transpose();
    g[hidden].bias = dBeta.rowwise().sum();
    Matrix dAct = layers[hidden].weight.transpose() * dBeta;
    for (std::size_t l = hidden; l-- > 0;) {
        Matrix dPre = (cache.pre[l].array() > 0.0).select(dAct, 0.0);
        g[l].weight.noalias() = dPre * cache.act[l].transpose();
        g[l].bias = dPre.rowwise().sum();
        if (l > 0) dAct.noalias() = layers[l].weight.transpose() * dPre;
    }
    if (l2Penalty > 0.0)
        for (std::size_t l = 0; l < layers.size(); ++l) g[l].weight += l2Penalty * layers[l].weight;
    return g;
}

std::vector<std::size_t> allRespondents(const ConjointDataset& ds) {
    std::vector<std::size_t> ids(ds.respondents());
    std::iota(ids.begin(), ids.end(), std::size_t{0});
    return ids;
}

Matrix gatherInputs(const ConjointDataset& ds, const std::vector<std::size_t>& ids) {
    Matrix zt(static_cast<Eigen::Index>(ds.covariateWidth()), static_cast<Eigen::Index>(ids.size()));
    for (std::size_t c = 0; c < ids.size(); ++c)
        zt.col(static_cast<Eigen::Index>(c)) = ds.z.row(static_cast<Eigen::Index>(ids[c])).transpose();
    return zt;
}

class Optimizer {
  public:
    Optimizer(const Network& net, const NetworkConfig& cfg) : cfg_(cfg) {
        for (const auto& l : net.layers()) {
            m_.push_back({Matrix::Zero(l.weight.rows(), l.weight.cols()), Vector::Zero(l.bias.size())});
            v_.push_back(m_.back());
        }
    }

    void step(Network& net, const std::vector<DenseLayer>& g) {
        ++t_;
        auto& layers = net.layers();
        if (cfg_.optimizer == OptimizerKind::Sgd) {
            for (std::size_t l = 0; l < layers.size(); ++l) {
                layers[l].weight -= cfg_.learningRate * g[l].weight;
                layers[l].bias -= cfg_.learningRate * g[l].bias;
            }
            return;
        }
        const double b1 = cfg_.adamBeta1, b2 = cfg_.adamBeta2;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
        const double lr = cfg_.learningRate;
        const double eps = cfg_.adamEpsilon;
        for (std::size_t l = 0; l < layers.size(); ++l) {
            update(layers[l].weight, m_[l].weight, v_[l].weight, g[l].weight, b1, b2, c1, c2, lr, eps);
            update(layers[l].bias, m_[l].bias, v_[l].bias, g[l].bias, b1, b2, c1, c2, lr, eps);
        }
    }

  private:
    template <class P, class G>
    static void update(P& param, P& m, P& v, const G& g, double b1, double b2, double c1, double c2, double lr,
                       double eps) {
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g.cwiseProduct(g);
        param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    }

    const NetworkConfig& cfg_;
    std::vector<DenseLayer> m_, v_;
    std::size_t t_ = 0;
};

void checkFinite(double value, std::size_t epoch, const NetworkConfig& cfg) {
    if (!std::isfinite(value)) {
        std::ostringstream s;
        s << "non-finite training loss at epoch " << epoch << " (learning rate " << cfg.learningRate
          << "); try lowering the learning rate";
        throw TrainError(s.str());
    }
}

}  // namespace

double loss(const Network& net, const ConjointDataset& ds) {
    if (ds.rows() == 0) return 0.0;
    const auto ids = allRespondents(ds);
    const Matrix beta = net.forwardBatch(ds.z.transpose());
    return rowPass(ds, ids, beta, static_cast<double>(ds.rows()), nullptr);
}

std::vector<DenseLayer> gradients(const Network& net, const ConjointDataset& ds, double l2Penalty) {
    const auto ids = allRespondents(ds);
    ForwardCache cache;
    forward(net, ds.z.transpose(), cache);
    Matrix dBeta;
    rowPass(ds, ids, cache.beta, std::max<double>(1.0, static_cast<double>(ds.rows())), &dBeta);
    return backward(net, cache, dBeta, l2Penalty);
}

Network train(const ConjointDataset& ds, const NetworkConfig& cfg) {
    cfg.validate();
    return train(ds, cfg, Network::initialized(ds.covariateWidth(), ds.width(), cfg));
}

Network train(const ConjointDataset& ds, const NetworkConfig& cfg, Network net) {
    cfg.validate();
    if (net.inputWidth() != ds.covariateWidth() || net.outputWidth() != ds.width())
        throw TrainError("starting network shape does not match the dataset");
    if (ds.rows() == 0) throw TrainError("cannot train on an empty dataset");
    net.config = cfg;
    net.scaling = ds.scaling;
    net.lossTrace.clear();
    net.lossTrace.reserve(cfg.epochs + 1);

    Optimizer opt(net, cfg);
    ForwardCache cache;
    Matrix dBeta;
    const auto ids = allRespondents(ds);

    if (cfg.batchSize == 0 || cfg.batchSize >= ds.respondents()) {
        const Matrix zt = ds.z.transpose();
        const double n = static_cast<double>(ds.rows());
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            forward(net, zt, cache);
            const double l = rowPass(ds, ids, cache.beta, n, &dBeta);
            checkFinite(l, epoch, cfg);
            net.lossTrace.push_back(l);
            opt.step(net, backward(net, cache, dBeta, cfg.l2Penalty));
        }
    } else {
        std::mt19937_64 rng(combineSeeds({cfg.seed, 0xBA7C4ULL}));
        std::vector<std::size_t> order = ids;
        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            double epochLoss = 0.0;
            std::size_t epochRows = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batchSize) {
                const std::size_t stop = std::min(order.size(), start + cfg.batchSize);
                std::vector<std::size_t> batch(order.begin() + static_cast<long>(start),
                                               order.begin() + static_cast<long>(stop));
                std::size_t rows = 0;
                for (auto i : batch) rows += ds.taskCount(i);
                if (rows == 0) continue;
                forward(net, gatherInputs(ds, batch), cache);
                const double l = rowPass(ds, batch, cache.beta, static_cast<double>(rows), &dBeta);
                checkFinite(l, epoch, cfg);
                epochLoss += l * static_cast<double>(rows);
                epochRows += rows;
                opt.step(net, backward(net, cache, dBeta, cfg.l2Penalty));
            }
            net.lossTrace.push_back(epochLoss / static_cast<double>(std::max<std::size_t>(epochRows, 1)));
        }
    }
    const double finalLoss = loss(net, ds);
    checkFinite(finalLoss, cfg.epochs, cfg);
    net.lossTrace.push_back(finalLoss);
    return net;
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json toJson(const Network& net) {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : net.layers()) {
        std::vector<double> w;
        w.reserve(static_cast<std::size_t>(l.weight.size()));
        for (Eigen::Index r = 0; r < l.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < l.weight.cols(); ++c) w.push_back(l.weight(r, c));
        layers.push_back({{"rows", l.weight.rows()},
                          {"cols", l.weight.cols()},
                          {"weight", w},
                          {"bias", std::vector<double>(l.bias.data(), l.bias.data() + l.bias.size())}});
    }
    std::vector<std::size_t> hidden;
    for (std::size_t l = 0; l + 1 < net.layers().size(); ++l)
        hidden.push_back(static_cast<std::size_t>(net.layers()[l].weight.rows()));
    nlohmann::json j{{"format", "deepchoice.network"},
                     {"version", 1},
                     {"input_width", net.inputWidth()},
                     {"output_width", net.outputWidth()},
                     {"hidden", hidden},
                     {"layers", layers},
                     {"config", net.config.toJson()}};
    if (net.scaling.mean.size() > 0) {
        j["covariates"] = net.scaling.names;
        j["covariate_mean"] = std::vector<double>(net.scaling.mean.data(), net.scaling.mean.data() + net.scaling.mean.size());
        j["covariate_sd"] = std::vector<double>(net.scaling.sd.data(), net.scaling.sd.data() + net.scaling.sd.size());
    }
    if (!net.lossTrace.empty()) j["final_loss"] = net.lossTrace.back();
    return j;
}

Network networkFromJson(const nlohmann::json& j) {
    try {
        if (j.value("format", std::string()) != "deepchoice.network")
            throw ArtifactError("not a serialized network (missing format tag)");
        if (j.value("version", 0) != 1) throw ArtifactError("unsupported network file version");
        const auto in = j.at("input_width").get<std::size_t>();
        const auto out = j.at("output_width").get<std::size_t>();
        const auto hidden = j.at("hidden").get<std::vector<std::size_t>>();
        Network net(in, hidden, out);
        const auto& layers = j.at("layers");
        if (layers.size() != net.layers().size()) throw ArtifactError("network file has the wrong layer count");
        for (std::size_t l = 0; l < layers.size(); ++l) {
            auto& dst = net.layers()[l];
            const auto w = layers[l].at("weight").get<std::vector<double>>();
            const auto b = layers[l].at("bias").get<std::vector<double>>();
            if (w.size() != static_cast<std::size_t>(dst.weight.size()) ||
                b.size() != static_cast<std::size_t>(dst.bias.size()))
                throw ArtifactError("network file layer " + std::to_string(l) + " has the wrong size");
            std::size_t o = 0;
            for (Eigen::Index r = 0; r < dst.weight.rows(); ++r)
                for (Eigen::Index c = 0; c < dst.weight.cols(); ++c) dst.weight(r, c) = w[o++];
            for (std::size_t r = 0; r < b.size(); ++r) dst.bias[static_cast<Eigen::Index>(r)] = b[r];
        }
        if (j.contains("config")) net.config = NetworkConfig::fromJson(j["config"]);
        if (j.contains("covariate_mean")) {
            const auto m = j["covariate_mean"].get<std::vector<double>>();
            const auto s = j["covariate_sd"].get<std::vector<double>>();
            net.scaling.names = j.value("covariates", std::vector<std::string>{});
            net.scaling.mean = Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size()));
            net.scaling.sd = Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size()));
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError(std::string("malformed network file: ") + e.what());
    }
}

void saveNetwork(const Network& net, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write network file '" + path.string() + "'");
    out << toJson(net).dump(1) << '\n';
}

Network loadNetwork(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ArtifactError("cannot open network file '" + path.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("network file '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return networkFromJson(j);
}

}  // namespace deepchoice

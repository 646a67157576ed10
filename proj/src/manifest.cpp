#include "deepchoice/manifest.hpp"

#include "deepchoice/common.hpp"

#include <openssl/evp.h>

#include <Eigen/Core>

#include <array>
#include <fstream>
#include <memory>

namespace deepchoice {

std::string sha256File(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ArtifactError("cannot read '" + path.string() + "' for hashing");
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) throw ArtifactError("SHA-256 unavailable");
    std::array<char, 1 << 16> buf{};
    while (in) {
        in.read(buf.data(), buf.size());
        if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
    }
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_DigestFinal_ex(ctx.get(), md, &len);
    static const char* hex = "0123456789abcdef";
    std::string out;
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 15]);
    }
    return out;
}

RunManifest::RunManifest(std::string command) : command_(std::move(command)) {}

void RunManifest::addInput(const std::string& role, const std::filesystem::path& path) {
    inputs_[role] = {{"path", path.string()}, {"sha256", sha256File(path)}};
}

void RunManifest::addOutput(const std::filesystem::path& path) { outputs_.push_back(path); }

std::filesystem::path RunManifest::write(const std::filesystem::path& dir) const {
    nlohmann::json outputs = nlohmann::json::array();
    for (const auto& p : outputs_) {
        std::error_code ec;
        const auto rel = std::filesystem::relative(p, dir, ec);
        outputs.push_back({{"path", (ec || rel.empty() ? p : rel).generic_string()},
                           {"sha256", sha256File(p)},
                           {"bytes", std::filesystem::file_size(p)}});
    }
    nlohmann::json j{{"tool", "deepchoice"},
                     {"command", command_},
                     {"versions",
                      {{"deepchoice", kVersion},
                       {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                     std::to_string(EIGEN_MINOR_VERSION)},
                       {"manifest_format", 1}}},
                     {"config", config_},
                     {"seeds", seeds_},
                     {"inputs", inputs_},
                     {"wall_seconds", stages_},
                     {"outputs", outputs}};
    if (!notes_.empty()) j["notes"] = notes_;
    const auto path = dir / "manifest.json";
    std::ofstream out(path);
    if (!out) throw ArtifactError("cannot write '" + path.string() + "'");
    out << j.dump(2) << '\n';
    return path;
}

nlohmann::json RunManifest::read(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) throw ArtifactError("missing run manifest '" + path.string() + "'; run `deepchoice fit` first");
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw ArtifactError("manifest '" + path.string() + "' is not valid JSON: " + e.what());
    }
}

}  // namespace deepchoice

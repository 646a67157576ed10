#pragma once

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <string>
#include <vector>

namespace deepchoice {

inline constexpr const char* kVersion = "0.4.0";

/// Hex SHA-256 of a file's bytes.
std::string sha256File(const std::filesystem::path& path);

/// Record of one CLI run: configuration echo, seeds, input digests, stage
/// timings and every output file written.
class RunManifest {
  public:
    explicit RunManifest(std::string command);

    void setConfig(nlohmann::json config) { config_ = std::move(config); }
    void addSeed(const std::string& name, std::uint64_t seed) { seeds_[name] = seed; }
    void addInput(const std::string& role, const std::filesystem::path& path);
    void addOutput(const std::filesystem::path& path);
    void addStageTime(const std::string& stage, double seconds) { stages_[stage] = seconds; }
    void note(const std::string& key, nlohmann::json value) { notes_[key] = std::move(value); }

    /// Writes manifest.json into `dir` (digesting every registered output).
    std::filesystem::path write(const std::filesystem::path& dir) const;

    const std::vector<std::filesystem::path>& outputs() const { return outputs_; }

    static nlohmann::json read(const std::filesystem::path& dir);

  private:
    std::string command_;
    nlohmann::json config_ = nlohmann::json::object();
    nlohmann::json seeds_ = nlohmann::json::object();
    nlohmann::json inputs_ = nlohmann::json::object();
    nlohmann::json stages_ = nlohmann::json::object();
    nlohmann::json notes_ = nlohmann::json::object();
    std::vector<std::filesystem::path> outputs_;
};

/// Wall-clock stopwatch for stage timings.
class Stopwatch {
  public:
    Stopwatch() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace deepchoice

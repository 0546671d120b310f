#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

namespace torch::nn {
class Module;
}
namespace torch::serialize {
class OutputArchive;
class InputArchive;
}  // namespace torch::serialize

namespace deffiller::checkpoint {

inline constexpr int kFormatVersion = 1;

/// Versioned container of named modules and JSON documents. Every file
/// carries a kind tag, the format version, and the hash of its "config"
/// document.
class Writer {
 public:
  explicit Writer(std::string kind);
  ~Writer();
  Writer(const Writer&) = delete;
  Writer& operator=(const Writer&) = delete;

  void add_module(std::string_view name, const torch::nn::Module& module);
  void add_json(std::string_view name, const nlohmann::json& document);
  void save(const std::filesystem::path& path);

 private:
  std::string kind_;
  std::unique_ptr<torch::serialize::OutputArchive> archive_;
  std::string config_hash_;
};

class Reader {
 public:
  /// Throws when the file is missing, of another kind, or another version.
  Reader(const std::filesystem::path& path, std::string_view expected_kind);
  ~Reader();
  Reader(const Reader&) = delete;
  Reader& operator=(const Reader&) = delete;

  void load_module(std::string_view name, torch::nn::Module& module);
  nlohmann::json json(std::string_view name);
  const std::string& config_hash() const { return config_hash_; }

 private:
  std::filesystem::path path_;
  std::unique_ptr<torch::serialize::InputArchive> archive_;
  std::string config_hash_;
};

}  // namespace deffiller::checkpoint

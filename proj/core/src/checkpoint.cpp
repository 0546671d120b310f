#include "deffiller/checkpoint.hpp"

#include <torch/nn/module.h>
#include <torch/serialize/input-archive.h>
#include <torch/serialize/output-archive.h>

#include "deffiller/error.hpp"
#include "deffiller/hashing.hpp"

namespace deffiller::checkpoint {

Writer::Writer(std::string kind)
    : kind_(std::move(kind)), archive_(std::make_unique<torch::serialize::OutputArchive>()) {}

Writer::~Writer() = default;

void Writer::add_module(std::string_view name, const torch::nn::Module& module) {
  torch::serialize::OutputArchive sub;
  module.save(sub);
  archive_->write(std::string(name), sub);
}

void Writer::add_json(std::string_view name, const nlohmann::json& document) {
  const std::string text = document.dump();
  if (name == "config") config_hash_ = short_hash(text);
  archive_->write("json/" + std::string(name), c10::IValue(text));
}

void Writer::save(const std::filesystem::path& path) {
  archive_->write("meta/kind", c10::IValue(kind_));
  archive_->write("meta/version", c10::IValue(static_cast<std::int64_t>(kFormatVersion)));
  archive_->write("meta/config_hash", c10::IValue(config_hash_));
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  archive_->save_to(path.string());
}

Reader::Reader(const std::filesystem::path& path, std::string_view expected_kind)
    : path_(path), archive_(std::make_unique<torch::serialize::InputArchive>()) {
  require(std::filesystem::exists(path), "checkpoint {} does not exist", path.string());
  archive_->load_from(path.string());
  c10::IValue kind;
  c10::IValue version;
  c10::IValue hash;
  require(archive_->try_read("meta/kind", kind) && archive_->try_read("meta/version", version),
          "{} is not a deffiller checkpoint", path.string());
  require(kind.toStringRef() == expected_kind, "{} holds a '{}' checkpoint, expected '{}'", path.string(),
          kind.toStringRef(), expected_kind);
  require(version.toInt() == kFormatVersion, "{} has format version {}, expected {}", path.string(),
          version.toInt(), kFormatVersion);
  if (archive_->try_read("meta/config_hash", hash)) config_hash_ = hash.toStringRef();
}

Reader::~Reader() = default;

void Reader::load_module(std::string_view name, torch::nn::Module& module) {
  torch::serialize::InputArchive sub;
  require(archive_->try_read(std::string(name), sub), "{} has no module '{}'", path_.string(), name);
  module.load(sub);
}

nlohmann::json Reader::json(std::string_view name) {
  c10::IValue value;
  require(archive_->try_read("json/" + std::string(name), value), "{} has no document '{}'",
          path_.string(), name);
  return nlohmann::json::parse(value.toStringRef());
}

}  // namespace deffiller::checkpoint

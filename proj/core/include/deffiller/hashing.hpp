#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace torch::nn {
class Module;
}

namespace deffiller {

/// Lower-case hex SHA-256 of a byte buffer.
std::string sha256_hex(std::span<const std::byte> bytes);
std::string sha256_hex(std::string_view text);
std::string sha256_file(const std::filesystem::path& path);

/// Short (16 hex digit) digest used to tag configs and checkpoints.
std::string short_hash(std::string_view text);

/// Digest over every parameter and buffer of a module, in registration order.
std::string module_digest(const torch::nn::Module& module);

}  // namespace deffiller

#include "deffiller/hashing.hpp"

#include <array>
#include <fstream>
#include <memory>

#include <openssl/evp.h>
#include <torch/nn/module.h>

#include "deffiller/error.hpp"

namespace deffiller {

namespace {

class Sha256 {
 public:
  Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
    require(ctx_ && EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) == 1, "sha256 init failed");
  }
  void update(const void* data, std::size_t size) {
    if (size > 0) EVP_DigestUpdate(ctx_.get(), data, size);
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
    unsigned int length = 0;
    EVP_DigestFinal_ex(ctx_.get(), digest.data(), &length);
    static constexpr char kDigits[] = "0123456789abcdef";
    std::string out;
    out.reserve(length * 2);
    for (unsigned int i = 0; i < length; ++i) {
      out.push_back(kDigits[digest[i] >> 4]);
      out.push_back(kDigits[digest[i] & 0xF]);
    }
    return out;
  }

 private:
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

void update_tensor(Sha256& sha, const torch::Tensor& tensor) {
  auto flat = tensor.detach().to(torch::kCPU).contiguous();
  sha.update(flat.data_ptr(), flat.numel() * flat.element_size());
}

}  // namespace

std::string sha256_hex(std::span<const std::byte> bytes) {
  Sha256 sha;
  sha.update(bytes.data(), bytes.size());
  return sha.hex();
}

std::string sha256_hex(std::string_view text) {
  Sha256 sha;
  sha.update(text.data(), text.size());
  return sha.hex();
}

std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot open {} for hashing", path.string());
  Sha256 sha;
  std::array<char, 1 << 16> buffer{};
  while (in) {
    in.read(buffer.data(), buffer.size());
    sha.update(buffer.data(), static_cast<std::size_t>(in.gcount()));
  }
  return sha.hex();
}

std::string short_hash(std::string_view text) { return sha256_hex(text).substr(0, 16); }

std::string module_digest(const torch::nn::Module& module) {
  Sha256 sha;
  for (const auto& item : module.named_parameters(true)) {
    sha.update(item.key().data(), item.key().size());
    update_tensor(sha, item.value());
  }
  for (const auto& item : module.named_buffers(true)) {
    sha.update(item.key().data(), item.key().size());
    update_tensor(sha, item.value());
  }
  return sha.hex().substr(0, 16);
}

}  // namespace deffiller

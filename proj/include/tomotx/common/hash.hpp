#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>

namespace tomotx {

// Incremental SHA-256 (OpenSSL EVP), hex-encoded digest.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  void update_file(const std::filesystem::path& path);
  std::string hex_digest();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_file(const std::filesystem::path& path);

}  // namespace tomotx

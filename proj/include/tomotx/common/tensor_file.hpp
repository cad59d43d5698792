#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

namespace tomotx {

// On-disk tensor container: a single text header line
//   magic=TOMOTX1 dtype=f32 shape=d0xd1x... byte_order=little
// followed by the raw row-major little-endian float32 payload.
struct TensorData {
  std::vector<int64_t> shape;
  std::vector<float> data;

  int64_t numel() const;
};

std::string format_shape(std::span<const int64_t> shape);

void write_tensor(const std::filesystem::path& path, std::span<const int64_t> shape,
                  std::span<const float> data);
inline void write_tensor(const std::filesystem::path& path, const TensorData& t) {
  write_tensor(path, t.shape, t.data);
}

TensorData read_tensor(const std::filesystem::path& path);

// Streams a tensor whose shape is known up front, one slab at a time.
class TensorWriter {
 public:
  TensorWriter(const std::filesystem::path& path, std::vector<int64_t> shape);
  ~TensorWriter();
  TensorWriter(const TensorWriter&) = delete;
  TensorWriter& operator=(const TensorWriter&) = delete;

  void append(std::span<const float> values);
  // Throws IoError unless exactly product(shape) values were appended.
  void close();

 private:
  std::filesystem::path path_;
  std::vector<int64_t> shape_;
  std::ofstream out_;
  int64_t written_ = 0;
  int64_t expected_ = 0;
};

}  // namespace tomotx

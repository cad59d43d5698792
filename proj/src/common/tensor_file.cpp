#include "tomotx/common/tensor_file.hpp"

#include <bit>
#include <cstring>
#include <sstream>

#include "tomotx/common/error.hpp"

namespace tomotx {
namespace {

constexpr const char* kMagic = "TOMOTX1";

int64_t product(std::span<const int64_t> shape) {
  int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string make_header(std::span<const int64_t> shape) {
  return std::string("magic=") + kMagic + " dtype=f32 shape=" + format_shape(shape) + " byte_order=little\n";
}

void write_floats(std::ofstream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float v : values) {
      auto bits = std::bit_cast<uint32_t>(v);
      bits = __builtin_bswap32(bits);
      out.write(reinterpret_cast<const char*>(&bits), 4);
    }
  }
}

std::vector<int64_t> parse_shape(const std::string& text, const std::filesystem::path& path) {
  std::vector<int64_t> shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    try {
      size_t used = 0;
      const long long d = std::stoll(part, &used);
      if (used != part.size() || d < 0) throw std::invalid_argument(part);
      shape.push_back(d);
    } catch (const std::exception&) {
      throw IoError(path.string() + ": malformed shape '" + text + "'");
    }
  }
  if (shape.empty()) throw IoError(path.string() + ": empty shape");
  return shape;
}

}  // namespace

int64_t TensorData::numel() const { return product(shape); }

std::string format_shape(std::span<const int64_t> shape) {
  std::string s;
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += 'x';
    s += std::to_string(shape[i]);
  }
  return s;
}

void write_tensor(const std::filesystem::path& path, std::span<const int64_t> shape,
                  std::span<const float> data) {
  if (static_cast<int64_t>(data.size()) != product(shape)) {
    throw IoError(path.string() + ": payload of " + std::to_string(data.size()) +
                  " values does not match shape " + format_shape(shape));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const auto header = make_header(shape);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  write_floats(out, data);
  if (!out) throw IoError("write failed: " + path.string());
}

TensorData read_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw IoError(path.string() + ": missing header");

  std::string magic, dtype, shape_text, order;
  std::stringstream ss(header);
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw IoError(path.string() + ": malformed header token '" + token + "'");
    const auto key = token.substr(0, eq);
    const auto value = token.substr(eq + 1);
    if (key == "magic") magic = value;
    else if (key == "dtype") dtype = value;
    else if (key == "shape") shape_text = value;
    else if (key == "byte_order") order = value;
  }
  if (magic != kMagic) throw IoError(path.string() + ": bad magic '" + magic + "'");
  if (dtype != "f32") throw IoError(path.string() + ": unsupported dtype '" + dtype + "'");
  if (order != "little") throw IoError(path.string() + ": unsupported byte order '" + order + "'");

  TensorData t;
  t.shape = parse_shape(shape_text, path);
  const auto n = t.numel();

  const auto payload_start = in.tellg();
  in.seekg(0, std::ios::end);
  const auto payload_bytes = static_cast<int64_t>(in.tellg() - payload_start);
  if (payload_bytes != 4 * n) {
    throw IoError(path.string() + ": payload is " + std::to_string(payload_bytes) + " bytes, expected " +
                  std::to_string(4 * n));
  }
  in.seekg(payload_start);
  t.data.resize(static_cast<size_t>(n));
  in.read(reinterpret_cast<char*>(t.data.data()), 4 * n);
  if (!in) throw IoError(path.string() + ": short read");
  if constexpr (std::endian::native != std::endian::little) {
    for (auto& v : t.data) v = std::bit_cast<float>(__builtin_bswap32(std::bit_cast<uint32_t>(v)));
  }
  return t;
}

TensorWriter::TensorWriter(const std::filesystem::path& path, std::vector<int64_t> shape)
    : path_(path), shape_(std::move(shape)), out_(path, std::ios::binary | std::ios::trunc) {
  if (!out_) throw IoError("cannot open " + path.string() + " for writing");
  expected_ = product(shape_);
  const auto header = make_header(shape_);
  out_.write(header.data(), static_cast<std::streamsize>(header.size()));
}

TensorWriter::~TensorWriter() = default;

void TensorWriter::append(std::span<const float> values) {
  if (written_ + static_cast<int64_t>(values.size()) > expected_) {
    throw IoError(path_.string() + ": more values appended than shape " + format_shape(shape_) + " holds");
  }
  write_floats(out_, values);
  written_ += static_cast<int64_t>(values.size());
}

void TensorWriter::close() {
  if (written_ != expected_) {
    throw IoError(path_.string() + ": wrote " + std::to_string(written_) + " of " + std::to_string(expected_) +
                  " values");
  }
  out_.close();
  if (!out_) throw IoError("write failed: " + path_.string());
}

}  // namespace tomotx

#include <cstring>
#include <fstream>
#include <iterator>

#include "wscl/data.hpp"
#include "wscl/error.hpp"

namespace wscl {

namespace {

constexpr char kMagic[8] = {'W', 'S', 'C', 'L', 'D', 'S', '0', '1'};

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw Error(ErrorCode::Truncated, std::string("file ends inside ") + what);
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint16_t u16(const char* what) {
    need(2, what);
    const auto v = static_cast<std::uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  }
  float f32(const char* what) {
    const std::uint32_t bits = u32(what);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_dataset(const LabeledDataset& dataset) {
  if (dataset.num_classes > 0xFFFF + 1u) throw Error(ErrorCode::InvalidData, "labels must fit in u16");
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_u32(out, static_cast<std::uint32_t>(dataset.size()));
  put_u32(out, static_cast<std::uint32_t>(dataset.sample_shape.size()));
  for (std::size_t d : dataset.sample_shape) put_u32(out, static_cast<std::uint32_t>(d));
  put_u32(out, static_cast<std::uint32_t>(dataset.num_classes));
  out.reserve(out.size() + dataset.features.size() * 4 + dataset.labels.size() * 2);
  for (float f : dataset.features) put_f32(out, f);
  for (int y : dataset.labels) put_u16(out, static_cast<std::uint16_t>(y));
  return out;
}

LabeledDataset decode_dataset(std::span<const std::uint8_t> bytes, const std::string& name) {
  Reader in(bytes);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
    throw Error(ErrorCode::BadMagic, "missing WSCLDS01 header");
  }
  in.take(8, "magic");
  LabeledDataset ds;
  ds.name = name;
  const std::uint32_t n = in.u32("header");
  const std::uint32_t ndims = in.u32("header");
  if (ndims == 0) throw Error(ErrorCode::InvalidData, "sample shape has no dimensions");
  in.need(static_cast<std::size_t>(ndims) * 4, "shape");
  for (std::uint32_t i = 0; i < ndims; ++i) {
    const std::uint32_t d = in.u32("shape");
    if (d == 0) throw Error(ErrorCode::InvalidData, "zero extent in sample shape");
    ds.sample_shape.push_back(d);
  }
  ds.num_classes = in.u32("header");
  const std::size_t values = static_cast<std::size_t>(n) * ds.sample_size();
  in.need(values * 4 + static_cast<std::size_t>(n) * 2, "payload");
  ds.features.resize(values);
  for (float& f : ds.features) f = in.f32("features");
  ds.labels.resize(n);
  for (int& y : ds.labels) y = in.u16("labels");
  if (in.remaining() != 0) throw Error(ErrorCode::InvalidData, "trailing bytes after labels");
  ds.refresh_class_set();
  ds.validate();
  return ds;
}

void save_dataset(const LabeledDataset& dataset, const std::filesystem::path& path) {
  const auto bytes = encode_dataset(dataset);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::Io, "cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::Io, "write failed for " + path.string());
}

LabeledDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_dataset(bytes, path.stem().string());
}

}  // namespace wscl

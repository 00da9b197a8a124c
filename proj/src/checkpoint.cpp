#include "mdg/checkpoint.hpp"

#include "mdg/binary_io.hpp"

namespace mdg {

namespace {
constexpr std::string_view kMagic = "MDGCKPT1";
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.bytes(kMagic);
  w.str(ckpt.config);
  w.u32(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    w.str(e.name);
    w.u32(static_cast<std::uint32_t>(e.tensor.rank()));
    for (std::size_t d : e.tensor.shape()) w.u64(d);
    for (double v : e.tensor.data()) w.f64(v);
  }
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  ByteReader r(bytes.data(), bytes.size(), "checkpoint");
  if (r.bytes(kMagic.size()) != kMagic) throw DataError("checkpoint: bad magic");
  Checkpoint ckpt;
  ckpt.config = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor e;
    e.name = r.str();
    const std::uint32_t rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    const std::size_t n = numel(shape);
    if (n > r.remaining() / 8) throw DataError("checkpoint: truncated tensor " + e.name);
    std::vector<double> values(n);
    for (auto& v : values) v = r.f64();
    e.tensor = Tensor(std::move(shape), std::move(values));
    ckpt.entries.push_back(std::move(e));
  }
  if (r.remaining() != 0) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace mdg

#include "fedseg/checkpoint.hpp"

#include <cstring>

#include "fedseg/io.hpp"

namespace fedseg {

namespace {

constexpr char kMagic[4] = {'F', 'S', 'E', 'G'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_f32(std::string& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, 4);
  put_u32(out, bits);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path)
      : buf_(buf), path_(path) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
    pos_ += 8;
    return v;
  }
  float f32() {
    const std::uint32_t bits = u32();
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) {
      throw_io("checkpoint truncated: " + path_);
    }
  }
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const ModelWeights& weights, const std::string& path) {
  std::string out;
  out.append(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(weights.entries.size()));
  for (const auto& e : weights.entries) {
    put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.append(e.name);
    put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (const std::int64_t d : e.tensor.shape())
      put_u64(out, static_cast<std::uint64_t>(d));
    for (std::int64_t i = 0; i < e.tensor.size(); ++i)
      put_f32(out, e.tensor[i]);
  }
  atomic_write_file(path, out);
}

ModelWeights load_checkpoint(const std::string& path) {
  const std::string buf = read_file(path);
  Reader r(buf, path);
  if (r.bytes(4) != std::string(kMagic, 4)) {
    throw_io("not a checkpoint file (bad magic): " + path);
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw_io("unsupported checkpoint version " + std::to_string(version) +
             ": " + path);
  }
  const std::uint32_t count = r.u32();
  ModelWeights w;
  w.entries.reserve(count);
  for (std::uint32_t t = 0; t < count; ++t) {
    const std::uint32_t name_len = r.u32();
    std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    if (rank > 8) throw_io("checkpoint rank out of range: " + path);
    std::vector<std::int64_t> shape(rank);
    for (auto& d : shape) d = static_cast<std::int64_t>(r.u64());
    Tensor tensor(shape);
    for (std::int64_t i = 0; i < tensor.size(); ++i) tensor[i] = r.f32();
    w.entries.push_back({std::move(name), std::move(tensor), true});
  }
  if (!r.done()) throw_io("trailing bytes in checkpoint: " + path);
  return w;
}

void apply_checkpoint(ModelWeights& target, const ModelWeights& loaded) {
  if (target.entries.size() != loaded.entries.size()) {
    throw_validation("checkpoint holds " +
                     std::to_string(loaded.entries.size()) +
                     " tensors, model expects " +
                     std::to_string(target.entries.size()));
  }
  for (auto& e : target.entries) {
    const int i = loaded.find(e.name);
    if (i < 0) {
      throw_validation("checkpoint is missing tensor " + e.name);
    }
    const Tensor& src = loaded.entries[static_cast<std::size_t>(i)].tensor;
    if (!src.same_shape(e.tensor)) {
      throw_validation("checkpoint tensor " + e.name + " has shape " +
                       src.shape_str() + ", model expects " +
                       e.tensor.shape_str());
    }
    e.tensor = src;
  }
}

}  // namespace fedseg

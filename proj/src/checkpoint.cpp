#include "blockdiff/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "blockdiff/error.hpp"

namespace blockdiff {
namespace {

constexpr char kMagic[4] = {'B', 'D', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) {
      out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
  }
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  double f64() { return std::bit_cast<double>(get(8)); }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool at_end() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) {
      throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t get(int width) {
    need(static_cast<std::size_t>(width));
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(in_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const ModelConfig& cfg, const ModelParams& params) {
  Writer w;
  w.bytes(kMagic, 4);
  w.u32(kCheckpointVersion);
  for (std::size_t v : {cfg.vocab_size, cfg.embed_dim, cfg.num_layers, cfg.num_heads,
                        cfg.max_seq_len, cfg.block_len, cfg.mask_token_id, cfg.think_open_id,
                        cfg.think_close_id, cfg.eos_id}) {
    w.u64(v);
  }
  w.f64(cfg.init_std);
  const auto named = params.named();
  w.u32(static_cast<std::uint32_t>(named.size()));
  for (const auto& [name, t] : named) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.bytes(name.data(), name.size());
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) {
      w.u64(d);
    }
    for (double v : t.values()) {
      w.f64(v);
    }
  }
  return w.take();
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) {
    throw FormatError("not a checkpoint: bad magic");
  }
  if (const std::uint32_t version = r.u32(); version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  ModelConfig& c = ck.config;
  for (std::size_t* field : {&c.vocab_size, &c.embed_dim, &c.num_layers, &c.num_heads,
                             &c.max_seq_len, &c.block_len, &c.mask_token_id, &c.think_open_id,
                             &c.think_close_id, &c.eos_id}) {
    *field = static_cast<std::size_t>(r.u64());
  }
  c.init_std = r.f64();
  c.validate();

  // Shapes come from the config; the file must agree name by name.
  ck.params = init_params(c, 0);
  auto named = ck.params.named();
  const std::uint32_t count = r.u32();
  if (count != named.size()) {
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, config implies " +
                      std::to_string(named.size()));
  }
  for (auto& [name, t] : named) {
    const std::string got = r.str(r.u32());
    if (got != name) {
      throw FormatError("checkpoint tensor '" + got + "' where '" + name + "' was expected");
    }
    Shape shape(r.u32());
    for (auto& d : shape) {
      d = static_cast<std::size_t>(r.u64());
    }
    if (shape != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' has shape " + shape_string(shape) +
                        ", expected " + shape_string(t.shape()));
    }
    for (double& v : t.mutable_values()) {
      v = r.f64();
    }
  }
  if (!r.at_end()) {
    throw FormatError("trailing bytes after checkpoint payload");
  }
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg,
                     const ModelParams& params) {
  const auto bytes = encode_checkpoint(cfg, params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw FormatError("cannot write checkpoint " + path.string());
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw FormatError("short write to checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw FormatError("cannot open checkpoint " + path.string());
  }
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace blockdiff

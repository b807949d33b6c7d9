#include "sfusion/checkpoint.h"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "sfusion/error.h"

namespace sfusion {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  void tensor(const ad::Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    for (double v : t.values()) f64(v);
  }
  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write checkpoint '" + path + "'");
    out.write(bytes_.data(), static_cast<std::streamsize>(bytes_.size()));
    if (!out) throw IoError("write failed for checkpoint '" + path + "'");
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(const std::string& path) : path_(path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint '" + path + "'");
    bytes_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(get(4, what)); }
  std::uint64_t u64(const char* what) { return get(8, what); }
  double f64(const char* what) { return std::bit_cast<double>(get(8, what)); }
  void expect_magic() {
    need(4, "magic");
    if (std::memcmp(bytes_.data(), kMagic, 4) != 0) fail("bad magic bytes, not a checkpoint");
    pos_ = 4;
  }
  void tensor_into(ad::Tensor& t, std::size_t index) {
    std::uint32_t rank = u32("tensor rank");
    if (rank != t.rank()) fail("tensor " + std::to_string(index) + " rank mismatch");
    for (std::size_t i = 0; i < rank; ++i) {
      if (u64("tensor dim") != t.shape()[i]) {
        fail("tensor " + std::to_string(index) + " shape mismatch");
      }
    }
    need(8 * t.size(), "tensor payload");
    for (double& v : t.values()) v = f64("tensor value");
  }
  void expect_end() {
    if (pos_ != bytes_.size()) fail("trailing bytes after last tensor");
  }
  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError("checkpoint '" + path_ + "': " + msg);
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > bytes_.size()) {
      fail(std::string("truncated while reading ") + what + " at byte " + std::to_string(pos_));
    }
  }
  std::uint64_t get(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::string path_;
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

void write_common(Writer& w, ModelKind kind, std::uint64_t vocab_hash,
                  const std::vector<std::uint64_t>& dims,
                  const std::vector<const ad::Tensor*>& params) {
  w.raw(kMagic, 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(kind));
  w.u64(vocab_hash);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.u64(d);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto* p : params) w.tensor(*p);
}

std::vector<std::uint64_t> read_header(Reader& r, ModelKind kind, std::uint64_t vocab_hash) {
  r.expect_magic();
  std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    r.fail("format version " + std::to_string(version) + " is not supported (expected " +
           std::to_string(kCheckpointVersion) + ")");
  }
  std::uint32_t k = r.u32("model kind");
  if (k != static_cast<std::uint32_t>(kind)) r.fail("holds a different model kind");
  std::uint64_t h = r.u64("vocab hash");
  if (h != vocab_hash) r.fail("vocabulary hash mismatch; checkpoint was trained on another vocabulary");
  std::uint32_t n = r.u32("dims count");
  if (n > 64) r.fail("implausible dims count");
  std::vector<std::uint64_t> dims(n);
  for (auto& d : dims) d = r.u64("dims");
  return dims;
}

void read_tensors(Reader& r, const std::vector<ad::Tensor*>& params) {
  std::uint32_t n = r.u32("tensor count");
  if (n != params.size()) r.fail("tensor count does not match the declared dims");
  for (std::size_t i = 0; i < params.size(); ++i) r.tensor_into(*params[i], i);
  r.expect_end();
}

}  // namespace

void save_checkpoint(const LstmLm& lm, std::uint64_t vocab_hash, const std::string& path) {
  const LmConfig& c = lm.config();
  Writer w;
  write_common(w, ModelKind::kLm, vocab_hash,
               {c.vocab_size, c.embed_dim, c.hidden, c.projection, c.layers}, lm.parameters());
  w.save(path);
}

void save_checkpoint(const AttentionAm& am, std::uint64_t vocab_hash, const std::string& path) {
  const AmConfig& c = am.config();
  Writer w;
  write_common(w, ModelKind::kAm, vocab_hash,
               {c.vocab_size, c.feature_dim, c.embed_dim, c.encoder_hidden, c.decoder_hidden,
                c.attention_dim, c.feature_table_seed},
               am.parameters());
  w.save(path);
}

LstmLm load_lm_checkpoint(const std::string& path, std::uint64_t vocab_hash) {
  Reader r(path);
  auto dims = read_header(r, ModelKind::kLm, vocab_hash);
  if (dims.size() != 5) r.fail("language model header needs 5 dims");
  LmConfig c{dims[0], dims[1], dims[2], dims[3], dims[4]};
  if (c.layers == 0 || c.layers > 16) r.fail("implausible layer count");
  for (std::size_t i = 0; i < 4; ++i) {
    if (dims[i] > (1u << 16) || (i < 3 && dims[i] == 0)) r.fail("implausible model dims");
  }
  LstmLm lm = [&] {
    try {
      return LstmLm(c, 0);
    } catch (const ContractError& e) {
      r.fail(std::string("invalid dims: ") + e.what());
    }
  }();
  read_tensors(r, lm.parameters());
  return lm;
}

AttentionAm load_am_checkpoint(const std::string& path, std::uint64_t vocab_hash) {
  Reader r(path);
  auto dims = read_header(r, ModelKind::kAm, vocab_hash);
  if (dims.size() != 7) r.fail("acoustic model header needs 7 dims");
  AmConfig c{dims[0], dims[1], dims[2], dims[3], dims[4], dims[5], dims[6]};
  for (std::size_t i = 0; i < 6; ++i) {
    if (dims[i] == 0 || dims[i] > (1u << 16)) r.fail("implausible model dims");
  }
  AttentionAm am = [&] {
    try {
      return AttentionAm(c, 0);
    } catch (const ContractError& e) {
      r.fail(std::string("invalid dims: ") + e.what());
    }
  }();
  read_tensors(r, am.parameters());
  return am;
}

}  // namespace sfusion

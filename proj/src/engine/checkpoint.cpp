// SPDX-License-Identifier: Apache-2.0

#include "burnlora/engine/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <unordered_map>

#include "burnlora/dataplane/scene.hpp"
#include "burnlora/diffcore/rng.hpp"
#include "burnlora/errors.hpp"

namespace burnlora::engine {

namespace {

constexpr std::string_view kMagic{"BLCKPT\r\n", 8};

class Writer {
 public:
  template <typename U>
  void put(U value) {
    if constexpr (std::is_floating_point_v<U>) {
      using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
      put(std::bit_cast<Bits>(value));
    } else {
      auto u = static_cast<std::make_unsigned_t<U>>(value);
      for (std::size_t i = 0; i < sizeof(U); ++i) {
        out_.push_back(static_cast<char>(u & 0xff));
        if constexpr (sizeof(U) > 1) u >>= 8;
      }
    }
  }
  void put_string(std::string_view s) {
    put(static_cast<std::uint32_t>(s.size()));
    out_.append(s);
  }
  void raw(std::string_view s) { out_.append(s); }
  std::string& bytes() { return out_; }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view bytes) : in_(bytes) {}

  template <typename U>
  U get(const char* what) {
    need(sizeof(U), what);
    if constexpr (std::is_floating_point_v<U>) {
      using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
      return std::bit_cast<U>(get<Bits>(what));
    } else {
      std::make_unsigned_t<U> u = 0;
      for (std::size_t i = 0; i < sizeof(U); ++i) {
        u |= static_cast<std::make_unsigned_t<U>>(static_cast<unsigned char>(in_[pos_ + i])) << (8 * i);
      }
      pos_ += sizeof(U);
      return static_cast<U>(u);
    }
  }
  std::string_view take(std::size_t n, const char* what) {
    need(n, what);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::string get_string(const char* what) {
    const auto n = get<std::uint32_t>(what);
    return std::string(take(n, what));
  }
  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return in_.size() - pos_; }
  [[noreturn]] void fail(const std::string& msg) const {
    throw FormatError("checkpoint: " + msg + " at offset " + std::to_string(pos_));
  }

 private:
  void need(std::size_t n, const char* what) const {
    if (in_.size() - pos_ < n) fail(std::string("truncated while reading ") + what);
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

std::uint8_t dtype_code(diffcore::DType d) { return d == diffcore::DType::f32 ? 0 : 1; }

struct Header {
  std::uint64_t hash;
  diffcore::DType dtype;
  std::int64_t step;
  double best;
  std::int64_t opt_step;
  std::string architecture;
};

Header read_header(Reader& r) {
  if (r.take(kMagic.size(), "magic") != kMagic) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) r.fail("unsupported version " + std::to_string(version));
  Header h{};
  h.hash = r.get<std::uint64_t>("architecture hash");
  const auto code = r.get<std::uint8_t>("dtype");
  if (code > 1) r.fail("unknown dtype code " + std::to_string(code));
  h.dtype = code == 0 ? diffcore::DType::f32 : diffcore::DType::f64;
  h.step = r.get<std::int64_t>("step");
  h.best = r.get<double>("best_val_iou");
  h.opt_step = r.get<std::int64_t>("optimizer step");
  h.architecture = r.get_string("architecture");
  return h;
}

void verify_checksum(std::string_view bytes) {
  if (bytes.size() < kMagic.size() + 8) throw FormatError("checkpoint: truncated at offset " + std::to_string(bytes.size()));
  const auto body = bytes.substr(0, bytes.size() - 8);
  Reader tail(bytes.substr(bytes.size() - 8));
  const auto stored = tail.get<std::uint64_t>("checksum");
  if (stored != diffcore::fnv1a64(body)) {
    throw FormatError("checkpoint: checksum mismatch at offset " + std::to_string(body.size()));
  }
}

}  // namespace

template <typename T>
std::string encode_checkpoint(const Checkpoint<T>& ckpt) {
  Writer w;
  w.raw(kMagic);
  w.put(kCheckpointVersion);
  w.put(ckpt.architecture_hash);
  w.put(dtype_code(diffcore::dtype_of<T>()));
  w.put(ckpt.step);
  w.put(ckpt.best_val_iou);
  w.put(ckpt.optimizer_step);
  w.put_string(ckpt.architecture);
  w.put(static_cast<std::uint32_t>(ckpt.entries.size()));
  for (const auto& e : ckpt.entries) {
    if (static_cast<std::int64_t>(e.values.size()) != diffcore::numel(e.shape)) {
      throw ContractError("checkpoint entry " + e.name + ": values do not match shape");
    }
    w.put(static_cast<std::uint8_t>(e.kind));
    w.put(static_cast<std::uint8_t>(e.trainable ? 1 : 0));
    w.put_string(e.name);
    w.put(static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) w.put(d);
    for (T v : e.values) w.put(v);
  }
  auto& bytes = w.bytes();
  w.put(diffcore::fnv1a64(bytes));
  return std::move(bytes);
}

template <typename T>
Checkpoint<T> decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < kMagic.size() || bytes.substr(0, kMagic.size()) != kMagic) {
    throw FormatError("checkpoint: bad magic at offset 0");
  }
  verify_checksum(bytes);
  Reader body(bytes.substr(0, bytes.size() - 8));
  const auto h = read_header(body);
  if (h.dtype != diffcore::dtype_of<T>()) {
    body.fail(std::string("stored dtype ") + diffcore::dtype_name(h.dtype) + " does not match requested " +
              diffcore::dtype_name(diffcore::dtype_of<T>()));
  }
  Checkpoint<T> c;
  c.architecture_hash = h.hash;
  c.architecture = h.architecture;
  c.step = h.step;
  c.best_val_iou = h.best;
  c.optimizer_step = h.opt_step;
  const auto count = body.get<std::uint32_t>("entry count");
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointEntry<T> e;
    const auto kind = body.get<std::uint8_t>("entry kind");
    if (kind > 2) body.fail("unknown entry kind " + std::to_string(kind));
    e.kind = static_cast<EntryKind>(kind);
    const auto flag = body.get<std::uint8_t>("trainable flag");
    if (flag > 1) body.fail("bad trainable flag");
    e.trainable = flag == 1;
    e.name = body.get_string("entry name");
    const auto rank = body.get<std::uint32_t>("rank");
    if (rank > 8) body.fail("implausible rank " + std::to_string(rank));
    std::int64_t n = 1;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const auto d = body.get<std::int64_t>("dimension");
      if (d <= 0) body.fail("non-positive dimension in " + e.name);
      e.shape.push_back(d);
      n *= d;
      if (static_cast<std::size_t>(n) > body.remaining() / sizeof(T) + 1) body.fail("entry " + e.name + " exceeds file");
    }
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) v = body.get<T>("values");
    c.entries.push_back(std::move(e));
  }
  if (body.remaining() != 0) body.fail("trailing bytes");
  return c;
}

CheckpointInfo peek_checkpoint(std::string_view bytes) {
  verify_checksum(bytes);
  Reader r(bytes);
  const auto h = read_header(r);
  return {h.hash, h.architecture, h.dtype};
}

template <typename T>
Checkpoint<T> capture(const ModelAssembly<T>& model, const diffcore::Adam<T>* optimizer, std::int64_t step,
                      double best_val_iou) {
  if (!model.store().materialized()) throw ContractError("cannot checkpoint a shape-only model");
  Checkpoint<T> c;
  c.architecture = model.architecture().dump();
  c.architecture_hash = model.architecture_hash();
  c.step = step;
  c.best_val_iou = best_val_iou;
  for (const auto& p : model.store().params()) {
    const auto d = p.tensor.data();
    c.entries.push_back({EntryKind::parameter, p.trainable, p.name, p.shape, std::vector<T>(d.begin(), d.end())});
  }
  if (optimizer) {
    c.optimizer_step = optimizer->step_count();
    for (const auto& [name, slot] : optimizer->slots()) {
      const auto& shape = model.store().at(name).shape;
      c.entries.push_back({EntryKind::adam_m, true, name, shape, slot.m});
      c.entries.push_back({EntryKind::adam_v, true, name, shape, slot.v});
    }
  }
  return c;
}

template <typename T>
void restore(const Checkpoint<T>& ckpt, ModelAssembly<T>& model, diffcore::Adam<T>* optimizer, bool force) {
  if (ckpt.architecture_hash != model.architecture_hash() && !force) {
    throw ConfigError("checkpoint architecture hash " + std::to_string(ckpt.architecture_hash) +
                      " does not match the model (" + std::to_string(model.architecture_hash()) +
                      "); pass force to load matching tensors anyway");
  }
  auto& store = model.store();
  for (const auto& e : ckpt.entries) {
    auto* p = store.find(e.name);
    if (!p || p->shape != e.shape) {
      if (force) continue;
      throw FormatError("checkpoint entry " + e.name + " has no matching parameter");
    }
    if (e.kind == EntryKind::parameter) {
      auto dst = p->tensor.mutable_data();
      std::copy(e.values.begin(), e.values.end(), dst.begin());
    } else if (optimizer) {
      auto& slot = optimizer->slots()[e.name];
      (e.kind == EntryKind::adam_m ? slot.m : slot.v) = e.values;
    }
  }
  if (optimizer) {
    optimizer->set_step_count(ckpt.optimizer_step);
    for (auto& [name, slot] : optimizer->slots()) {
      if (slot.m.size() != slot.v.size()) throw FormatError("checkpoint: incomplete optimizer state for " + name);
    }
  }
}

template <typename T>
void save_checkpoint(const Checkpoint<T>& ckpt, const std::filesystem::path& path) {
  dataplane::write_file(path, encode_checkpoint(ckpt));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint<T>(dataplane::read_file(path));
}

#define BURNLORA_INSTANTIATE_CKPT(T)                                                                           \
  template std::string encode_checkpoint(const Checkpoint<T>&);                                                \
  template Checkpoint<T> decode_checkpoint(std::string_view);                                                  \
  template Checkpoint<T> capture(const ModelAssembly<T>&, const diffcore::Adam<T>*, std::int64_t, double);     \
  template void restore(const Checkpoint<T>&, ModelAssembly<T>&, diffcore::Adam<T>*, bool);                    \
  template void save_checkpoint(const Checkpoint<T>&, const std::filesystem::path&);                           \
  template Checkpoint<T> load_checkpoint(const std::filesystem::path&);

BURNLORA_INSTANTIATE_CKPT(float)
BURNLORA_INSTANTIATE_CKPT(double)

}  // namespace burnlora::engine

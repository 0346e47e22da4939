#include "tabl/model_io.hpp"

#include <openssl/evp.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "tabl/errors.hpp"

namespace tabl {

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::string_view kModelMagic = "TABLMODL";
constexpr std::string_view kAuxMagic = "TABLAUX1";

class Writer {
 public:
  void raw(std::string_view s) { out_.append(s); }
  void u8(std::uint8_t v) { out_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(std::string_view s) {
    u64(s.size());
    raw(s);
  }
  void tensor(std::string_view name, std::span<const double> values) {
    str(name);
    u64(values.size());
    for (double v : values) f64(v);
  }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}

  std::string_view raw(std::size_t n) {
    need(n);
    auto s = in_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8() { return static_cast<std::uint8_t>(raw(1)[0]); }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint64_t n = u64();
    return std::string(raw(n));
  }
  void tensor_into(const std::string& expect_name, std::span<double> dst) {
    const std::string name = str();
    if (name != expect_name) {
      throw ParseError("expected tensor '" + expect_name + "', found '" + name + "'");
    }
    const std::uint64_t n = u64();
    if (n != dst.size()) {
      throw ParseError("tensor '" + name + "' has " + std::to_string(n) + " values, expected " +
                       std::to_string(dst.size()));
    }
    for (double& v : dst) v = f64();
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > in_.size()) throw ParseError("model container is truncated");
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_topology(Writer& w, const Topology& t) {
  w.str(t.name);
  w.u64(t.input_d);
  w.u64(t.input_t);
  w.u64(t.layers.size());
  for (const LayerSpec& l : t.layers) {
    w.u8(static_cast<std::uint8_t>(l.kind));
    w.u64(l.a);
    w.u64(l.b);
    w.u8(static_cast<std::uint8_t>(l.activation));
    w.u8(static_cast<std::uint8_t>(l.padding));
  }
}

Topology read_topology(Reader& r) {
  Topology t;
  t.name = r.str();
  t.input_d = r.u64();
  t.input_t = r.u64();
  const std::uint64_t n = r.u64();
  if (n > 4096) throw ParseError("implausible layer count " + std::to_string(n));
  for (std::uint64_t i = 0; i < n; ++i) {
    LayerSpec l;
    const std::uint8_t kind = r.u8();
    if (kind > 3) throw ParseError("unknown layer kind " + std::to_string(kind));
    l.kind = static_cast<LayerKind>(kind);
    l.a = r.u64();
    l.b = r.u64();
    const std::uint8_t act = r.u8();
    if (act > 2) throw ParseError("unknown activation code " + std::to_string(act));
    l.activation = static_cast<Activation>(act);
    const std::uint8_t pad = r.u8();
    if (pad > 1) throw ParseError("unknown padding code " + std::to_string(pad));
    l.padding = static_cast<Padding>(pad);
    t.layers.push_back(l);
  }
  return t;
}

bool is_aux_tensor(const std::string& name) {
  return name.find(".aux.") != std::string::npos || name.find(".cp.") != std::string::npos;
}

bool is_lambda(const std::string& name) {
  return name.size() >= 7 && name.compare(name.size() - 7, 7, ".lambda") == 0;
}

std::string base_bytes(const Model& model) {
  Writer w;
  write_topology(w, model.topology);
  Model& m = const_cast<Model&>(model);  // parameters() only reads here
  for (const ParamRef& p : parameters(m))
    if (!is_aux_tensor(p.name)) w.tensor(p.name, p.values);
  return w.take();
}

void write_aux_section(Writer& w, const Model& model) {
  w.str(model.base_hash);
  w.u64(model.rank);
  w.u8(static_cast<std::uint8_t>(model.strategy));
  w.u8(model.train_lambda ? 1 : 0);
  Model& m = const_cast<Model&>(model);
  for (const ParamRef& p : parameters(m)) {
    if (is_aux_tensor(p.name) || (model.train_lambda && is_lambda(p.name))) {
      w.tensor(p.name, p.values);
    }
  }
}

Model read_aux_section(Reader& r, const Model& base, bool verify_hash) {
  const std::string hash = r.str();
  if (verify_hash) {
    const std::string actual = content_hash(base);
    if (hash != actual) {
      throw IntegrityError("aux factors were trained against base " + hash.substr(0, 16) +
                           "..., this base hashes to " + actual.substr(0, 16) + "...");
    }
  }
  const std::uint64_t rank = r.u64();
  const std::uint8_t strat = r.u8();
  if (strat != 1 && strat != 2) throw ParseError("unknown strategy code " + std::to_string(strat));
  const bool train_lambda = r.u8() != 0;
  Model m = augment(base, rank, static_cast<Strategy>(strat), 0, train_lambda);
  m.base_hash = hash;
  for (ParamRef& p : parameters(m)) {
    if (is_aux_tensor(p.name) || (train_lambda && is_lambda(p.name))) r.tensor_into(p.name, p.values);
  }
  return m;
}

}  // namespace

std::string sha256_hex(std::string_view bytes) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
    throw StateError("SHA-256 computation failed");
  }
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 15]);
  }
  return out;
}

std::string content_hash(const Model& model) { return sha256_hex(base_bytes(model)); }

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + tmp.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write to " + tmp.string() + " failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::string serialize_model(const Model& model) {
  Writer w;
  w.raw(kModelMagic);
  w.u32(kVersion);
  const Model base = base_of(model);
  w.raw(base_bytes(model));
  w.str(model.adapted() ? model.base_hash : content_hash(base));
  w.u8(model.adapted() ? 1 : 0);
  if (model.adapted()) write_aux_section(w, model);
  return w.take();
}

Model deserialize_model(std::string_view bytes) {
  Reader r(bytes);
  if (r.raw(kModelMagic.size()) != kModelMagic) throw ParseError("not a model container");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IntegrityError("unsupported container version " + std::to_string(version));
  }
  Model m = build(read_topology(r), 0);
  for (ParamRef& p : parameters(m)) r.tensor_into(p.name, p.values);
  const std::string stored_hash = r.str();
  if (r.u8() != 0) {
    Reader& ar = r;
    const std::string inner = content_hash(m);
    m = read_aux_section(ar, m, false);
    // With a trainable lambda the stored base may differ from the attached one.
    if (!m.train_lambda && inner != m.base_hash) {
      throw IntegrityError("aux section does not belong to the stored base");
    }
  } else if (stored_hash != content_hash(m)) {
    throw IntegrityError("stored base hash does not match the tensors");
  }
  if (!r.done()) throw ParseError("trailing bytes after model container");
  return m;
}

std::string serialize_aux(const Model& model) {
  if (!model.adapted()) throw StateError("model has no auxiliary factors to save");
  Writer w;
  w.raw(kAuxMagic);
  w.u32(kVersion);
  write_aux_section(w, model);
  return w.take();
}

Model attach_aux(const Model& base, std::string_view aux_bytes) {
  if (base.adapted()) throw StateError("attach_aux expects a plain base model");
  Reader r(aux_bytes);
  if (r.raw(kAuxMagic.size()) != kAuxMagic) throw ParseError("not an aux sidecar");
  const std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw IntegrityError("unsupported sidecar version " + std::to_string(version));
  }
  Model m = read_aux_section(r, base, true);
  if (!r.done()) throw ParseError("trailing bytes after aux sidecar");
  return m;
}

void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_model(model));
}

Model load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

void save_aux(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, serialize_aux(model));
}

Model load_aux(const Model& base, const std::filesystem::path& path) {
  return attach_aux(base, read_file(path));
}

}  // namespace tabl

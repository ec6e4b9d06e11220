#include "gdmae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <unordered_map>

namespace gdmae {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

CheckpointArray CheckpointArray::from_f64(std::string name, Shape dims, std::vector<double> values) {
  if (numel(dims) != values.size()) throw ShapeError("checkpoint array " + name + ": shape/payload mismatch");
  CheckpointArray a;
  a.name = std::move(name);
  a.dtype = DType::F64;
  a.dims = std::move(dims);
  a.f64 = std::move(values);
  return a;
}

CheckpointArray CheckpointArray::from_u64(std::string name, std::vector<std::uint64_t> values) {
  CheckpointArray a;
  a.name = std::move(name);
  a.dtype = DType::U64;
  a.dims = {values.size()};
  a.u64 = std::move(values);
  return a;
}

CheckpointArray CheckpointArray::from_bytes(std::string name, const std::string& bytes) {
  CheckpointArray a;
  a.name = std::move(name);
  a.dtype = DType::U8;
  a.dims = {bytes.size()};
  a.u8.assign(bytes.begin(), bytes.end());
  return a;
}

const CheckpointArray* Checkpoint::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

const CheckpointArray& Checkpoint::get(const std::string& name) const {
  const auto* a = find(name);
  if (!a) throw CheckpointError("checkpoint has no array named '" + name + "'");
  return *a;
}

namespace {

template <class T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

struct Reader {
  const std::vector<std::uint8_t>& bytes;
  std::size_t pos = 0;

  void need(std::size_t n, const std::string& what) const {
    if (bytes.size() - pos < n) {
      throw TruncatedCheckpointError("truncated checkpoint: expected " + std::to_string(n) + " more bytes for " + what +
                                     " at offset " + std::to_string(pos));
    }
  }
  template <class T>
  T get(const std::string& what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
  }
  void read(void* dst, std::size_t n, const std::string& what) {
    need(n, what);
    if (n) std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  }
};

std::size_t dtype_size(DType d) { return d == DType::F64 || d == DType::U64 ? 8 : 1; }

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + sizeof(kCheckpointMagic));
  out.push_back(kCheckpointVersion);
  for (const auto& a : ckpt.arrays) {
    if (a.dims.size() > 255) throw CheckpointError("checkpoint array " + a.name + " has too many dimensions");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
    out.insert(out.end(), a.name.begin(), a.name.end());
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dtype));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(a.dims.size()));
    for (auto d : a.dims) put<std::uint64_t>(out, d);
    const std::size_t n = numel(a.dims);
    const std::uint8_t* payload = nullptr;
    std::size_t have = 0;
    switch (a.dtype) {
      case DType::F64: payload = reinterpret_cast<const std::uint8_t*>(a.f64.data()), have = a.f64.size(); break;
      case DType::U64: payload = reinterpret_cast<const std::uint8_t*>(a.u64.data()), have = a.u64.size(); break;
      case DType::U8: payload = a.u8.data(), have = a.u8.size(); break;
    }
    if (have != n) throw CheckpointError("checkpoint array " + a.name + ": payload does not match its shape");
    out.insert(out.end(), payload, payload + n * dtype_size(a.dtype));
  }
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw NotACheckpointError("not a checkpoint: bad magic bytes");
  }
  if (bytes.size() < sizeof(kCheckpointMagic) + 1) throw TruncatedCheckpointError("truncated checkpoint: missing version");
  const std::uint8_t version = bytes[sizeof(kCheckpointMagic)];
  if (version != kCheckpointVersion) {
    throw VersionMismatchError("checkpoint version " + std::to_string(version) + " not supported (expected " +
                               std::to_string(kCheckpointVersion) + ")");
  }
  Reader r{bytes, sizeof(kCheckpointMagic) + 1};
  Checkpoint ckpt;
  while (r.pos < bytes.size()) {
    CheckpointArray a;
    const auto len = r.get<std::uint32_t>("name length");
    a.name.resize(len);
    r.read(a.name.data(), len, "name");
    const auto dtype = r.get<std::uint8_t>("dtype of " + a.name);
    if (dtype > 2) throw CheckpointError("checkpoint array " + a.name + ": unknown dtype " + std::to_string(dtype));
    a.dtype = static_cast<DType>(dtype);
    const auto ndim = r.get<std::uint8_t>("ndim of " + a.name);
    for (std::uint8_t d = 0; d < ndim; ++d) a.dims.push_back(r.get<std::uint64_t>("dims of " + a.name));
    const std::size_t n = numel(a.dims);
    const std::size_t size = dtype_size(a.dtype);
    if (n > (bytes.size() - r.pos) / size) r.need(n * size, "payload of " + a.name);
    switch (a.dtype) {
      case DType::F64: a.f64.resize(n), r.read(a.f64.data(), n * size, a.name); break;
      case DType::U64: a.u64.resize(n), r.read(a.u64.data(), n * size, a.name); break;
      case DType::U8: a.u8.resize(n), r.read(a.u8.data(), n, a.name); break;
    }
    ckpt.arrays.push_back(std::move(a));
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw CheckpointError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path);
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

void restore_params(const Checkpoint& ckpt, const std::string& prefix, const ParamList& params) {
  std::unordered_map<std::string, const NamedTensor*> by_name;
  for (const auto& p : params) by_name[p.name] = &p;
  std::size_t restored = 0;
  for (const auto& a : ckpt.arrays) {
    if (a.name.compare(0, prefix.size(), prefix) != 0) continue;
    const std::string name = a.name.substr(prefix.size());
    const auto it = by_name.find(name);
    if (it == by_name.end()) throw UnknownArrayError("unknown array name '" + a.name + "' in checkpoint");
    Tensor t = it->second->tensor;
    if (a.dtype != DType::F64 || a.dims != t.shape()) {
      throw ShapeError("checkpoint array " + a.name + " has shape " + shape_str(a.dims) + ", parameter expects " +
                       shape_str(t.shape()));
    }
    std::copy(a.f64.begin(), a.f64.end(), t.mutable_data().begin());
    ++restored;
  }
  if (restored != params.size()) {
    for (const auto& p : params) {
      if (!ckpt.find(prefix + p.name)) throw CheckpointError("checkpoint is missing parameter '" + prefix + p.name + "'");
    }
  }
}

}  // namespace gdmae

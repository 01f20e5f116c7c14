#include "windformer/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace windformer {
namespace {

constexpr char kMagic[8] = {'W', 'F', 'C', 'K', 'P', 'T', '0', '1'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U bits) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

template <typename U>
U get_le(const std::uint8_t* p) {
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return bits;
}

template <typename V>
std::vector<std::uint8_t> to_bytes(std::span<const V> values) {
  std::vector<std::uint8_t> out;
  out.reserve(values.size() * sizeof(V));
  for (V v : values) {
    if constexpr (sizeof(V) == 4)
      put_le(out, std::bit_cast<std::uint32_t>(v));
    else
      put_le(out, std::bit_cast<std::uint64_t>(v));
  }
  return out;
}

template <typename V>
std::vector<V> from_bytes(const std::vector<std::uint8_t>& bytes) {
  std::vector<V> out(bytes.size() / sizeof(V));
  for (std::size_t i = 0; i < out.size(); ++i) {
    if constexpr (sizeof(V) == 4)
      out[i] = std::bit_cast<V>(get_le<std::uint32_t>(bytes.data() + i * 4));
    else
      out[i] = std::bit_cast<V>(get_le<std::uint64_t>(bytes.data() + i * 8));
  }
  return out;
}

DType parse_dtype(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  if (s == "i64") return DType::i64;
  throw CheckpointError("unknown dtype '" + s + "' in checkpoint manifest");
}

template <typename T>
constexpr DType dtype_of() {
  return sizeof(T) == 4 ? DType::f32 : DType::f64;
}

template <typename T>
std::vector<T> decode_floats(const ArchiveEntry& e) {
  std::vector<T> out;
  if (e.dtype == DType::f32) {
    for (float v : from_bytes<float>(e.payload)) out.push_back(static_cast<T>(v));
  } else if (e.dtype == DType::f64) {
    for (double v : from_bytes<double>(e.payload)) out.push_back(static_cast<T>(v));
  } else {
    throw CheckpointError("entry '" + e.name + "' is not floating point");
  }
  return out;
}

}  // namespace

std::string_view dtype_name(DType dtype) {
  switch (dtype) {
    case DType::f32:
      return "f32";
    case DType::f64:
      return "f64";
    case DType::i64:
      return "i64";
  }
  return "?";
}

std::size_t dtype_size(DType dtype) { return dtype == DType::f32 ? 4 : 8; }

const ArchiveEntry* Archive::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

std::vector<std::string> Archive::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries) out.push_back(e.name);
  return out;
}

std::vector<std::uint8_t> encode_archive(const Archive& archive) {
  nlohmann::json tensors = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : archive.entries) {
    if (e.payload.size() != shape_numel(e.shape) * dtype_size(e.dtype))
      throw CheckpointError("entry '" + e.name + "' payload size does not match its shape");
    tensors.push_back({{"name", e.name},
                       {"kind", e.kind},
                       {"dtype", dtype_name(e.dtype)},
                       {"shape", e.shape},
                       {"offset", offset},
                       {"nbytes", e.payload.size()}});
    offset += e.payload.size();
  }
  const nlohmann::json manifest{{"metadata", archive.metadata}, {"tensors", tensors}};
  const std::string text = manifest.dump();

  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& e : archive.entries) out.insert(out.end(), e.payload.begin(), e.payload.end());
  return out;
}

Archive decode_archive(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0)
    throw CheckpointError("not a windformer checkpoint (bad magic)");
  const auto manifest_len = get_le<std::uint64_t>(bytes.data() + 8);
  if (16 + manifest_len > bytes.size()) throw CheckpointError("truncated checkpoint manifest");
  const std::string text(reinterpret_cast<const char*>(bytes.data() + 16), manifest_len);
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint manifest: ") + e.what());
  }
  const std::size_t payload_start = 16 + manifest_len;
  Archive archive;
  archive.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& t : manifest.at("tensors")) {
    ArchiveEntry e;
    e.name = t.at("name").get<std::string>();
    e.kind = t.value("kind", "parameter");
    e.dtype = parse_dtype(t.at("dtype").get<std::string>());
    e.shape = t.at("shape").get<Shape>();
    const auto off = t.at("offset").get<std::uint64_t>();
    const auto nbytes = t.at("nbytes").get<std::uint64_t>();
    if (nbytes != shape_numel(e.shape) * dtype_size(e.dtype))
      throw CheckpointError("entry '" + e.name + "' size disagrees with its shape");
    if (payload_start + off + nbytes > bytes.size())
      throw CheckpointError("entry '" + e.name + "' runs past the end of the file");
    const auto* begin = bytes.data() + payload_start + off;
    e.payload.assign(begin, begin + nbytes);
    archive.entries.push_back(std::move(e));
  }
  return archive;
}

void write_archive(const std::filesystem::path& path, const Archive& archive) {
  const auto bytes = encode_archive(archive);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing '" + path.string() + "'");
}

Archive read_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_archive(bytes);
}

template <typename T>
Archive capture_module(const Module<T>& module, nlohmann::json metadata) {
  Archive archive;
  archive.metadata = std::move(metadata);
  for (const auto& p : module.parameters())
    archive.entries.push_back({p.name, "parameter", dtype_of<T>(), p.tensor.shape(),
                               to_bytes<T>(p.tensor.data())});
  for (const auto& bn : module.batchnorm_states()) {
    const auto& st = *bn.state;
    const Shape shape{st.running_mean.size()};
    archive.entries.push_back({bn.name + ".running_mean", "buffer", dtype_of<T>(), shape,
                               to_bytes<T>(std::span<const T>(st.running_mean))});
    archive.entries.push_back({bn.name + ".running_var", "buffer", dtype_of<T>(), shape,
                               to_bytes<T>(std::span<const T>(st.running_var))});
    std::vector<std::uint8_t> count;
    put_le(count, static_cast<std::uint64_t>(st.batches_seen));
    archive.entries.push_back({bn.name + ".batches_seen", "buffer", DType::i64, Shape{1}, count});
  }
  return archive;
}

template <typename T>
void restore_module(Module<T>& module, const Archive& archive) {
  std::set<std::string> expected;
  auto require = [&](const std::string& name, const Shape& shape) -> const ArchiveEntry& {
    expected.insert(name);
    const ArchiveEntry* e = archive.find(name);
    if (!e) throw CheckpointError("checkpoint is missing '" + name + "'");
    if (e->shape != shape)
      throw CheckpointError("checkpoint entry '" + name + "' has shape " +
                            shape_to_string(e->shape) + ", model expects " +
                            shape_to_string(shape));
    return *e;
  };
  for (auto& p : module.parameters()) {
    const auto values = decode_floats<T>(require(p.name, p.tensor.shape()));
    std::copy(values.begin(), values.end(), p.tensor.mutable_data().begin());
  }
  for (auto& bn : module.batchnorm_states()) {
    const Shape shape{bn.state->running_mean.size()};
    bn.state->running_mean = decode_floats<T>(require(bn.name + ".running_mean", shape));
    bn.state->running_var = decode_floats<T>(require(bn.name + ".running_var", shape));
    const auto& count = require(bn.name + ".batches_seen", Shape{1});
    if (count.dtype != DType::i64) throw CheckpointError("batches_seen must be i64");
    bn.state->batches_seen = static_cast<std::int64_t>(get_le<std::uint64_t>(count.payload.data()));
  }
  for (const auto& e : archive.entries)
    if (!expected.count(e.name))
      throw CheckpointError("checkpoint entry '" + e.name + "' does not belong to this model");
}

template Archive capture_module(const Module<float>&, nlohmann::json);
template Archive capture_module(const Module<double>&, nlohmann::json);
template void restore_module(Module<float>&, const Archive&);
template void restore_module(Module<double>&, const Archive&);

}  // namespace windformer

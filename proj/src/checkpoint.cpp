#include "flowkan/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace flowkan {
namespace {

template <class U>
void put_le(std::vector<unsigned char>& out, U value) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, &value, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  out.insert(out.end(), bytes, bytes + sizeof(U));
}

template <class U>
U get_le(const unsigned char* p) {
  unsigned char bytes[sizeof(U)];
  std::memcpy(bytes, p, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(U));
  U v;
  std::memcpy(&v, bytes, sizeof(U));
  return v;
}

template <class T>
const char* dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

}  // namespace

void CheckpointWriter::add(const std::string& name, const Tensor<float>& t) {
  if (entries_.count(name)) throw CheckpointError("duplicate checkpoint tensor '" + name + "'");
  Entry e{t.shape(), dtype_name<float>(), blob_.size(), t.numel() * sizeof(float)};
  for (auto v : t.data()) put_le<float>(blob_, v);
  entries_[name] = e;
  order_.push_back(name);
}

void CheckpointWriter::add(const std::string& name, const Tensor<double>& t) {
  if (entries_.count(name)) throw CheckpointError("duplicate checkpoint tensor '" + name + "'");
  Entry e{t.shape(), dtype_name<double>(), blob_.size(), t.numel() * sizeof(double)};
  for (auto v : t.data()) put_le<double>(blob_, v);
  entries_[name] = e;
  order_.push_back(name);
}

void CheckpointWriter::write(const std::filesystem::path& path) const {
  nlohmann::json manifest;
  manifest["format"] = "flowkan-checkpoint";
  manifest["version"] = 1;
  manifest["meta"] = meta_;
  nlohmann::json tensors = nlohmann::json::object();
  for (const auto& name : order_) {
    const auto& e = entries_.at(name);
    tensors[name] = {{"shape", e.shape}, {"dtype", e.dtype}, {"offset", e.offset}, {"nbytes", e.nbytes}};
  }
  manifest["tensors"] = tensors;
  const std::string text = manifest.dump();
  std::vector<unsigned char> header(kCheckpointMagic, kCheckpointMagic + 8);
  put_le<std::uint64_t>(header, text.size());

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(header.data()), std::streamsize(header.size()));
  out.write(text.data(), std::streamsize(text.size()));
  out.write(reinterpret_cast<const char*>(blob_.data()), std::streamsize(blob_.size()));
  if (!out) throw CheckpointError("write failed for '" + path.string() + "'");
}

CheckpointReader::CheckpointReader(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw CheckpointError("'" + path.string() + "' is not a flowkan checkpoint");
  }
  const auto len = get_le<std::uint64_t>(bytes.data() + 8);
  if (16 + len > bytes.size()) throw CheckpointError("truncated checkpoint manifest in '" + path.string() + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + std::ptrdiff_t(len));
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "flowkan-checkpoint") throw CheckpointError("unknown checkpoint format");
  meta_ = manifest.value("meta", nlohmann::json::object());
  blob_.assign(bytes.begin() + 16 + std::ptrdiff_t(len), bytes.end());
  for (const auto& [name, t] : manifest.at("tensors").items()) {
    Entry e{t.at("shape").get<Shape>(), t.at("dtype").get<std::string>(), t.at("offset").get<std::size_t>(),
            t.at("nbytes").get<std::size_t>()};
    const std::size_t width = e.dtype == "f32" ? 4 : e.dtype == "f64" ? 8 : 0;
    if (width == 0) throw CheckpointError("tensor '" + name + "' has unknown dtype " + e.dtype);
    if (e.nbytes != numel(e.shape) * width || e.offset + e.nbytes > blob_.size()) {
      throw CheckpointError("tensor '" + name + "' lies outside the checkpoint blob");
    }
    entries_[name] = e;
  }
}

std::vector<std::string> CheckpointReader::names() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : entries_) out.push_back(k);
  return out;
}

const CheckpointReader::Entry& CheckpointReader::entry(const std::string& name) const {
  auto it = entries_.find(name);
  if (it == entries_.end()) throw CheckpointError("checkpoint has no tensor '" + name + "'");
  return it->second;
}

Shape CheckpointReader::shape(const std::string& name) const { return entry(name).shape; }
std::string CheckpointReader::dtype(const std::string& name) const { return entry(name).dtype; }

template <class T>
Tensor<T> CheckpointReader::get(const std::string& name) const {
  const auto& e = entry(name);
  const std::size_t n = numel(e.shape);
  std::vector<T> v(n);
  const unsigned char* p = blob_.data() + e.offset;
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = e.dtype == "f32" ? T(get_le<float>(p + 4 * i)) : T(get_le<double>(p + 8 * i));
  }
  return Tensor<T>(e.shape, std::move(v));
}

template <class T>
void CheckpointReader::load_into(const std::string& prefix, ParamList<T>& params) const {
  for (auto& p : params) {
    auto t = get<T>(prefix + p.name);
    if (t.shape() != p.tensor.shape()) {
      throw CheckpointError("tensor '" + prefix + p.name + "' has shape " + shape_str(t.shape()) +
                            ", model expects " + shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.mutable_data();
    std::copy(t.data().begin(), t.data().end(), dst.begin());
  }
}

template Tensor<float> CheckpointReader::get<float>(const std::string&) const;
template Tensor<double> CheckpointReader::get<double>(const std::string&) const;
template void CheckpointReader::load_into<float>(const std::string&, ParamList<float>&) const;
template void CheckpointReader::load_into<double>(const std::string&, ParamList<double>&) const;

}  // namespace flowkan

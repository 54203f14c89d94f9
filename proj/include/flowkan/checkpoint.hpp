#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "flowkan/tensor.hpp"

namespace flowkan {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-file archive: 8-byte magic, little-endian u64 manifest length, JSON
/// manifest (name -> shape, dtype, byte offset), then one little-endian blob.
class CheckpointWriter {
 public:
  void add(const std::string& name, const Tensor<float>& t);
  void add(const std::string& name, const Tensor<double>& t);
  template <class T>
  void add_all(const std::string& prefix, const ParamList<T>& params) {
    for (const auto& p : params) add(prefix + p.name, p.tensor);
  }

  nlohmann::json& meta() { return meta_; }
  void write(const std::filesystem::path& path) const;

 private:
  struct Entry {
    Shape shape;
    std::string dtype;
    std::size_t offset;
    std::size_t nbytes;
  };
  std::map<std::string, Entry> entries_;
  std::vector<std::string> order_;
  std::vector<unsigned char> blob_;
  nlohmann::json meta_ = nlohmann::json::object();
};

class CheckpointReader {
 public:
  explicit CheckpointReader(const std::filesystem::path& path);

  const nlohmann::json& meta() const { return meta_; }
  bool has(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;
  Shape shape(const std::string& name) const;
  std::string dtype(const std::string& name) const;

  /// Converts to the requested precision when the stored dtype differs.
  template <class T>
  Tensor<T> get(const std::string& name) const;

  /// Copies stored values into existing tensors; shapes must match exactly.
  template <class T>
  void load_into(const std::string& prefix, ParamList<T>& params) const;

 private:
  struct Entry {
    Shape shape;
    std::string dtype;
    std::size_t offset;
    std::size_t nbytes;
  };
  const Entry& entry(const std::string& name) const;
  std::map<std::string, Entry> entries_;
  std::vector<unsigned char> blob_;
  nlohmann::json meta_;
};

inline constexpr char kCheckpointMagic[8] = {'F', 'L', 'O', 'W', 'K', 'A', 'N', '1'};

}  // namespace flowkan

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace replan {

// Versioned binary archive of named arrays. Used for every checkpoint in the
// project (DRM, VAE, REM, policy, run state).
//
// Layout (little endian):
//   magic "RPLNARC1", u32 format_version, u32 entry_count,
//   entries sorted by name: u32 name_len, name, u8 dtype, u32 ndim,
//   i64 dims[ndim], u64 byte_len, bytes
//   u32 crc32 over everything above.
class Archive {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  enum class DType : std::uint8_t { kFloat32 = 0, kFloat64 = 1, kInt64 = 2, kBytes = 3 };

  struct Entry {
    DType dtype = DType::kBytes;
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;
  };

  void put_tensor(const std::string& name, const torch::Tensor& tensor);
  torch::Tensor get_tensor(const std::string& name) const;

  void put_string(const std::string& name, const std::string& value);
  std::string get_string(const std::string& name) const;

  void put_doubles(const std::string& name, const std::vector<double>& values);
  std::vector<double> get_doubles(const std::string& name) const;
  void put_floats(const std::string& name, const std::vector<float>& values,
                  std::vector<std::int64_t> shape = {});
  std::vector<float> get_floats(const std::string& name) const;
  void put_ints(const std::string& name, const std::vector<std::int64_t>& values);
  std::vector<std::int64_t> get_ints(const std::string& name) const;
  void put_int(const std::string& name, std::int64_t value) { put_ints(name, {value}); }
  std::int64_t get_int(const std::string& name) const;

  void put_rng(const std::string& name, const std::mt19937_64& rng);
  void get_rng(const std::string& name, std::mt19937_64& rng) const;

  // Parameters and buffers of a module, stored under `prefix + name`.
  void put_module(const std::string& prefix, const torch::nn::Module& module);
  void get_module(const std::string& prefix, torch::nn::Module& module) const;

  // Adam moments and step counters, keyed by parameter position.
  void put_adam(const std::string& prefix, torch::optim::Adam& optimizer);
  void get_adam(const std::string& prefix, torch::optim::Adam& optimizer) const;

  void put_generator(const std::string& name, const at::Generator& generator);
  void get_generator(const std::string& name, at::Generator& generator) const;

  bool contains(const std::string& name) const { return entries_.count(name) != 0; }
  std::vector<std::string> names() const;
  const Entry& entry(const std::string& name) const;

  std::vector<std::uint8_t> serialize() const;
  static Archive deserialize(const std::vector<std::uint8_t>& bytes, const std::string& origin);

  void save(const std::filesystem::path& path) const;
  static Archive load(const std::filesystem::path& path);

  bool operator==(const Archive& other) const;

 private:
  std::map<std::string, Entry> entries_;
};

}  // namespace replan

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

namespace pdrec {

// FNV-1a over raw bytes, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(const void* data, std::size_t size);
std::string file_hash(const std::filesystem::path& path);

std::vector<char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

// Little-endian encoders; the on-disk formats are LE regardless of host.
void put_u32(std::string& out, std::uint32_t v);
void put_u64(std::string& out, std::uint64_t v);
void put_f32(std::string& out, float v);
std::uint32_t get_u32(const char* p);
std::uint64_t get_u64(const char* p);
float get_f32(const char* p);

// Checkpoint: "PDRCKPT1", u64 header length, JSON header, then every tensor
// as row-major f32. The header lists tensors as {name, rows, cols} in blob
// order; callers add their own fields alongside "tensors".
struct NamedTensor {
  std::string name;
  Eigen::MatrixXd value;
};

struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::vector<NamedTensor> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& source);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Preference cache: "PDR1", u32 n_users, u32 n_items, row-major f32 rows.
class PreferenceCache {
 public:
  PreferenceCache() = default;
  PreferenceCache(std::size_t n_users, std::size_t n_items);

  std::size_t n_users() const { return n_users_; }
  std::size_t n_items() const { return n_items_; }
  std::vector<double> row(std::size_t user) const;
  void set_row(std::size_t user, const Eigen::VectorXd& values);
  const std::vector<float>& data() const { return data_; }

  std::string encode() const;
  static PreferenceCache decode(const std::vector<char>& bytes, const std::string& source);

 private:
  std::size_t n_users_ = 0;
  std::size_t n_items_ = 0;
  std::vector<float> data_;
};

void save_preference_cache(const std::filesystem::path& path, const PreferenceCache& cache);
PreferenceCache load_preference_cache(const std::filesystem::path& path);

}  // namespace pdrec

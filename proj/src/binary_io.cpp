#include "pdrec/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "pdrec/error.hpp"

namespace pdrec {

namespace {

constexpr char kCheckpointMagic[8] = {'P', 'D', 'R', 'C', 'K', 'P', 'T', '1'};
constexpr char kCacheMagic[4] = {'P', 'D', 'R', '1'};

}  // namespace

std::string fnv1a_hex(const void* data, std::size_t size) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

std::string file_hash(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return fnv1a_hex(bytes.data(), bytes.size());
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("short write to " + path.string());
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t get_u32(const char* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

std::uint64_t get_u64(const char* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(p[i]);
  return v;
}

float get_f32(const char* p) { return std::bit_cast<float>(get_u32(p)); }

const Eigen::MatrixXd& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw Error("checkpoint has no tensor '" + name + "'");
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json header = ckpt.header;
  auto& list = header["tensors"] = nlohmann::json::array();
  for (const auto& t : ckpt.tensors)
    list.push_back({{"name", t.name}, {"rows", t.value.rows()}, {"cols", t.value.cols()}});
  const std::string text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_u64(out, text.size());
  out += text;
  for (const auto& t : ckpt.tensors)
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) put_f32(out, static_cast<float>(t.value(r, c)));
  return out;
}

Checkpoint decode_checkpoint(const std::vector<char>& bytes, const std::string& source) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw Error(source + ": not a checkpoint (bad magic)");
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (16 + header_len > bytes.size()) throw Error(source + ": truncated checkpoint header");

  Checkpoint ckpt;
  try {
    ckpt.header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(source + ": bad checkpoint header: " + e.what());
  }
  std::size_t offset = 16 + header_len;
  for (const auto& entry : ckpt.header.at("tensors")) {
    const auto rows = entry.at("rows").get<Eigen::Index>();
    const auto cols = entry.at("cols").get<Eigen::Index>();
    if (offset + static_cast<std::size_t>(rows * cols) * 4 > bytes.size())
      throw Error(source + ": truncated tensor blob");
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c, offset += 4) m(r, c) = get_f32(bytes.data() + offset);
    ckpt.tensors.push_back({entry.at("name").get<std::string>(), std::move(m)});
  }
  if (offset != bytes.size()) throw Error(source + ": trailing bytes after tensor blob");
  ckpt.header.erase("tensors");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

PreferenceCache::PreferenceCache(std::size_t n_users, std::size_t n_items)
    : n_users_(n_users), n_items_(n_items), data_(n_users * n_items, 0.0f) {}

std::vector<double> PreferenceCache::row(std::size_t user) const {
  if (user >= n_users_) throw Error("preference cache has no row for user " + std::to_string(user));
  const float* p = data_.data() + user * n_items_;
  return std::vector<double>(p, p + n_items_);
}

void PreferenceCache::set_row(std::size_t user, const Eigen::VectorXd& values) {
  if (user >= n_users_ || static_cast<std::size_t>(values.size()) != n_items_)
    throw Error("preference cache row out of shape");
  float* p = data_.data() + user * n_items_;
  for (std::size_t i = 0; i < n_items_; ++i) p[i] = static_cast<float>(values[static_cast<Eigen::Index>(i)]);
}

std::string PreferenceCache::encode() const {
  std::string out(kCacheMagic, sizeof(kCacheMagic));
  put_u32(out, static_cast<std::uint32_t>(n_users_));
  put_u32(out, static_cast<std::uint32_t>(n_items_));
  out.reserve(out.size() + data_.size() * 4);
  for (float v : data_) put_f32(out, v);
  return out;
}

PreferenceCache PreferenceCache::decode(const std::vector<char>& bytes, const std::string& source) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCacheMagic, 4) != 0)
    throw Error(source + ": not a preference cache (bad magic)");
  PreferenceCache cache(get_u32(bytes.data() + 4), get_u32(bytes.data() + 8));
  if (bytes.size() != 12 + cache.data_.size() * 4)
    throw Error(source + ": preference cache size does not match its header");
  for (std::size_t i = 0; i < cache.data_.size(); ++i) cache.data_[i] = get_f32(bytes.data() + 12 + 4 * i);
  return cache;
}

void save_preference_cache(const std::filesystem::path& path, const PreferenceCache& cache) {
  write_file(path, cache.encode());
}

PreferenceCache load_preference_cache(const std::filesystem::path& path) {
  return PreferenceCache::decode(read_file(path), path.string());
}

}  // namespace pdrec

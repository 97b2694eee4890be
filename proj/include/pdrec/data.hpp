#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace pdrec {

using UserId = std::uint32_t;
using ItemId = std::uint32_t;
using Timestamp = std::int64_t;

struct Interaction {
  UserId user = 0;
  ItemId item = 0;
  Timestamp time = 0;
};

struct InteractionLog {
  std::vector<Interaction> records;
  std::size_t n_users = 0;
  std::size_t n_items = 0;

  // Throws if an id is out of range or a timestamp is negative.
  void validate() const;
};

// Original string id <-> contiguous index, assigned in first-appearance order.
class IdMap {
 public:
  std::uint32_t intern(const std::string& original);
  std::optional<std::uint32_t> find(const std::string& original) const;
  const std::string& original(std::uint32_t index) const { return originals_.at(index); }
  std::size_t size() const { return originals_.size(); }

  nlohmann::json to_json() const;
  static IdMap from_json(const nlohmann::json& j);

 private:
  std::vector<std::string> originals_;
  std::unordered_map<std::string, std::uint32_t> index_;
};

struct LoadedLog {
  InteractionLog log;
  IdMap users;
  IdMap items;
};

// Parses `user<TAB>item<TAB>timestamp` lines. Blank lines are skipped.
LoadedLog parse_interactions(std::istream& in, const std::string& source);
LoadedLog load_interactions(const std::filesystem::path& path);

// Writes a log with already-contiguous indices; reloading it reproduces the
// same indices.
void write_interactions(const std::filesystem::path& path, const InteractionLog& log);

struct UserSequence {
  UserId user = 0;
  std::vector<ItemId> items;
  std::vector<Timestamp> times;

  std::size_t size() const { return items.size(); }
};

// One sequence per user that has at least one record, in user order. Within a
// user, records are ordered by timestamp, ties by original record order.
std::vector<UserSequence> build_sequences(const InteractionLog& log);

struct EvalRow {
  UserId user = 0;
  std::vector<ItemId> context;
  ItemId target = 0;
};

// Leave-one-out: last behavior is the test target, the one before it the
// validation target, the rest is training. Users with fewer than three
// behaviors train on everything and are not evaluated.
struct SplitDataset {
  std::size_t n_users = 0;
  std::size_t n_items = 0;
  std::vector<UserSequence> train;
  std::vector<EvalRow> valid;
  std::vector<EvalRow> test;
  // Sorted distinct items of each user's full sequence, indexed by user id.
  std::vector<std::vector<ItemId>> history;

  const UserSequence* train_of(UserId user) const;
  // Sorted distinct training items.
  std::vector<ItemId> train_items(UserId user) const;

  nlohmann::json manifest() const;

 private:
  std::vector<int> train_index_;
  friend SplitDataset leave_one_out_split(const std::vector<UserSequence>&, std::size_t, std::size_t);
};

SplitDataset leave_one_out_split(const std::vector<UserSequence>& seqs, std::size_t n_users,
                                 std::size_t n_items);

// Chronological mixing of two domains over a shared user index space. B's
// items are shifted past A's.
InteractionLog merge_domains(const InteractionLog& a, const InteractionLog& b);

std::vector<double> time_interval_weights(const UserSequence& seq, double w_min, double w_max);

struct InteractionVector {
  UserId owner = 0;
  std::vector<double> values;
};

// Dense x'_0: each interacted item holds the weight of its last occurrence.
InteractionVector to_interaction_vector(const UserSequence& seq, const std::vector<double>& weights,
                                        std::size_t n_items);

enum class Weighting { kTimeInterval, kConstant };

// x'_0 for every training sequence, using either interval weights or a
// constant w_max for every behavior.
std::vector<InteractionVector> build_interaction_vectors(const SplitDataset& split, Weighting weighting,
                                                         double w_min, double w_max);

}  // namespace pdrec

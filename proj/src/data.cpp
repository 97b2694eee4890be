#include "pdrec/data.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <numeric>
#include <sstream>

#include "pdrec/error.hpp"

namespace pdrec {

void InteractionLog::validate() const {
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    if (r.user >= n_users) throw Error("record " + std::to_string(k) + ": user id out of range");
    if (r.item >= n_items) throw Error("record " + std::to_string(k) + ": item id out of range");
    if (r.time < 0) throw Error("record " + std::to_string(k) + ": negative timestamp");
  }
}

std::uint32_t IdMap::intern(const std::string& original) {
  if (auto it = index_.find(original); it != index_.end()) return it->second;
  const auto idx = static_cast<std::uint32_t>(originals_.size());
  originals_.push_back(original);
  index_.emplace(original, idx);
  return idx;
}

std::optional<std::uint32_t> IdMap::find(const std::string& original) const {
  if (auto it = index_.find(original); it != index_.end()) return it->second;
  return std::nullopt;
}

nlohmann::json IdMap::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (std::size_t i = 0; i < originals_.size(); ++i) j[originals_[i]] = i;
  return j;
}

IdMap IdMap::from_json(const nlohmann::json& j) {
  std::vector<std::pair<std::uint32_t, std::string>> entries;
  for (auto it = j.begin(); it != j.end(); ++it) entries.emplace_back(it.value().get<std::uint32_t>(), it.key());
  std::sort(entries.begin(), entries.end());
  IdMap map;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (entries[i].first != i) throw Error("id map indices are not contiguous");
    map.intern(entries[i].second);
  }
  return map;
}

LoadedLog parse_interactions(std::istream& in, const std::string& source) {
  LoadedLog out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;

    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3) throw ParseError(source, line_no, "expected 3 tab-separated fields");
    if (fields[0].empty() || fields[1].empty()) throw ParseError(source, line_no, "empty user or item id");

    Timestamp ts = 0;
    const auto& tf = fields[2];
    const auto [ptr, ec] = std::from_chars(tf.data(), tf.data() + tf.size(), ts);
    if (ec != std::errc() || ptr != tf.data() + tf.size())
      throw ParseError(source, line_no, "bad timestamp '" + tf + "'");
    if (ts < 0) throw ParseError(source, line_no, "negative timestamp");

    out.log.records.push_back({out.users.intern(fields[0]), out.items.intern(fields[1]), ts});
  }
  if (out.log.records.empty()) throw Error(source + ": no interactions");
  out.log.n_users = out.users.size();
  out.log.n_items = out.items.size();
  return out;
}

LoadedLog load_interactions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  return parse_interactions(in, path.string());
}

void write_interactions(const std::filesystem::path& path, const InteractionLog& log) {
  std::ostringstream out;
  for (const auto& r : log.records) out << r.user << '\t' << r.item << '\t' << r.time << '\n';
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  f << out.str();
}

std::vector<UserSequence> build_sequences(const InteractionLog& log) {
  std::vector<std::vector<std::size_t>> by_user(log.n_users);
  for (std::size_t k = 0; k < log.records.size(); ++k) by_user.at(log.records[k].user).push_back(k);

  std::vector<UserSequence> seqs;
  for (UserId u = 0; u < by_user.size(); ++u) {
    auto& idx = by_user[u];
    if (idx.empty()) continue;
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return log.records[a].time < log.records[b].time; });
    UserSequence s;
    s.user = u;
    for (std::size_t k : idx) {
      s.items.push_back(log.records[k].item);
      s.times.push_back(log.records[k].time);
    }
    seqs.push_back(std::move(s));
  }
  return seqs;
}

const UserSequence* SplitDataset::train_of(UserId user) const {
  if (user >= train_index_.size() || train_index_[user] < 0) return nullptr;
  return &train[static_cast<std::size_t>(train_index_[user])];
}

std::vector<ItemId> SplitDataset::train_items(UserId user) const {
  const UserSequence* s = train_of(user);
  if (!s) return {};
  std::vector<ItemId> items = s->items;
  std::sort(items.begin(), items.end());
  items.erase(std::unique(items.begin(), items.end()), items.end());
  return items;
}

nlohmann::json SplitDataset::manifest() const {
  nlohmann::json users = nlohmann::json::array();
  std::vector<const EvalRow*> valid_of(n_users, nullptr), test_of(n_users, nullptr);
  for (const auto& r : valid) valid_of[r.user] = &r;
  for (const auto& r : test) test_of[r.user] = &r;
  for (const auto& s : train) {
    nlohmann::json u = {{"user", s.user}, {"train_length", s.size()}};
    const std::size_t p = s.size() + (valid_of[s.user] ? 2 : 0);
    u["valid_index"] = valid_of[s.user] ? nlohmann::json(p - 2) : nlohmann::json(nullptr);
    u["test_index"] = test_of[s.user] ? nlohmann::json(p - 1) : nlohmann::json(nullptr);
    users.push_back(std::move(u));
  }
  return {{"protocol", "leave-one-out"}, {"n_users", n_users}, {"n_items", n_items}, {"users", users}};
}

SplitDataset leave_one_out_split(const std::vector<UserSequence>& seqs, std::size_t n_users, std::size_t n_items) {
  SplitDataset split;
  split.n_users = n_users;
  split.n_items = n_items;
  split.history.assign(n_users, {});
  split.train_index_.assign(n_users, -1);
  for (const auto& s : seqs) {
    if (s.user >= n_users) throw Error("sequence user out of range");
    auto& h = split.history[s.user];
    h = s.items;
    std::sort(h.begin(), h.end());
    h.erase(std::unique(h.begin(), h.end()), h.end());

    const std::size_t p = s.size();
    UserSequence tr;
    tr.user = s.user;
    if (p < 3) {
      tr = s;
    } else {
      tr.items.assign(s.items.begin(), s.items.end() - 2);
      tr.times.assign(s.times.begin(), s.times.end() - 2);
      split.valid.push_back({s.user, tr.items, s.items[p - 2]});
      split.test.push_back({s.user, std::vector<ItemId>(s.items.begin(), s.items.end() - 1), s.items[p - 1]});
    }
    split.train_index_[s.user] = static_cast<int>(split.train.size());
    split.train.push_back(std::move(tr));
  }
  return split;
}

InteractionLog merge_domains(const InteractionLog& a, const InteractionLog& b) {
  if (a.n_users != b.n_users)
    throw Error("merge_domains: user universes differ (" + std::to_string(a.n_users) + " vs " +
                std::to_string(b.n_users) + ")");
  InteractionLog merged;
  merged.n_users = a.n_users;
  merged.n_items = a.n_items + b.n_items;
  merged.records = a.records;
  for (auto r : b.records) {
    r.item += static_cast<ItemId>(a.n_items);
    merged.records.push_back(r);
  }
  std::stable_sort(merged.records.begin(), merged.records.end(), [](const Interaction& x, const Interaction& y) {
    return x.user != y.user ? x.user < y.user : x.time < y.time;
  });
  merged.validate();
  return merged;
}

std::vector<double> time_interval_weights(const UserSequence& seq, double w_min, double w_max) {
  if (!(w_min > 0.0) || !(w_min <= w_max)) throw Error("time_interval_weights: need 0 < w_min <= w_max");
  const std::size_t p = seq.size();
  if (p == 0) return {};
  const Timestamp t1 = seq.times.front(), tp = seq.times.back();
  std::vector<double> w(p, w_max);
  if (tp == t1) return w;
  const double span = static_cast<double>(tp - t1);
  for (std::size_t j = 0; j < p; ++j)
    w[j] = w_min + (static_cast<double>(seq.times[j] - t1) / span) * (w_max - w_min);
  return w;
}

InteractionVector to_interaction_vector(const UserSequence& seq, const std::vector<double>& weights,
                                        std::size_t n_items) {
  if (weights.size() != seq.size()) throw Error("to_interaction_vector: weights not aligned with sequence");
  InteractionVector v{seq.user, std::vector<double>(n_items, 0.0)};
  for (std::size_t j = 0; j < seq.size(); ++j) {
    if (seq.items[j] >= n_items) throw Error("to_interaction_vector: item " + std::to_string(seq.items[j]) +
                                             " outside corpus of " + std::to_string(n_items));
    v.values[seq.items[j]] = weights[j];
  }
  return v;
}

std::vector<InteractionVector> build_interaction_vectors(const SplitDataset& split, Weighting weighting,
                                                         double w_min, double w_max) {
  std::vector<InteractionVector> out;
  out.reserve(split.train.size());
  for (const auto& s : split.train) {
    const auto w = weighting == Weighting::kTimeInterval ? time_interval_weights(s, w_min, w_max)
                                                          : std::vector<double>(s.size(), w_max);
    out.push_back(to_interaction_vector(s, w, split.n_items));
  }
  return out;
}

}  // namespace pdrec

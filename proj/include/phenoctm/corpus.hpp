#pragma once
// Heterogeneous count corpora: M parallel token types per record, each stored
// as a sparse bag of (token index, count) pairs.
//
// On disk a corpus is a directory holding
//   vocab.json     {"dx": ["hiv", "htn"], "labs": [...], ...}
//   records.jsonl  {"id": "p1", "time_bin": "2019", "bags": {"dx": {"hiv": 3}}}
// Type order is the key order of vocab.json.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "phenoctm/error.hpp"

namespace phenoctm {

using json = nlohmann::ordered_json;

class Vocabulary {
 public:
  Vocabulary() = default;
  Vocabulary(std::string type_name, std::vector<std::string> tokens)
      : type_name_(std::move(type_name)), tokens_(std::move(tokens)) {
    if (type_name_.empty()) throw InvalidArgument("vocabulary type name must not be empty");
    index_.reserve(tokens_.size());
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
        throw InvalidArgument("vocabulary '" + type_name_ + "': duplicate token '" + tokens_[i] + "'");
    }
  }

  const std::string& type_name() const noexcept { return type_name_; }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  int size() const noexcept { return static_cast<int>(tokens_.size()); }
  const std::string& token(int index) const { return tokens_.at(static_cast<std::size_t>(index)); }

  std::optional<int> find(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) return std::nullopt;
    return it->second;
  }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.type_name_ == b.type_name_ && a.tokens_ == b.tokens_;
  }

 private:
  std::string type_name_;
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TokenCount {
  int token = 0;
  std::int64_t count = 0;
  friend bool operator==(const TokenCount&, const TokenCount&) = default;
};

// Sorted by token index, one entry per distinct token, every count >= 1.
using Bag = std::vector<TokenCount>;

inline std::int64_t total_count(const Bag& bag) {
  std::int64_t n = 0;
  for (const auto& e : bag) n += e.count;
  return n;
}

inline Bag make_bag(const std::map<int, std::int64_t>& counts) {
  Bag bag;
  bag.reserve(counts.size());
  for (const auto& [token, count] : counts) {
    if (count < 1) throw InvalidArgument("bag counts must be >= 1");
    bag.push_back({token, count});
  }
  return bag;
}

struct RecordBags {
  std::string record_id;
  std::optional<std::string> time_bin;
  std::vector<Bag> bags;  // one per data type, in vocabulary order

  std::int64_t total_count() const {
    std::int64_t n = 0;
    for (const auto& b : bags) n += phenoctm::total_count(b);
    return n;
  }
  friend bool operator==(const RecordBags&, const RecordBags&) = default;
};

inline void validate_record(const RecordBags& r, const std::vector<Vocabulary>& vocabs) {
  if (r.bags.size() != vocabs.size())
    throw InvalidArgument("record '" + r.record_id + "': expected " + std::to_string(vocabs.size()) +
                          " bags, got " + std::to_string(r.bags.size()));
  for (std::size_t m = 0; m < vocabs.size(); ++m) {
    int prev = -1;
    for (const auto& e : r.bags[m]) {
      if (e.token < 0 || e.token >= vocabs[m].size())
        throw InvalidArgument("record '" + r.record_id + "': token index " + std::to_string(e.token) +
                              " out of range for type '" + vocabs[m].type_name() + "'");
      if (e.token <= prev)
        throw InvalidArgument("record '" + r.record_id + "': bag entries must be sorted and unique");
      if (e.count < 1) throw InvalidArgument("record '" + r.record_id + "': counts must be >= 1");
      prev = e.token;
    }
  }
}

struct Corpus {
  std::vector<Vocabulary> vocabularies;
  std::vector<RecordBags> records;

  int num_types() const noexcept { return static_cast<int>(vocabularies.size()); }
  int num_records() const noexcept { return static_cast<int>(records.size()); }

  std::optional<int> type_index(const std::string& name) const {
    for (std::size_t m = 0; m < vocabularies.size(); ++m)
      if (vocabularies[m].type_name() == name) return static_cast<int>(m);
    return std::nullopt;
  }

  void validate() const {
    if (vocabularies.empty()) throw InvalidArgument("corpus needs at least one data type");
    if (records.empty()) throw InvalidArgument("corpus has no records");
    for (const auto& r : records) validate_record(r, vocabularies);
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

// FNV-1a over type names and tokens in order; binds a model to its vocabularies.
inline std::string vocab_fingerprint(const std::vector<Vocabulary>& vocabs) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;  // separator, not a valid UTF-8 byte
    h *= 0x100000001b3ULL;
  };
  for (const auto& v : vocabs) {
    mix(v.type_name());
    mix(std::to_string(v.size()));
    for (const auto& t : v.tokens()) mix(t);
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON conversion

inline json vocabularies_to_json(const std::vector<Vocabulary>& vocabs) {
  json j = json::object();
  for (const auto& v : vocabs) j[v.type_name()] = v.tokens();
  return j;
}

inline std::vector<Vocabulary> vocabularies_from_json(const json& j) {
  if (!j.is_object()) throw InvalidArgument("vocabulary must be a JSON object of type -> token list");
  std::vector<Vocabulary> out;
  for (const auto& [name, tokens] : j.items()) {
    if (!tokens.is_array()) throw InvalidArgument("vocabulary '" + name + "' must be an array");
    std::vector<std::string> list;
    list.reserve(tokens.size());
    for (const auto& t : tokens) {
      if (!t.is_string()) throw InvalidArgument("vocabulary '" + name + "' contains a non-string token");
      list.push_back(t.get<std::string>());
    }
    out.emplace_back(name, std::move(list));
  }
  if (out.empty()) throw InvalidArgument("vocabulary defines no data types");
  return out;
}

inline json record_to_json(const RecordBags& r, const std::vector<Vocabulary>& vocabs) {
  json j = json::object();
  j["id"] = r.record_id;
  if (r.time_bin) j["time_bin"] = *r.time_bin;
  json bags = json::object();
  for (std::size_t m = 0; m < vocabs.size(); ++m) {
    json bag = json::object();
    for (const auto& e : r.bags[m]) bag[vocabs[m].token(e.token)] = e.count;
    bags[vocabs[m].type_name()] = std::move(bag);
  }
  j["bags"] = std::move(bags);
  return j;
}

// Types absent from "bags" become empty bags.
inline RecordBags record_from_json(const json& j, const std::vector<Vocabulary>& vocabs) {
  if (!j.is_object()) throw InvalidArgument("record must be a JSON object");
  RecordBags r;
  auto id = j.find("id");
  if (id == j.end() || !id->is_string()) throw InvalidArgument("record needs a string \"id\"");
  r.record_id = id->get<std::string>();
  if (auto tb = j.find("time_bin"); tb != j.end() && !tb->is_null()) {
    if (!tb->is_string()) throw InvalidArgument("\"time_bin\" must be a string");
    r.time_bin = tb->get<std::string>();
  }
  r.bags.resize(vocabs.size());
  auto bags = j.find("bags");
  if (bags == j.end()) return r;
  if (!bags->is_object()) throw InvalidArgument("\"bags\" must be an object");
  for (const auto& [type_name, bag] : bags->items()) {
    std::size_t m = 0;
    while (m < vocabs.size() && vocabs[m].type_name() != type_name) ++m;
    if (m == vocabs.size()) throw InvalidArgument("unknown type name '" + type_name + "'");
    if (!bag.is_object()) throw InvalidArgument("bag for type '" + type_name + "' must be an object");
    std::map<int, std::int64_t> counts;
    for (const auto& [token, count] : bag.items()) {
      auto idx = vocabs[m].find(token);
      if (!idx) throw InvalidArgument("unknown token '" + token + "' for type '" + type_name + "'");
      if (!count.is_number_integer())
        throw InvalidArgument("count for token '" + token + "' must be an integer");
      const auto c = count.get<std::int64_t>();
      if (c < 1) throw InvalidArgument("count for token '" + token + "' must be >= 1");
      counts[*idx] = c;
    }
    r.bags[m] = make_bag(counts);
  }
  return r;
}

// ---------------------------------------------------------------------------
// File I/O

inline json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("'" + path.string() + "': " + e.what() + " (byte offset " + std::to_string(e.byte) + ")",
                     e.byte);
  }
}

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<Vocabulary> load_vocabularies(const std::filesystem::path& path) {
  const json j = read_json_file(path);
  try {
    return vocabularies_from_json(j);
  } catch (const InvalidArgument& e) {
    throw ParseError("'" + path.string() + "': " + e.what());
  }
}

// Reads a records JSONL file. Duplicate (id, time_bin) pairs are rejected;
// segments of one record share an id and differ in time_bin.
inline std::vector<RecordBags> load_records(const std::filesystem::path& path,
                                            const std::vector<Vocabulary>& vocabs) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::vector<RecordBags> records;
  std::set<std::pair<std::string, std::string>> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "'" + path.string() + "' line " + std::to_string(line_no) + ": ";
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw ParseError(where + "malformed JSON: " + e.what(), line_no);
    }
    RecordBags r;
    try {
      r = record_from_json(j, vocabs);
    } catch (const InvalidArgument& e) {
      throw ParseError(where + e.what(), line_no);
    }
    const auto key = std::make_pair(r.record_id, r.time_bin ? "\x01" + *r.time_bin : std::string());
    if (!seen.insert(key).second)
      throw ParseError(where + "duplicate record_id '" + r.record_id + "'" +
                           (r.time_bin ? " with time_bin '" + *r.time_bin + "'" : std::string()),
                       line_no);
    records.push_back(std::move(r));
  }
  if (records.empty()) throw ParseError("'" + path.string() + "': no records");
  return records;
}

inline Corpus load_corpus(const std::filesystem::path& vocab_path,
                          const std::filesystem::path& records_path) {
  Corpus c;
  c.vocabularies = load_vocabularies(vocab_path);
  c.records = load_records(records_path, c.vocabularies);
  return c;
}

// `dir` must contain vocab.json and records.jsonl.
inline Corpus load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir))
    throw IoError("corpus directory '" + dir.string() + "' does not exist");
  return load_corpus(dir / "vocab.json", dir / "records.jsonl");
}

inline void save_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  corpus.validate();
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  write_text_file(dir / "vocab.json", vocabularies_to_json(corpus.vocabularies).dump(2) + "\n");
  std::string body;
  for (const auto& r : corpus.records) body += record_to_json(r, corpus.vocabularies).dump() + "\n";
  write_text_file(dir / "records.jsonl", body);
}

}  // namespace phenoctm

// Copyright 2026 The lepo-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic reasoning tasks with exact verifiers over a small symbolic
// vocabulary. A model answers by emitting ANSWER, the answer tokens, and EOS.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lepo/error.hpp"
#include "lepo/rng.hpp"

namespace lepo {

// ---------------------------------------------------------------------------
// Vocabulary

class Vocabulary {
 public:
  static constexpr std::size_t kPad = 0, kBos = 1, kEos = 2, kAnswer = 3, kSep = 4;
  static constexpr std::size_t kFirstDigit = 5;

  /// Symbols in id order, padded with reserved slots up to `size`.
  explicit Vocabulary(std::size_t size = 64) {
    symbols_ = {"<PAD>", "<BOS>", "<EOS>", "<ANS>", "<SEP>"};
    for (char c = '0'; c <= '9'; ++c) symbols_.emplace_back(1, c);
    for (char c : std::string_view("+-*%=<>[],()ABCD")) symbols_.emplace_back(1, c);
    if (size < symbols_.size()) {
      throw ConfigError("vocabulary needs at least " + std::to_string(symbols_.size()) + " entries, got " +
                        std::to_string(size));
    }
    for (std::size_t i = symbols_.size(); i < size; ++i) symbols_.push_back("<R" + std::to_string(i) + ">");
  }

  std::size_t size() const { return symbols_.size(); }
  const std::string& symbol(std::size_t id) const {
    if (id >= symbols_.size()) throw ContractError("token id " + std::to_string(id) + " out of range");
    return symbols_[id];
  }

  static std::size_t digit(int d) { return kFirstDigit + static_cast<std::size_t>(d); }

  /// Single characters map to their symbol; `<NAME>` spells a special.
  std::vector<std::size_t> tokenize(std::string_view text) const {
    std::vector<std::size_t> ids;
    std::size_t i = 0;
    while (i < text.size()) {
      std::string_view piece = text.substr(i, 1);
      if (text[i] == '<') {
        const auto close = text.find('>', i);
        if (close != std::string_view::npos && close > i + 1) {
          const auto candidate = text.substr(i, close - i + 1);
          if (lookup(candidate) != npos) piece = candidate;
        }
      }
      const auto id = lookup(piece);
      if (id == npos) {
        throw FormatError("cannot tokenize '" + std::string(piece) + "' at offset " + std::to_string(i) + " of '" +
                          std::string(text) + "'");
      }
      ids.push_back(id);
      i += piece.size();
    }
    return ids;
  }

  std::string detokenize(std::span<const std::size_t> ids) const {
    std::string out;
    for (auto id : ids) out += symbol(id);
    return out;
  }

  /// FNV-1a over the symbol table; stored in dataset files.
  std::string hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& s : symbols_) {
      for (unsigned char c : s + '\n') {
        h ^= c;
        h *= 0x100000001b3ULL;
      }
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

 private:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t lookup(std::string_view s) const {
    for (std::size_t i = 0; i < symbols_.size(); ++i)
      if (symbols_[i] == s) return i;
    return npos;
  }

  std::vector<std::string> symbols_;
};

// ---------------------------------------------------------------------------
// Task instances

enum class TaskKind { add_chain, mod_arith, parity, list_max };

inline std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::add_chain: return "add_chain";
    case TaskKind::mod_arith: return "mod_arith";
    case TaskKind::parity: return "parity";
    case TaskKind::list_max: return "list_max";
  }
  return "unknown";
}

inline TaskKind parse_task_kind(const std::string& name) {
  if (name == "add_chain") return TaskKind::add_chain;
  if (name == "mod_arith") return TaskKind::mod_arith;
  if (name == "parity") return TaskKind::parity;
  if (name == "list_max") return TaskKind::list_max;
  throw ContractError("unknown task kind '" + name + "'");
}

inline constexpr int kModulus = 7;

struct DifficultyRange {
  std::size_t min, max;
};

/// Valid difficulty values: operand count for the arithmetic kinds, string
/// length for parity, list length for list_max.
inline DifficultyRange difficulty_range(TaskKind kind) {
  switch (kind) {
    case TaskKind::add_chain: return {2, 6};
    case TaskKind::mod_arith: return {2, 4};
    case TaskKind::parity: return {1, 8};
    case TaskKind::list_max: return {1, 6};
  }
  return {0, 0};
}

/// Number of distinct answers a kind can produce at `difficulty`.
inline std::size_t answer_space_size(TaskKind kind, std::size_t difficulty, std::size_t digits = 1) {
  std::size_t max_operand = digits == 1 ? 9 : 99;
  switch (kind) {
    case TaskKind::add_chain: return difficulty * max_operand + 1;
    case TaskKind::mod_arith: return kModulus;
    case TaskKind::parity: return 2;
    case TaskKind::list_max: return 10;
  }
  return 0;
}

struct TaskInstance {
  TaskKind kind = TaskKind::add_chain;
  std::size_t difficulty = 0;
  std::string query;   // e.g. "3+4"
  std::string answer;  // e.g. "7"
  std::uint64_t seed = 0;
  std::vector<std::size_t> query_ids;         // BOS, query tokens, SEP
  std::vector<std::size_t> canonical_answer;  // answer tokens only

  /// Tokens a perfect policy emits: ANSWER, answer, EOS.
  std::vector<std::size_t> target_ids() const {
    std::vector<std::size_t> out{Vocabulary::kAnswer};
    out.insert(out.end(), canonical_answer.begin(), canonical_answer.end());
    out.push_back(Vocabulary::kEos);
    return out;
  }
};

inline std::vector<std::size_t> query_ids_for(const Vocabulary& vocab, std::string_view query) {
  std::vector<std::size_t> ids{Vocabulary::kBos};
  const auto body = vocab.tokenize(query);
  ids.insert(ids.end(), body.begin(), body.end());
  ids.push_back(Vocabulary::kSep);
  return ids;
}

/// Builds the tokenized fields from the query and answer strings.
inline TaskInstance make_instance(const Vocabulary& vocab, TaskKind kind, std::size_t difficulty, std::string query,
                                  std::string answer, std::uint64_t seed) {
  TaskInstance inst{kind, difficulty, std::move(query), std::move(answer), seed, {}, {}};
  inst.query_ids = query_ids_for(vocab, inst.query);
  inst.canonical_answer = vocab.tokenize(inst.answer);
  if (inst.canonical_answer.empty()) throw FormatError("task instance has an empty answer");
  return inst;
}

/// `digits` sets the operand width (1 or 2) for add_chain and mod_arith.
inline TaskInstance generate_instance(const Vocabulary& vocab, TaskKind kind, std::size_t difficulty, Rng& rng,
                                      std::size_t digits = 1, std::uint64_t seed = 0) {
  const auto range = difficulty_range(kind);
  if (difficulty < range.min || difficulty > range.max) {
    throw ContractError(to_string(kind) + " difficulty " + std::to_string(difficulty) + " outside [" +
                        std::to_string(range.min) + ", " + std::to_string(range.max) + "]");
  }
  require(digits == 1 || digits == 2, "operand width must be 1 or 2 digits");
  const std::uint64_t operand_bound = digits == 1 ? 10 : 100;
  std::string query, answer;
  switch (kind) {
    case TaskKind::add_chain: {
      std::uint64_t total = 0;
      for (std::size_t i = 0; i < difficulty; ++i) {
        const auto x = rng.below(operand_bound);
        total += x;
        query += (i ? "+" : "") + std::to_string(x);
      }
      answer = std::to_string(total);
      break;
    }
    case TaskKind::mod_arith: {
      std::uint64_t total = 0;
      query = "(";
      for (std::size_t i = 0; i < difficulty; ++i) {
        const auto x = rng.below(operand_bound);
        total += x;
        query += (i ? "+" : "") + std::to_string(x);
      }
      query += ")%" + std::to_string(kModulus);
      answer = std::to_string(total % kModulus);
      break;
    }
    case TaskKind::parity: {
      int ones = 0;
      for (std::size_t i = 0; i < difficulty; ++i) {
        const auto bit = rng.below(2);
        ones += static_cast<int>(bit);
        query += static_cast<char>('0' + bit);
      }
      answer = std::to_string(ones % 2);
      break;
    }
    case TaskKind::list_max: {
      std::uint64_t best = 0;
      query = "[";
      for (std::size_t i = 0; i < difficulty; ++i) {
        const auto x = rng.below(10);
        best = std::max(best, x);
        query += (i ? "," : "") + std::to_string(x);
      }
      query += "]";
      answer = std::to_string(best);
      break;
    }
  }
  return make_instance(vocab, kind, difficulty, std::move(query), std::move(answer), seed);
}

// ---------------------------------------------------------------------------
// Reward

/// Tokens strictly after the last ANSWER marker, up to EOS or the end.
/// Returns false when no marker is present.
inline bool extract_answer(std::span<const std::size_t> ids, std::vector<std::size_t>& out) {
  out.clear();
  std::size_t marker = ids.size();
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == Vocabulary::kAnswer) marker = i;
  if (marker == ids.size()) return false;
  for (std::size_t i = marker + 1; i < ids.size() && ids[i] != Vocabulary::kEos; ++i) out.push_back(ids[i]);
  return true;
}

/// 1 for an exact token match of the extracted answer, 0 otherwise.
inline double reward(std::span<const std::size_t> produced, const TaskInstance& instance) {
  std::vector<std::size_t> extracted;
  if (!extract_answer(produced, extracted)) return 0.0;
  return extracted == instance.canonical_answer ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// Datasets

struct MixtureComponent {
  TaskKind kind = TaskKind::add_chain;
  std::size_t min_difficulty = 2;
  std::size_t max_difficulty = 2;
  double weight = 1.0;
  std::size_t digits = 1;
};

using TaskMixture = std::vector<MixtureComponent>;

/// 60% add_chain (2-4 operands, 1-2 digits), 20% mod 7, 10% parity (≤ 8),
/// 10% list_max (≤ 6). The two operand widths split the add_chain share.
inline TaskMixture default_mixture() {
  return {
      {TaskKind::add_chain, 2, 4, 0.3, 1},
      {TaskKind::add_chain, 2, 4, 0.3, 2},
      {TaskKind::mod_arith, 2, 4, 0.2, 1},
      {TaskKind::parity, 1, 8, 0.1, 1},
      {TaskKind::list_max, 1, 6, 0.1, 1},
  };
}

inline TaskMixture single_task_mixture(TaskKind kind, std::size_t difficulty, std::size_t digits = 1) {
  return {{kind, difficulty, difficulty, 1.0, digits}};
}

inline void validate_mixture(const TaskMixture& mixture) {
  if (mixture.empty()) throw ConfigError("task mixture is empty");
  double total = 0.0;
  for (const auto& c : mixture) {
    const auto range = difficulty_range(c.kind);
    if (c.min_difficulty > c.max_difficulty || c.min_difficulty < range.min || c.max_difficulty > range.max) {
      throw ConfigError("tasks: " + to_string(c.kind) + " difficulty range [" + std::to_string(c.min_difficulty) +
                        ", " + std::to_string(c.max_difficulty) + "] is invalid");
    }
    if (!(c.weight >= 0.0)) throw ConfigError("tasks: mixture weights must be nonnegative");
    if (c.digits != 1 && c.digits != 2) throw ConfigError("tasks: digits must be 1 or 2");
    total += c.weight;
  }
  if (!(total > 0.0)) throw ConfigError("tasks: mixture weights sum to zero");
}

/// Longest query_ids any component can produce.
inline std::size_t max_query_length(const TaskMixture& mixture) {
  std::size_t longest = 0;
  for (const auto& c : mixture) {
    const std::size_t d = c.max_difficulty, w = c.digits;
    std::size_t body = 0;
    switch (c.kind) {
      case TaskKind::add_chain: body = d * w + (d - 1); break;
      case TaskKind::mod_arith: body = d * w + (d - 1) + 4; break;
      case TaskKind::parity: body = d; break;
      case TaskKind::list_max: body = 2 * d + 1; break;
    }
    longest = std::max(longest, body + 2);
  }
  return longest;
}

/// Longest target_ids (ANSWER, answer, EOS) any component can produce.
inline std::size_t max_target_length(const TaskMixture& mixture) {
  std::size_t longest = 0;
  for (const auto& c : mixture) {
    std::size_t answer_digits = 1;
    if (c.kind == TaskKind::add_chain) {
      answer_digits = std::to_string(c.max_difficulty * (c.digits == 1 ? 9 : 99)).size();
    }
    longest = std::max(longest, answer_digits + 2);
  }
  return longest;
}

/// Instance i is generated from its own stream keyed by (seed, i), so any
/// prefix of a dataset is itself reproducible.
inline std::vector<TaskInstance> make_dataset(const Vocabulary& vocab, const TaskMixture& mixture, std::size_t size,
                                              std::uint64_t seed) {
  require(size >= 1, "make_dataset: size must be at least 1");
  validate_mixture(mixture);
  double total = 0.0;
  for (const auto& c : mixture) total += c.weight;
  std::vector<TaskInstance> out;
  out.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const std::uint64_t instance_seed = Rng::stream({seed, 0xDA7A, i}).next_u64();
    Rng rng(instance_seed);
    double u = rng.uniform() * total;
    std::size_t pick = mixture.size() - 1;
    for (std::size_t c = 0; c < mixture.size(); ++c) {
      if (u < mixture[c].weight) {
        pick = c;
        break;
      }
      u -= mixture[c].weight;
    }
    const auto& comp = mixture[pick];
    const std::size_t difficulty =
        comp.min_difficulty + static_cast<std::size_t>(rng.below(comp.max_difficulty - comp.min_difficulty + 1));
    out.push_back(generate_instance(vocab, comp.kind, difficulty, rng, comp.digits, instance_seed));
  }
  return out;
}

inline constexpr const char* kDatasetFormat = "lepo-dataset";

/// Line-delimited JSON: a header with the vocabulary hash, then one record
/// per instance. Token ids are rebuilt on load.
inline void save_dataset(const std::vector<TaskInstance>& data, const Vocabulary& vocab,
                         const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw FormatError("cannot open dataset file '" + path.string() + "' for writing");
  os << nlohmann::json{{"format", kDatasetFormat}, {"version", 1}, {"vocab_hash", vocab.hash()},
                       {"vocab_size", vocab.size()}}
            .dump()
     << '\n';
  for (const auto& inst : data) {
    os << nlohmann::json{{"kind", to_string(inst.kind)}, {"difficulty", inst.difficulty}, {"query", inst.query},
                         {"answer", inst.answer}, {"seed", inst.seed}}
              .dump()
       << '\n';
  }
}

inline std::vector<TaskInstance> load_dataset(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open dataset file '" + path.string() + "'");
  std::string line;
  if (!std::getline(is, line)) throw FormatError("dataset file '" + path.string() + "' is empty");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("dataset header is not valid JSON: " + std::string(e.what()));
  }
  if (header.value("format", "") != kDatasetFormat) throw FormatError("dataset header field 'format' is wrong");
  if (header.value("vocab_hash", "") != vocab.hash()) {
    throw FormatError("dataset field 'vocab_hash' " + header.value("vocab_hash", std::string("<missing>")) +
                      " does not match the current vocabulary " + vocab.hash());
  }
  std::vector<TaskInstance> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto rec = nlohmann::json::parse(line);
      out.push_back(make_instance(vocab, parse_task_kind(rec.at("kind").get<std::string>()),
                                  rec.at("difficulty").get<std::size_t>(), rec.at("query").get<std::string>(),
                                  rec.at("answer").get<std::string>(), rec.at("seed").get<std::uint64_t>()));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace lepo

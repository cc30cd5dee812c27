// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace sparseattn {

inline constexpr std::int32_t kPadId = 0;
inline constexpr std::int32_t kUnknownId = 1;

// Lowercases ASCII letters, splits on whitespace and emits every ASCII
// punctuation character as its own token.
std::vector<std::string> tokenize(std::string_view text);

struct Example {
  std::string text;
  int label = 0;
};

struct Corpus {
  std::vector<Example> train;
  std::vector<Example> validation;
  std::string source;
};

class Vocab {
 public:
  Vocab();

  // Most frequent tokens first, ties in lexicographic order, after the
  // reserved pad and unknown entries. max_size counts the reserved ids.
  static Vocab build(const std::vector<Example>& examples, std::size_t max_size);
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  std::int32_t id(std::string_view token) const;
  const std::string& token(std::int32_t id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  // Token ids truncated to max_len; an empty text encodes as [unk].
  std::vector<std::int32_t> encode(std::string_view text, std::size_t max_len) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> ids_;
};

// Reads "sentence<TAB>label" lines; an optional "sentence\tlabel" header is
// skipped, CRLF accepted, blank lines ignored. Raises DataError naming the
// file and line for anything malformed.
std::vector<Example> load_tsv(const std::filesystem::path& path);

void write_tsv(const std::filesystem::path& path, const std::vector<Example>& examples);

// A directory is read as train.tsv plus validation.tsv (or GLUE's dev.tsv); a
// single file is split 90/10 after a seeded shuffle.
Corpus load_corpus(const std::filesystem::path& path, std::uint64_t seed);

struct SyntheticSpec {
  std::uint64_t seed = 7;
  std::size_t size = 2000;
  std::size_t vocab_size = 1000;  // distinct words + the two reserved ids
  std::size_t max_len = 64;
};

inline constexpr std::size_t kCueTokensPerPolarity = 20;

// Balanced two-class corpus: each example is 5..max_len filler words with
// 1-3 cue words of its label's polarity planted at random positions.
Corpus gen_synthetic(const SyntheticSpec& spec);

std::size_t validation_count(std::size_t size);

}  // namespace sparseattn

// SPDX-License-Identifier: Apache-2.0
#include "sparseattn/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "sparseattn/errors.hpp"
#include "sparseattn/rng.hpp"

namespace sparseattn {

namespace {

constexpr std::size_t kMinSyntheticLength = 5;
constexpr std::string_view kHeader = "sentence\tlabel";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_punct(char c) { return std::ispunct(static_cast<unsigned char>(c)) != 0; }

std::string line_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  return path.string() + ":" + std::to_string(line) + ": " + what;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string current;
  auto flush = [&] {
    if (!current.empty()) {
      out.push_back(std::move(current));
      current.clear();
    }
  };
  for (char c : text) {
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      out.emplace_back(1, c);
    } else {
      current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  flush();
  return out;
}

Vocab::Vocab() : tokens_{"<pad>", "<unk>"}, ids_{{"<pad>", kPadId}, {"<unk>", kUnknownId}} {}

Vocab Vocab::build(const std::vector<Example>& examples, std::size_t max_size) {
  if (examples.empty()) {
    throw DataError("cannot build a vocabulary from an empty corpus");
  }
  if (max_size < 2) {
    throw ConfigError("vocabulary max_size must leave room for pad and unknown");
  }
  std::map<std::string, std::size_t> counts;
  for (const Example& ex : examples) {
    for (std::string& tok : tokenize(ex.text)) {
      ++counts[std::move(tok)];
    }
  }
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  Vocab vocab;
  for (const auto& [tok, count] : ranked) {
    if (vocab.size() >= max_size) {
      break;
    }
    if (vocab.ids_.count(tok)) {
      continue;
    }
    vocab.ids_.emplace(tok, static_cast<std::int32_t>(vocab.tokens_.size()));
    vocab.tokens_.push_back(tok);
  }
  return vocab;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  if (tokens.size() < 2 || tokens[0] != "<pad>" || tokens[1] != "<unk>") {
    throw DataError("vocabulary must start with <pad>, <unk>");
  }
  Vocab vocab;
  for (std::size_t i = 2; i < tokens.size(); ++i) {
    if (!vocab.ids_.emplace(tokens[i], static_cast<std::int32_t>(i)).second) {
      throw DataError("duplicate vocabulary token '" + tokens[i] + "'");
    }
    vocab.tokens_.push_back(tokens[i]);
  }
  return vocab;
}

std::int32_t Vocab::id(std::string_view token) const {
  const auto it = ids_.find(std::string(token));
  return it == ids_.end() ? kUnknownId : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw DataError("token id " + std::to_string(id) + " outside vocabulary");
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::vector<std::int32_t> Vocab::encode(std::string_view text, std::size_t max_len) const {
  std::vector<std::int32_t> ids;
  for (const std::string& tok : tokenize(text)) {
    if (ids.size() >= max_len) {
      break;
    }
    ids.push_back(id(tok));
  }
  if (ids.empty()) {
    ids.push_back(kUnknownId);
  }
  return ids;
}

std::vector<Example> load_tsv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw DataError("cannot read " + path.string());
  }
  std::vector<Example> examples;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') {
      line.pop_back();
    }
    if (line_no == 1 && line == kHeader) {
      continue;
    }
    if (std::all_of(line.begin(), line.end(), is_space)) {
      continue;
    }
    const auto tabs = std::count(line.begin(), line.end(), '\t');
    if (tabs != 1) {
      throw DataError(line_error(path, line_no, "expected sentence<TAB>label, found " + std::to_string(tabs) + " tabs"));
    }
    const std::size_t tab = line.find('\t');
    const std::string label = line.substr(tab + 1);
    if (label != "0" && label != "1") {
      throw DataError(line_error(path, line_no, "label must be 0 or 1, got '" + label + "'"));
    }
    examples.push_back({line.substr(0, tab), label == "1" ? 1 : 0});
  }
  if (in.bad()) {
    throw DataError("I/O error while reading " + path.string());
  }
  return examples;
}

void write_tsv(const std::filesystem::path& path, const std::vector<Example>& examples) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw DataError("cannot write " + path.string());
  }
  out << kHeader << '\n';
  for (const Example& ex : examples) {
    if (ex.text.find_first_of("\t\n") != std::string::npos) {
      throw DataError("sentence contains a tab or newline: " + ex.text);
    }
    out << ex.text << '\t' << ex.label << '\n';
  }
  if (!out.flush()) {
    throw DataError("I/O error while writing " + path.string());
  }
}

std::size_t validation_count(std::size_t size) {
  return std::max<std::size_t>(2, static_cast<std::size_t>(std::llround(static_cast<double>(size) * 0.1)));
}

Corpus load_corpus(const std::filesystem::path& path, std::uint64_t seed) {
  Corpus corpus;
  corpus.source = path.string();
  if (std::filesystem::is_directory(path)) {
    corpus.train = load_tsv(path / "train.tsv");
    const auto validation = path / "validation.tsv";
    corpus.validation = load_tsv(std::filesystem::exists(validation) ? validation : path / "dev.tsv");
  } else {
    std::vector<Example> all = load_tsv(path);
    if (all.size() < 2) {
      throw DataError(path.string() + ": need at least two examples to split");
    }
    Rng rng(seed);
    rng.shuffle(all);
    const std::size_t n_val = std::min(all.size() - 1, validation_count(all.size()));
    corpus.validation.assign(all.end() - static_cast<std::ptrdiff_t>(n_val), all.end());
    all.resize(all.size() - n_val);
    corpus.train = std::move(all);
  }
  if (corpus.train.empty() || corpus.validation.empty()) {
    throw DataError(path.string() + ": empty train or validation split");
  }
  return corpus;
}

Corpus gen_synthetic(const SyntheticSpec& spec) {
  constexpr std::size_t reserved = 2;
  if (spec.size < 10) {
    throw ConfigError("synthetic corpus size must be >= 10");
  }
  if (spec.max_len < kMinSyntheticLength) {
    throw ConfigError("synthetic max_len must be >= " + std::to_string(kMinSyntheticLength));
  }
  if (spec.vocab_size < reserved + 2 * kCueTokensPerPolarity + 1) {
    throw ConfigError("synthetic vocab_size must be >= " + std::to_string(reserved + 2 * kCueTokensPerPolarity + 1));
  }
  const std::size_t fillers = spec.vocab_size - reserved - 2 * kCueTokensPerPolarity;

  Rng rng(spec.seed);
  std::set<std::string> seen;
  auto make_example = [&](int label) {
    for (;;) {
      const std::size_t length = kMinSyntheticLength + rng.below(spec.max_len - kMinSyntheticLength + 1);
      std::vector<std::string> words(length);
      for (std::string& w : words) {
        w = "w" + std::to_string(rng.below(fillers));
      }
      std::vector<std::size_t> positions(length);
      for (std::size_t i = 0; i < length; ++i) {
        positions[i] = i;
      }
      rng.shuffle(positions);
      const std::size_t cues = 1 + rng.below(3);
      for (std::size_t c = 0; c < cues; ++c) {
        words[positions[c]] = (label ? "pos" : "neg") + std::to_string(rng.below(kCueTokensPerPolarity));
      }
      std::string text;
      for (const std::string& w : words) {
        text += (text.empty() ? "" : " ") + w;
      }
      if (seen.insert(text).second) {
        return Example{std::move(text), label};
      }
    }
  };

  const std::size_t n_val = validation_count(spec.size);
  const std::size_t n_train = spec.size - n_val;
  Corpus corpus;
  corpus.source = "synthetic(seed=" + std::to_string(spec.seed) + ",size=" + std::to_string(spec.size) +
                  ",vocab=" + std::to_string(spec.vocab_size) + ",max_len=" + std::to_string(spec.max_len) + ")";
  // Labels alternate over the global index so every split and the whole
  // corpus stay balanced within one example.
  for (std::size_t i = 0; i < spec.size; ++i) {
    Example ex = make_example(static_cast<int>(i % 2));
    (i < n_train ? corpus.train : corpus.validation).push_back(std::move(ex));
  }
  rng.shuffle(corpus.train);
  rng.shuffle(corpus.validation);
  return corpus;
}

}  // namespace sparseattn

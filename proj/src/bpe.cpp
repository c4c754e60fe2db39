#include "unifl/bpe.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace unifl::bpe {

namespace {

bool is_space_byte(unsigned char c) { return std::isspace(c) != 0; }

std::vector<std::string> byte_alphabet() {
  std::vector<std::string> tokens;
  tokens.reserve(kByteBase + kNumBytes);
  tokens.emplace_back("<pad>");
  tokens.emplace_back("<unk>");
  for (int b = 0; b < static_cast<int>(kNumBytes); ++b) {
    tokens.emplace_back(1, static_cast<char>(b));
  }
  return tokens;
}

// Merge every left-to-right non-overlapping occurrence of (left, right).
std::vector<std::string> apply_merge(const std::vector<std::string>& pieces,
                                     const std::string& left,
                                     const std::string& right) {
  std::vector<std::string> out;
  out.reserve(pieces.size());
  for (std::size_t i = 0; i < pieces.size(); ++i) {
    if (i + 1 < pieces.size() && pieces[i] == left && pieces[i + 1] == right) {
      out.push_back(left + right);
      ++i;
    } else {
      out.push_back(pieces[i]);
    }
  }
  return out;
}

}  // namespace

TokenizerVocab train_vocab(const std::vector<std::string>& corpus,
                           std::uint32_t target_size) {
  if (corpus.empty()) throw std::invalid_argument("train_vocab: empty corpus");
  if (target_size < kNumBytes) {
    throw std::invalid_argument("train_vocab: target_size must be >= 256");
  }

  // Whitespace-separated word frequencies; BPE never merges across words.
  std::map<std::string, std::uint64_t> word_freq;
  for (const std::string& doc : corpus) {
    std::string word;
    for (unsigned char c : doc) {
      if (is_space_byte(c)) {
        if (!word.empty()) ++word_freq[word], word.clear();
      } else {
        word.push_back(static_cast<char>(c));
      }
    }
    if (!word.empty()) ++word_freq[word];
  }

  std::vector<std::pair<std::vector<std::string>, std::uint64_t>> words;
  words.reserve(word_freq.size());
  for (const auto& [w, f] : word_freq) {
    std::vector<std::string> pieces;
    pieces.reserve(w.size());
    for (char c : w) pieces.emplace_back(1, c);
    words.emplace_back(std::move(pieces), f);
  }

  TokenizerVocab vocab;
  vocab.tokens = byte_alphabet();
  const std::uint32_t max_merges = target_size - kNumBytes;

  for (std::uint32_t m = 0; m < max_merges; ++m) {
    // Adjacent-position pair counts (overlaps included).
    std::map<std::pair<std::string, std::string>, std::uint64_t> pair_count;
    for (const auto& [pieces, freq] : words) {
      for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
        pair_count[{pieces[i], pieces[i + 1]}] += freq;
      }
    }
    if (pair_count.empty()) break;

    // std::map iteration is lexicographic, so keeping strictly-greater as
    // the winner makes the smallest pair win ties.
    auto best = pair_count.begin();
    for (auto it = std::next(pair_count.begin()); it != pair_count.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    if (best->second < 2) break;

    const auto [left, right] = best->first;
    for (auto& [pieces, freq] : words) {
      pieces = apply_merge(pieces, left, right);
    }
    vocab.merges.emplace_back(left, right);
    vocab.tokens.push_back(left + right);
  }
  return vocab;
}

TokenSequence tokenize(const std::string& text, const TokenizerVocab& vocab) {
  if (!vocab.valid()) throw std::invalid_argument("tokenize: invalid vocab");
  TokenSequence seq;
  if (text.empty()) return seq;

  std::map<std::pair<std::string, std::string>, std::size_t> rank;
  for (std::size_t i = 0; i < vocab.merges.size(); ++i) rank[vocab.merges[i]] = i;

  std::vector<std::string> pieces;
  pieces.reserve(text.size());
  for (char c : text) pieces.emplace_back(1, c);

  // Canonical greedy apply: always rewrite the best-ranked pair present.
  while (pieces.size() > 1) {
    std::size_t best_rank = vocab.merges.size();
    for (std::size_t i = 0; i + 1 < pieces.size(); ++i) {
      auto it = rank.find({pieces[i], pieces[i + 1]});
      if (it != rank.end() && it->second < best_rank) best_rank = it->second;
    }
    if (best_rank == vocab.merges.size()) break;
    const auto& [left, right] = vocab.merges[best_rank];
    pieces = apply_merge(pieces, left, right);
  }

  std::unordered_map<std::string, std::uint32_t> token_id;
  token_id.reserve(vocab.tokens.size());
  for (std::uint32_t i = 0; i < vocab.size(); ++i) token_id[vocab.tokens[i]] = i;

  seq.ids.reserve(pieces.size());
  for (const std::string& p : pieces) {
    auto it = token_id.find(p);
    seq.ids.push_back(it != token_id.end() ? it->second : kUnkId);
  }
  return seq;
}

std::string detokenize(const TokenSequence& seq, const TokenizerVocab& vocab) {
  std::string out;
  for (std::uint32_t id : seq.ids) {
    if (id == kPadId || id == kUnkId) continue;
    if (id >= vocab.size()) throw std::out_of_range("detokenize: id out of range");
    out += vocab.tokens[id];
  }
  return out;
}

std::string escape_token(const std::string& raw) {
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size());
  for (unsigned char c : raw) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c <= 0x20 || c == 0x7f) {
      out += "\\x";
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 0xf]);
    } else {
      out.push_back(static_cast<char>(c));
    }
  }
  return out;
}

std::string unescape_token(const std::string& escaped) {
  std::string out;
  out.reserve(escaped.size());
  for (std::size_t i = 0; i < escaped.size(); ++i) {
    if (escaped[i] != '\\') {
      out.push_back(escaped[i]);
      continue;
    }
    if (i + 1 < escaped.size() && escaped[i + 1] == '\\') {
      out.push_back('\\');
      ++i;
    } else if (i + 3 < escaped.size() && escaped[i + 1] == 'x') {
      out.push_back(static_cast<char>(
          std::stoi(escaped.substr(i + 2, 2), nullptr, 16)));
      i += 3;
    } else {
      throw std::runtime_error("bad escape in vocab token: " + escaped);
    }
  }
  return out;
}

void save_vocab(const TokenizerVocab& vocab, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for write: " + path);
  for (const std::string& t : vocab.tokens) f << escape_token(t) << '\n';
  f << "#merges\n";
  for (const auto& [l, r] : vocab.merges) {
    f << escape_token(l) << ' ' << escape_token(r) << '\n';
  }
}

TokenizerVocab load_vocab(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for read: " + path);
  TokenizerVocab vocab;
  std::string line;
  bool in_merges = false;
  while (std::getline(f, line)) {
    if (!in_merges && line == "#merges") {
      in_merges = true;
      continue;
    }
    if (!in_merges) {
      vocab.tokens.push_back(unescape_token(line));
    } else {
      const auto sp = line.find(' ');
      if (sp == std::string::npos) {
        throw std::runtime_error("bad merge line in " + path + ": " + line);
      }
      vocab.merges.emplace_back(unescape_token(line.substr(0, sp)),
                                unescape_token(line.substr(sp + 1)));
    }
  }
  if (!vocab.valid()) throw std::runtime_error("vocab file too small: " + path);
  return vocab;
}

}  // namespace unifl::bpe

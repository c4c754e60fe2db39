#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace unifl::bpe {

constexpr std::uint32_t kPadId = 0;
constexpr std::uint32_t kUnkId = 1;
// Byte b lives at id kByteBase + b, so the base alphabet always covers any
// input and tokenization is total.
constexpr std::uint32_t kByteBase = 2;
constexpr std::uint32_t kNumBytes = 256;

// Byte-level BPE vocabulary. Layout of `tokens`:
//   [0] <pad>, [1] <unk>, [2..257] the 256 single bytes, [258..] merged
//   tokens in merge order. Ids are dense 0..V-1.
// Merge rules never span whitespace (training splits on it), so applying
// them to a whole string cannot glue words together.
struct TokenizerVocab {
  std::vector<std::string> tokens;
  std::vector<std::pair<std::string, std::string>> merges;

  std::uint32_t size() const { return static_cast<std::uint32_t>(tokens.size()); }
  bool valid() const { return tokens.size() >= kByteBase + kNumBytes; }
};

struct TokenSequence {
  std::vector<std::uint32_t> ids;
};

// Deterministic BPE training. `target_size` budgets the byte alphabet plus
// merged tokens (the two specials ride on top), so target 256 means zero
// merges. Pair counts are per adjacent position; the highest count wins,
// ties go to the lexicographically smallest pair; training stops early once
// no pair occurs twice. Train this on public dictionary descriptions and
// schema words only, never on patient records, so the shared vocab leaks
// nothing.
TokenizerVocab train_vocab(const std::vector<std::string>& corpus,
                           std::uint32_t target_size);

// Greedy merge application: repeatedly rewrite the pair with the earliest
// merge rank until none applies. Never emits UNK or PAD.
TokenSequence tokenize(const std::string& text, const TokenizerVocab& vocab);

// Inverse of tokenize: concatenation of token strings (specials decode to
// nothing). detokenize(tokenize(t)) == t for every t.
std::string detokenize(const TokenSequence& seq, const TokenizerVocab& vocab);

// Vocab file: one (escaped) token per line, a `#merges` sentinel, then one
// `left right` merge per line. Bytes <= 0x20, 0x7f and backslash are
// escaped as \xHH / \\ so the file stays line- and diff-friendly.
void save_vocab(const TokenizerVocab& vocab, const std::string& path);
TokenizerVocab load_vocab(const std::string& path);

std::string escape_token(const std::string& raw);
std::string unescape_token(const std::string& escaped);

}  // namespace unifl::bpe

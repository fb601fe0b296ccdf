#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace fetilda {

/// Token list with dense ids; line number in the vocab file is the id.
///
/// The four special tokens may be spelled `[CLS]` or `<CLS>` (likewise SEP,
/// PAD, UNK) and must all be present.
class Vocabulary {
 public:
  static Vocabulary from_tokens(std::vector<std::string> tokens);
  static Vocabulary load(const std::filesystem::path& path);

  std::size_t size() const { return tokens_.size(); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> find(const std::string& token) const;
  bool is_special(int id) const { return id == cls_ || id == sep_ || id == pad_ || id == unk_; }

  int cls() const { return cls_; }
  int sep() const { return sep_; }
  int pad() const { return pad_; }
  int unk() const { return unk_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int cls_ = -1, sep_ = -1, pad_ = -1, unk_ = -1;
};

/// A document's token ids without special tokens, plus the byte span of
/// source text each id came from.
struct TokenSequence {
  std::string doc_id;
  std::vector<int> ids;
  std::vector<std::pair<std::size_t, std::size_t>> offsets;

  friend bool operator==(const TokenSequence& a, const TokenSequence& b) {
    return a.doc_id == b.doc_id && a.ids == b.ids;
  }
};

/// Fixed-length window: `[CLS] tokens... [SEP] [PAD]...` with length b+2.
struct Chunk {
  std::string doc_id;
  std::size_t index = 0;
  std::vector<int> ids;
  std::vector<int> mask;
  /// Set on the single chunk emitted for an empty document.
  bool degenerate = false;

  std::size_t valid_length() const;
};

/// Lowercases, splits on whitespace and ASCII punctuation, then applies greedy
/// longest-match subword lookup (`##` marks a word-internal piece). Each
/// maximal run of characters that no piece covers becomes one UNK.
TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::string doc_id = {});

/// Inverse of tokenize up to case and whitespace: pieces are joined with
/// spaces, `##` pieces glued to their predecessor.
std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab);

/// Truncates to `max_doc_tokens`, cuts into ceil(n/b) windows of b tokens and
/// wraps each as [CLS] window [SEP], padding the last one after [SEP].
/// An empty sequence yields one degenerate [CLS][SEP] chunk.
std::vector<Chunk> make_chunks(const TokenSequence& seq, std::size_t b, std::size_t max_doc_tokens,
                               const Vocabulary& vocab);

/// Strips specials and concatenates; chunks must be in index order 0..m-1.
TokenSequence reassemble(const std::vector<Chunk>& chunks, const Vocabulary& vocab);

/// Rows of `doc_id,index,ones_in_mask` with a header line.
void write_chunk_dump(const std::filesystem::path& path, const std::vector<std::vector<Chunk>>& docs);

}  // namespace fetilda

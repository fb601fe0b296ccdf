#include "fetilda/chunker.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace fetilda {

namespace {

constexpr std::size_t kMaxWordBytes = 200;

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) {
  return (c >= 33 && c <= 47) || (c >= 58 && c <= 64) || (c >= 91 && c <= 96) || (c >= 123 && c <= 126);
}

// Length of the UTF-8 sequence starting at byte c (1 for stray continuation bytes).
std::size_t utf8_len(unsigned char c) {
  if (c < 0x80) return 1;
  if ((c >> 5) == 0x6) return 2;
  if ((c >> 4) == 0xE) return 3;
  if ((c >> 3) == 0x1E) return 4;
  return 1;
}

int special_id(const std::unordered_map<std::string, int>& index, const char* name) {
  for (auto spelling : {std::string("[") + name + "]", std::string("<") + name + ">"}) {
    if (auto it = index.find(spelling); it != index.end()) return it->second;
  }
  throw std::invalid_argument(std::string("vocabulary lacks special token [") + name + "]");
}

}  // namespace

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    auto [it, inserted] = v.index_.emplace(v.tokens_[i], static_cast<int>(i));
    if (!inserted) throw std::invalid_argument("duplicate vocabulary token '" + v.tokens_[i] + "'");
  }
  v.cls_ = special_id(v.index_, "CLS");
  v.sep_ = special_id(v.index_, "SEP");
  v.pad_ = special_id(v.index_, "PAD");
  v.unk_ = special_id(v.index_, "UNK");
  return v;
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open vocabulary file: " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return from_tokens(std::move(tokens));
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  auto it = index_.find(token);
  if (it == index_.end() || is_special(it->second)) return std::nullopt;
  return it->second;
}

std::size_t Chunk::valid_length() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
}

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab, std::string doc_id) {
  TokenSequence out;
  out.doc_id = std::move(doc_id);

  auto emit_word = [&](std::size_t begin, std::size_t end) {
    std::string word(text.substr(begin, end - begin));
    for (auto& ch : word) {
      const auto c = static_cast<unsigned char>(ch);
      if (c < 0x80) ch = static_cast<char>(std::tolower(c));
    }
    if (word.size() > kMaxWordBytes) {
      out.ids.push_back(vocab.unk());
      out.offsets.emplace_back(begin, end);
      return;
    }
    std::size_t pos = 0;
    std::size_t unk_start = 0;
    bool pending_unk = false;
    while (pos < word.size()) {
      std::optional<int> hit;
      std::size_t hit_end = pos;
      for (std::size_t stop = word.size(); stop > pos; --stop) {
        // Only cut on code point boundaries.
        if (stop < word.size() && (static_cast<unsigned char>(word[stop]) & 0xC0) == 0x80) continue;
        std::string piece = pos == 0 ? word.substr(0, stop) : "##" + word.substr(pos, stop - pos);
        if (auto id = vocab.find(piece)) {
          hit = id;
          hit_end = stop;
          break;
        }
      }
      if (hit) {
        if (pending_unk) {
          out.ids.push_back(vocab.unk());
          out.offsets.emplace_back(begin + unk_start, begin + pos);
          pending_unk = false;
        }
        out.ids.push_back(*hit);
        out.offsets.emplace_back(begin + pos, begin + hit_end);
        pos = hit_end;
      } else {
        if (!pending_unk) unk_start = pos;
        pending_unk = true;
        pos += std::min(utf8_len(static_cast<unsigned char>(word[pos])), word.size() - pos);
      }
    }
    if (pending_unk) {
      out.ids.push_back(vocab.unk());
      out.offsets.emplace_back(begin + unk_start, end);
    }
  };

  std::size_t i = 0;
  while (i < text.size()) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_space(c)) {
      ++i;
    } else if (is_punct(c)) {
      emit_word(i, i + 1);
      ++i;
    } else {
      std::size_t j = i;
      while (j < text.size() && !is_space(static_cast<unsigned char>(text[j])) &&
             !is_punct(static_cast<unsigned char>(text[j]))) {
        ++j;
      }
      emit_word(i, j);
      i = j;
    }
  }
  return out;
}

std::string detokenize(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::string out;
  for (int id : ids) {
    const std::string& tok = vocab.token(id);
    if (tok.size() > 2 && tok[0] == '#' && tok[1] == '#' && !out.empty()) {
      out.append(tok, 2);
    } else {
      if (!out.empty()) out.push_back(' ');
      out += tok;
    }
  }
  return out;
}

std::vector<Chunk> make_chunks(const TokenSequence& seq, std::size_t b, std::size_t max_doc_tokens,
                               const Vocabulary& vocab) {
  if (b == 0) throw std::invalid_argument("make_chunks: chunk size b must be >= 1");
  if (max_doc_tokens < b) {
    throw std::invalid_argument("make_chunks: max_doc_tokens (" + std::to_string(max_doc_tokens) +
                                ") must be >= b (" + std::to_string(b) + ")");
  }
  const std::size_t n = std::min(seq.ids.size(), max_doc_tokens);
  const std::size_t m = n == 0 ? 1 : (n + b - 1) / b;
  std::vector<Chunk> chunks(m);
  for (std::size_t c = 0; c < m; ++c) {
    Chunk& ch = chunks[c];
    ch.doc_id = seq.doc_id;
    ch.index = c;
    ch.degenerate = n == 0;
    const std::size_t begin = c * b;
    const std::size_t k = std::min(b, n - std::min(n, begin));
    ch.ids.reserve(b + 2);
    ch.ids.push_back(vocab.cls());
    ch.ids.insert(ch.ids.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(begin),
                  seq.ids.begin() + static_cast<std::ptrdiff_t>(begin + k));
    ch.ids.push_back(vocab.sep());
    ch.ids.resize(b + 2, vocab.pad());
    ch.mask.assign(b + 2, 0);
    std::fill_n(ch.mask.begin(), k + 2, 1);
  }
  return chunks;
}

TokenSequence reassemble(const std::vector<Chunk>& chunks, const Vocabulary& vocab) {
  TokenSequence out;
  if (chunks.empty()) return out;
  out.doc_id = chunks.front().doc_id;
  for (std::size_t c = 0; c < chunks.size(); ++c) {
    if (chunks[c].index != c) {
      throw std::invalid_argument("reassemble: expected chunk index " + std::to_string(c) + ", found " +
                                  std::to_string(chunks[c].index));
    }
    if (chunks[c].doc_id != out.doc_id) throw std::invalid_argument("reassemble: chunks from different documents");
    for (int id : chunks[c].ids) {
      if (id != vocab.cls() && id != vocab.sep() && id != vocab.pad()) out.ids.push_back(id);
    }
  }
  return out;
}

void write_chunk_dump(const std::filesystem::path& path, const std::vector<std::vector<Chunk>>& docs) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write chunk dump: " + path.string());
  os << "doc_id,index,ones_in_mask\n";
  for (const auto& doc : docs) {
    for (const auto& ch : doc) os << ch.doc_id << ',' << ch.index << ',' << ch.valid_length() << '\n';
  }
}

}  // namespace fetilda

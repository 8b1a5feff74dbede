#pragma once

#include <istream>
#include <map>
#include <ostream>
#include <string>
#include <string_view>

#include "ctxrel/numcore.hpp"

namespace ctxrel {

class EmbeddingError : public Error {
 public:
  using Error::Error;
};

enum class UnknownWordPolicy { Fallback, Strict };

/// Word -> vector table read from word2vec-style text. Words missing from
/// the table resolve to the mean of all stored vectors unless the caller
/// asks for strict lookups.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  explicit EmbeddingStore(std::map<std::string, Vec> table);

  std::size_t dimension() const { return dim_; }
  std::size_t size() const { return table_.size(); }
  bool contains(std::string_view word) const;
  const Vec& fallback() const { return fallback_; }
  const std::map<std::string, Vec, std::less<>>& table() const { return table_; }

  /// Stored vector for `word` (trimmed, case-sensitive), else the fallback.
  const Vec& lookup(std::string_view word, UnknownWordPolicy policy = UnknownWordPolicy::Fallback) const;

 private:
  std::size_t dim_ = 0;
  std::map<std::string, Vec, std::less<>> table_;
  Vec fallback_;
};

EmbeddingStore load_embeddings(std::istream& in);
EmbeddingStore load_embeddings_file(const std::string& path);
/// Writes `word v1 ... ve` lines with round-trip precision.
void write_embeddings(std::ostream& out, const EmbeddingStore& store);

/// E(O1, O2): subject embedding followed by object embedding.
Vec encode_pair(const EmbeddingStore& store, std::string_view subject, std::string_view object,
                UnknownWordPolicy policy = UnknownWordPolicy::Fallback);

struct ContextCode {
  Vec code;
  std::string subject;
  std::string object;
};

/// relu(Q * E(O1, O2)).
ContextCode context_code(const EmbeddingStore& store, MatView projection, std::string_view subject,
                         std::string_view object, UnknownWordPolicy policy = UnknownWordPolicy::Fallback);

std::string_view trim(std::string_view s);

}  // namespace ctxrel

#include "ctxrel/embed.hpp"

#include <charconv>
#include <fstream>
#include <iomanip>
#include <limits>

namespace ctxrel {

std::string_view trim(std::string_view s) {
  constexpr std::string_view kSpace = " \t\r\n\f\v";
  const auto first = s.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(kSpace);
  return s.substr(first, last - first + 1);
}

EmbeddingStore::EmbeddingStore(std::map<std::string, Vec> table) {
  if (table.empty()) throw EmbeddingError("embedding table is empty");
  dim_ = table.begin()->second.size();
  if (dim_ == 0) throw EmbeddingError("embedding dimension must be positive");
  fallback_.assign(dim_, 0.0);
  for (auto& [word, vec] : table) {
    if (vec.size() != dim_) {
      throw EmbeddingError("embedding for '" + word + "' has dimension " + std::to_string(vec.size()) +
                           ", expected " + std::to_string(dim_));
    }
    axpy(1.0, vec, fallback_);
  }
  for (double& v : fallback_) v /= static_cast<double>(table.size());
  table_.insert(std::make_move_iterator(table.begin()), std::make_move_iterator(table.end()));
}

bool EmbeddingStore::contains(std::string_view word) const { return table_.find(trim(word)) != table_.end(); }

const Vec& EmbeddingStore::lookup(std::string_view word, UnknownWordPolicy policy) const {
  const auto it = table_.find(trim(word));
  if (it != table_.end()) return it->second;
  if (policy == UnknownWordPolicy::Strict) {
    throw EmbeddingError("no embedding for word '" + std::string(trim(word)) + "'");
  }
  return fallback_;
}

namespace {

bool parse_size(std::string_view tok, std::size_t& out) {
  if (tok.empty()) return false;
  const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), out);
  return ec == std::errc() && ptr == tok.data() + tok.size();
}

}  // namespace

EmbeddingStore load_embeddings(std::istream& in) {
  std::map<std::string, Vec> table;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  std::size_t declared_count = 0, declared_dim = 0, vectors = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest = trim(line);
    if (rest.empty() || rest.front() == '#') continue;

    auto next_token = [&rest]() {
      rest = trim(rest);
      const auto end = rest.find_first_of(" \t");
      std::string_view token = rest.substr(0, end);
      rest = end == std::string_view::npos ? std::string_view{} : rest.substr(end);
      return token;
    };

    const std::string word(next_token());
    if (table.empty() && !header_seen) {
      // Optional word2vec header: "<count> <dim>".
      std::size_t count = 0, width = 0;
      const std::string_view second = trim(rest);
      if (parse_size(word, count) && parse_size(second, width)) {
        header_seen = true;
        declared_count = count;
        declared_dim = width;
        if (width == 0) throw EmbeddingError("line " + std::to_string(line_no) + ": header declares dimension 0");
        continue;
      }
    }
    Vec values;
    for (std::string_view tok = next_token(); !tok.empty(); tok = next_token()) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        throw EmbeddingError("line " + std::to_string(line_no) + ": cannot parse number '" + std::string(tok) +
                             "'");
      }
      values.push_back(v);
    }
    if (values.empty()) throw EmbeddingError("line " + std::to_string(line_no) + ": word without vector");
    if (header_seen && values.size() != declared_dim) {
      throw EmbeddingError("line " + std::to_string(line_no) + ": dimension " + std::to_string(values.size()) +
                           " differs from header dimension " + std::to_string(declared_dim));
    }
    if (dim == 0) {
      dim = values.size();
    } else if (values.size() != dim) {
      throw EmbeddingError("line " + std::to_string(line_no) + ": dimension " + std::to_string(values.size()) +
                           " differs from " + std::to_string(dim));
    }
    table[word] = std::move(values);
    ++vectors;
  }
  if (table.empty()) throw EmbeddingError("embedding stream contains no vectors");
  if (header_seen && vectors != declared_count) {
    throw EmbeddingError("header declares " + std::to_string(declared_count) + " words, found " +
                         std::to_string(vectors));
  }
  return EmbeddingStore(std::move(table));
}

EmbeddingStore load_embeddings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EmbeddingError("cannot open embedding file: " + path);
  try {
    return load_embeddings(in);
  } catch (const EmbeddingError& e) {
    throw EmbeddingError(path + ": " + e.what());
  }
}

void write_embeddings(std::ostream& out, const EmbeddingStore& store) {
  const auto old_precision = out.precision(std::numeric_limits<double>::max_digits10);
  for (const auto& [word, vec] : store.table()) {
    out << word;
    for (double v : vec) out << ' ' << v;
    out << '\n';
  }
  out.precision(old_precision);
}

Vec encode_pair(const EmbeddingStore& store, std::string_view subject, std::string_view object,
                UnknownWordPolicy policy) {
  return concat(store.lookup(subject, policy), store.lookup(object, policy));
}

ContextCode context_code(const EmbeddingStore& store, MatView projection, std::string_view subject,
                         std::string_view object, UnknownWordPolicy policy) {
  const Vec pair = encode_pair(store, subject, object, policy);
  if (projection.cols != pair.size()) {
    throw ShapeError("context projection has " + std::to_string(projection.cols) + " columns, pair embedding has " +
                     std::to_string(pair.size()));
  }
  return {relu(matvec(projection, pair)), std::string(trim(subject)), std::string(trim(object))};
}

}  // namespace ctxrel

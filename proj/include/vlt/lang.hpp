#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vlt/autodiff.hpp"
#include "vlt/errors.hpp"
#include "vlt/ops.hpp"
#include "vlt/random.hpp"
#include "vlt/tensor.hpp"

namespace vlt::lang {

inline constexpr std::size_t kDefaultDim = 32;
inline constexpr const char* kCls = "[CLS]";
inline constexpr const char* kSep = "[SEP]";

/// Lower-cases, drops punctuation (hyphens inside words survive) and splits on
/// whitespace.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    while (!cur.empty() && cur.back() == '-') cur.pop_back();
    while (!cur.empty() && cur.front() == '-') cur.erase(cur.begin());
    if (!cur.empty()) out.push_back(cur);
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (std::isalnum(c) || c == '-') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

/// Deterministic unit vector for a token: a generator seeded from a stable hash
/// of (token, seed) draws entries uniformly in [-1, 1], then L2-normalizes.
inline Tensor embed_token(std::string_view token, std::size_t d, std::uint64_t seed) {
  if (token.empty()) throw ArgumentError("embed_token: empty token");
  if (d == 0) throw ArgumentError("embed_token: dimension must be >= 1");
  Rng rng(stable_hash(token) ^ splitmix64(seed));
  std::vector<double> v(d);
  double norm = 0.0;
  // Redraw in the (measure-zero) all-zero case so normalization is defined.
  while (norm == 0.0) {
    norm = 0.0;
    for (double& x : v) {
      x = rng.uniform(-1.0, 1.0);
      norm += x * x;
    }
  }
  norm = std::sqrt(norm);
  for (double& x : v) x /= norm;
  return Tensor::row(std::move(v));
}

struct SentenceAnnotation {
  std::vector<std::string> tokens;

  static SentenceAnnotation from_text(std::string_view text) {
    SentenceAnnotation s{tokenize(text)};
    if (s.tokens.empty()) throw ArgumentError("sentence annotation has no tokens: '" + std::string(text) + "'");
    return s;
  }
  std::size_t length() const { return tokens.size(); }
  std::string text() const {
    std::string out;
    for (const auto& t : tokens) out += (out.empty() ? "" : " ") + t;
    return out;
  }
};

/// Four-word target description: major class, root class, colour, initial position.
struct AttributeAnnotation {
  std::string major_class;
  std::string root_class;
  std::string color;
  std::string init_position;

  AttributeAnnotation() = default;
  AttributeAnnotation(std::string major, std::string root, std::string col, std::string pos)
      : major_class(std::move(major)), root_class(std::move(root)), color(std::move(col)), init_position(std::move(pos)) {
    validate();
  }

  std::vector<std::string> tokens() const { return {major_class, root_class, color, init_position}; }

  void validate() const {
    for (const std::string& t : tokens()) {
      if (t.empty()) throw ArgumentError("attribute token must be non-empty");
      for (char ch : t) {
        const auto c = static_cast<unsigned char>(ch);
        if (!(std::islower(c) || std::isdigit(c) || c == '-')) {
          throw ArgumentError("attribute token '" + t + "' must be a lower-case word");
        }
      }
    }
  }

  friend bool operator==(const AttributeAnnotation&, const AttributeAnnotation&) = default;
};

/// (N+2) x d matrix of [CLS], words..., [SEP] embeddings, mean-pooled to 1 x d.
inline Tensor sentence_features_mean(const std::vector<std::string>& words, std::size_t d, std::uint64_t seed) {
  if (words.empty()) throw ArgumentError("sentence must contain at least one word");
  std::vector<double> acc(d, 0.0);
  auto add = [&](std::string_view tok) {
    const Tensor e = embed_token(tok, d, seed);
    for (std::size_t i = 0; i < d; ++i) acc[i] += e[i];
  };
  add(kCls);
  for (const auto& w : words) add(w);
  add(kSep);
  const double rows = static_cast<double>(words.size() + 2);
  for (double& v : acc) v /= rows;
  return Tensor::row(std::move(acc));
}

/// Shared token -> 1 x d store. Entries are the 3-row ([CLS], word, [SEP]) mean,
/// so an entry equals the sentence encoding of that single word.
///
/// Concurrent lookups are safe; insertion takes an exclusive lock.
class AttributeDictionary {
 public:
  explicit AttributeDictionary(std::size_t d = kDefaultDim, std::uint64_t seed = 0) : d_(d), seed_(seed) {
    if (d == 0) throw ArgumentError("dictionary dimension must be >= 1");
  }

  AttributeDictionary(const AttributeDictionary& o) : d_(o.d_), seed_(o.seed_) {
    std::shared_lock lock(o.mutex_);
    entries_ = o.entries_;
  }
  AttributeDictionary& operator=(const AttributeDictionary& o) {
    if (this != &o) {
      std::scoped_lock lock(mutex_, o.mutex_);
      d_ = o.d_;
      seed_ = o.seed_;
      entries_ = o.entries_;
    }
    return *this;
  }

  std::size_t dim() const { return d_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  bool contains(const std::string& token) const {
    std::shared_lock lock(mutex_);
    return entries_.count(token) != 0;
  }

  std::optional<Tensor> find(const std::string& token) const {
    std::shared_lock lock(mutex_);
    auto it = entries_.find(token);
    if (it == entries_.end()) return std::nullopt;
    return Tensor::row(it->second);
  }

  /// Returns the stored vector, inserting it on first sight.
  Tensor lookup(const std::string& token) {
    if (auto v = find(token)) return *v;
    std::unique_lock lock(mutex_);
    auto it = entries_.find(token);
    if (it == entries_.end()) {
      it = entries_.emplace(token, sentence_features_mean({token}, d_, seed_).vec()).first;
    }
    return Tensor::row(it->second);
  }

  void save(std::ostream& os) const {
    std::shared_lock lock(mutex_);
    os << "d=" << d_ << " seed=" << seed_ << '\n';
    char buf[40];
    for (const auto& [tok, vec] : entries_) {
      os << tok;
      for (double v : vec) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        os << ' ' << buf;
      }
      os << '\n';
    }
  }

  static AttributeDictionary load(std::istream& is) {
    std::string header;
    if (!std::getline(is, header)) throw ParseError("dictionary file is empty");
    unsigned long long d = 0, seed = 0;
    if (std::sscanf(header.c_str(), "d=%llu seed=%llu", &d, &seed) != 2 || d == 0) {
      throw ParseError("bad dictionary header '" + header + "'");
    }
    AttributeDictionary dict(static_cast<std::size_t>(d), seed);
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ls(line);
      std::string tok;
      ls >> tok;
      std::vector<double> vec;
      std::string num;
      while (ls >> num) vec.push_back(std::strtod(num.c_str(), nullptr));
      if (vec.size() != d) {
        throw ParseError("dictionary line " + std::to_string(lineno) + " has " + std::to_string(vec.size()) +
                         " values, expected " + std::to_string(d));
      }
      dict.entries_[tok] = std::move(vec);
    }
    return dict;
  }

  void save_file(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    save(os);
  }
  static AttributeDictionary load_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open '" + path + "' for reading");
    return load(is);
  }

 private:
  std::size_t d_;
  std::uint64_t seed_;
  std::map<std::string, std::vector<double>> entries_;
  mutable std::shared_mutex mutex_;
};

enum class LangKind { Sentence, Attribute, Zero, TemplatePooled };

inline const char* to_string(LangKind k) {
  switch (k) {
    case LangKind::Sentence: return "sentence";
    case LangKind::Attribute: return "attribute";
    case LangKind::Zero: return "zero";
    case LangKind::TemplatePooled: return "template-pooled";
  }
  return "?";
}

struct LanguageRepresentation {
  Tensor vector;  // 1 x d (sentence) or 1 x 4d (attribute)
  LangKind kind = LangKind::Zero;
  std::size_t d = kDefaultDim;

  std::size_t length() const { return vector.numel(); }
  bool is_zero() const {
    for (double v : vector.vec())
      if (v != 0.0) return false;
    return true;
  }
};

inline LanguageRepresentation encode_sentence(const SentenceAnnotation& s, std::size_t d, std::uint64_t seed) {
  return {sentence_features_mean(s.tokens, d, seed), LangKind::Sentence, d};
}

/// [v_major | v_root | v_color | v_position], length 4d.
inline LanguageRepresentation encode_attributes(const AttributeAnnotation& a, AttributeDictionary& dict) {
  const std::size_t d = dict.dim();
  std::vector<double> out;
  out.reserve(4 * d);
  for (const std::string& tok : a.tokens()) {
    const Tensor v = dict.lookup(tok);
    out.insert(out.end(), v.vec().begin(), v.vec().end());
  }
  return {Tensor::row(std::move(out)), LangKind::Attribute, d};
}

enum class MissingStrategy { Zero, Template, AttributeDefault };

inline MissingStrategy parse_missing_strategy(std::string_view s) {
  if (s == "zero") return MissingStrategy::Zero;
  if (s == "template") return MissingStrategy::Template;
  if (s == "attribute-default" || s == "attribute") return MissingStrategy::AttributeDefault;
  throw ArgumentError("unknown missing-language strategy '" + std::string(s) + "'");
}

inline const char* to_string(MissingStrategy s) {
  switch (s) {
    case MissingStrategy::Zero: return "zero";
    case MissingStrategy::Template: return "template";
    case MissingStrategy::AttributeDefault: return "attribute-default";
  }
  return "?";
}

inline constexpr std::size_t kRoiGrid = 4;

/// ROI-pooled template feature before projection (1 x C).
inline Tensor template_pooled(const Tensor& fmap, const ops::Box& box) {
  Tape tape;
  return ops::roi_pool(tape.constant(fmap), box, kRoiGrid).value();
}

/// Fixed (non-learned) C -> dim projection, entries uniform in [-1,1]/sqrt(C).
inline Tensor template_projection(std::size_t channels, std::size_t dim, std::uint64_t seed) {
  Rng rng = Rng(seed).child("template-projection");
  Tensor w(Shape{channels, dim});
  const double s = 1.0 / std::sqrt(static_cast<double>(channels));
  for (double& v : w.vec()) v = rng.uniform(-1.0, 1.0) * s;
  return w;
}

struct MissingContext {
  std::size_t d = kDefaultDim;
  bool attribute_space = true;  // active dimensionality 4d when true, d otherwise
  std::uint64_t seed = 0;
  std::optional<std::string> category;  // attribute-default
  AttributeDictionary* dict = nullptr;  // attribute-default
  const Tensor* template_fmap = nullptr;  // template
  std::optional<ops::Box> box;  // template

  std::size_t active_dim() const { return attribute_space ? 4 * d : d; }
};

/// Language representation for a sample without annotation.
inline LanguageRepresentation missing_language(MissingStrategy strategy, const MissingContext& ctx) {
  switch (strategy) {
    case MissingStrategy::Zero:
      return {Tensor(Shape{1, ctx.active_dim()}, 0.0), LangKind::Zero, ctx.d};
    case MissingStrategy::Template: {
      if (!ctx.box) throw ArgumentError("template strategy needs a ground-truth box");
      if (!ctx.template_fmap) throw ArgumentError("template strategy needs a template feature map");
      const Tensor pooled = template_pooled(*ctx.template_fmap, *ctx.box);
      const std::size_t C = pooled.numel(), D = ctx.active_dim();
      const Tensor proj = template_projection(C, D, ctx.seed);
      std::vector<double> out(D, 0.0);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < D; ++j) out[j] += pooled[c] * proj[c * D + j];
      return {Tensor::row(std::move(out)), LangKind::TemplatePooled, ctx.d};
    }
    case MissingStrategy::AttributeDefault: {
      if (!ctx.dict) throw ArgumentError("attribute-default strategy needs an attribute dictionary");
      const std::string cat = ctx.category && !ctx.category->empty() ? *ctx.category : "none";
      return encode_attributes(AttributeAnnotation(cat, "object", "none", "none"), *ctx.dict);
    }
  }
  throw ArgumentError("unknown strategy");
}

}  // namespace vlt::lang

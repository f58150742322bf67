#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eside/binary_io.hpp"
#include "eside/error.hpp"
#include "json.hpp"

namespace eside::explain {

using Embedding = std::vector<double>;

// ---- ERE1 ------------------------------------------------------------------
//
// "ERE1", u32 version = 1, u32 count, u32 dim, count x dim f32, u32 CRC32.
// For region files count = n_regions + 1 and row 0 is the full image; the
// same layout carries phrase embeddings (one row per phrase).

inline constexpr std::uint32_t kEreVersion = 1;

struct EmbeddingTable {
  std::uint32_t dim = 0;
  std::vector<float> values;  // row-major count x dim

  std::size_t count() const { return dim ? values.size() / dim : 0; }
  Embedding row(std::size_t i) const {
    return Embedding(values.begin() + static_cast<std::ptrdiff_t>(i * dim),
                     values.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  }
  friend bool operator==(const EmbeddingTable&, const EmbeddingTable&) = default;
};

inline std::vector<std::uint8_t> encode_ere(const EmbeddingTable& t) {
  if (t.dim == 0 || t.values.size() % t.dim != 0) throw InvalidArgument("ERE: values not a multiple of dim");
  io::ByteWriter w;
  w.magic("ERE1");
  w.u32(kEreVersion);
  w.u32(static_cast<std::uint32_t>(t.count()));
  w.u32(t.dim);
  w.f32s(t.values);
  w.crc_trailer();
  return w.take();
}

inline EmbeddingTable decode_ere(std::span<const std::uint8_t> file) {
  io::ByteReader head(file);
  head.expect_magic("ERE1");
  const auto version = head.u32();
  if (version != kEreVersion) {
    throw FormatError(FormatCode::version_mismatch, "ERE version " + std::to_string(version) + " (expected 1)");
  }
  const auto payload = io::verify_crc_trailer(file);
  io::ByteReader r(payload);
  r.expect_magic("ERE1");
  r.u32();
  const auto count = r.u32();
  EmbeddingTable t;
  t.dim = r.u32();
  if (t.dim == 0) throw FormatError(FormatCode::corrupt_header, "ERE: zero dim");
  if (std::uint64_t{count} * t.dim * 4 != r.remaining()) {
    throw FormatError(FormatCode::length_mismatch, "ERE: payload size does not match header");
  }
  t.values.resize(std::size_t{count} * t.dim);
  for (auto& v : t.values) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(FormatCode::non_finite, "ERE: non-finite value");
  }
  return t;
}

inline void write_ere(const EmbeddingTable& t, const std::filesystem::path& path) { io::write_file(path, encode_ere(t)); }
inline EmbeddingTable read_ere(const std::filesystem::path& path) { return decode_ere(io::read_file(path)); }

// ---- ratings -------------------------------------------------------------------

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double cosine(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidArgument("cosine: dimension mismatch");
  const double na = norm(a);
  const double nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

// v_0 (full image) followed by v_1..v_n, unit-normalized on construction.
class RegionEmbeddings {
 public:
  explicit RegionEmbeddings(std::vector<Embedding> vectors) : vectors_(std::move(vectors)) {
    if (vectors_.empty()) throw InvalidArgument("regions: need at least the full-image embedding");
    dim_ = vectors_.front().size();
    if (dim_ == 0) throw InvalidArgument("regions: zero dimension");
    for (auto& v : vectors_) {
      if (v.size() != dim_) throw InvalidArgument("regions: inconsistent dimensions");
      for (double x : v)
        if (!std::isfinite(x)) throw InvalidArgument("regions: non-finite value");
      const double n = norm(v);
      if (n == 0.0) throw InvalidArgument("regions: zero-length embedding");
      for (double& x : v) x /= n;
    }
  }

  static RegionEmbeddings from_table(const EmbeddingTable& t) {
    std::vector<Embedding> rows;
    for (std::size_t i = 0; i < t.count(); ++i) rows.push_back(t.row(i));
    return RegionEmbeddings(std::move(rows));
  }

  std::size_t size() const { return vectors_.size(); }  // n + 1
  std::size_t dim() const { return dim_; }
  const Embedding& operator[](std::size_t i) const { return vectors_[i]; }
  const std::vector<Embedding>& vectors() const { return vectors_; }

 private:
  std::vector<Embedding> vectors_;
  std::size_t dim_ = 0;
};

// c_i = max(cos<p, v_i>, 0), normalized to sum 1; uniform if every c_i is 0.
inline std::vector<double> normalize_sims(std::span<const double> phrase, const RegionEmbeddings& regions) {
  if (phrase.size() != regions.dim()) throw InvalidArgument("normalize_sims: dimension mismatch");
  std::vector<double> s(regions.size());
  double total = 0.0;
  for (std::size_t i = 0; i < regions.size(); ++i) {
    s[i] = std::max(cosine(phrase, regions[i]), 0.0);
    total += s[i];
  }
  if (total == 0.0) {
    std::fill(s.begin(), s.end(), 1.0 / static_cast<double>(s.size()));
  } else {
    for (double& v : s) v /= total;
  }
  return s;
}

// a = sum_i v_i softmax(lambda * s)_i
inline Embedding attend(const RegionEmbeddings& regions, std::span<const double> sims, double lambda) {
  if (sims.size() != regions.size()) throw InvalidArgument("attend: length mismatch");
  if (!(lambda >= 0.0)) throw InvalidArgument("attend: lambda must be >= 0");
  const double mx = *std::max_element(sims.begin(), sims.end());
  std::vector<double> wts(sims.size());
  double z = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    wts[i] = std::exp(lambda * (sims[i] - mx));
    z += wts[i];
  }
  Embedding a(regions.dim(), 0.0);
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const double wi = wts[i] / z;
    for (std::size_t d = 0; d < a.size(); ++d) a[d] += wi * regions[i][d];
  }
  return a;
}

struct Rating {
  double r = 0.0;
  bool degenerate = false;  // attended embedding had zero length; r set to 0
};

inline Rating rate_phrase(std::span<const double> phrase, const RegionEmbeddings& regions, double lambda) {
  const auto sims = normalize_sims(phrase, regions);
  const auto a = attend(regions, sims, lambda);
  if (norm(a) == 0.0) return {0.0, true};
  return {std::clamp(cosine(phrase, a), -1.0, 1.0), false};
}

struct PhraseRating {
  int id = 0;
  std::string text;
  double rating = 0.0;
};

// Descending rating, ties by ascending id, truncated to k.
inline std::vector<PhraseRating> rank_topk(std::vector<PhraseRating> ratings, std::size_t k = 10) {
  if (k < 1) throw InvalidArgument("rank_topk: K must be >= 1");
  std::sort(ratings.begin(), ratings.end(), [](const PhraseRating& a, const PhraseRating& b) {
    if (a.rating != b.rating) return a.rating > b.rating;
    return a.id < b.id;
  });
  if (ratings.size() > k) ratings.resize(k);
  return ratings;
}

struct SimSummary {
  double top5 = 0.0;
  double top10 = 0.0;
  double overall = 0.0;
};

inline SimSummary sim_summary(std::span<const PhraseRating> ratings) {
  if (ratings.empty()) throw InvalidArgument("sim_summary: no ratings");
  std::vector<double> r;
  for (const auto& p : ratings) r.push_back(p.rating);
  std::sort(r.begin(), r.end(), std::greater<>());
  auto prefix_mean = [&](std::size_t k) {
    const std::size_t n = std::min(k, r.size());
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += r[i];
    return s / static_cast<double>(n);
  };
  return {prefix_mean(5), prefix_mean(10), prefix_mean(r.size())};
}

// ---- lexical metrics -----------------------------------------------------------

// Whitespace split, lowercased.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      if (!cur.empty()) tokens.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    }
  }
  if (!cur.empty()) tokens.push_back(std::move(cur));
  return tokens;
}

inline double ttr(std::span<const std::string> tokens) {
  if (tokens.empty()) throw InvalidArgument("ttr: empty token list");
  std::map<std::string, int> counts;
  for (const auto& t : tokens) ++counts[t];
  return static_cast<double>(counts.size()) / static_cast<double>(tokens.size());
}

// Entropy (bits) of the token distribution divided by log2(#types); 0 for
// a single type.
inline double shannon_entropy_norm(std::span<const std::string> tokens) {
  if (tokens.empty()) throw InvalidArgument("shannon_entropy_norm: empty token list");
  std::map<std::string, int> counts;
  for (const auto& t : tokens) ++counts[t];
  if (counts.size() == 1) return 0.0;
  const double n = static_cast<double>(tokens.size());
  double h = 0.0;
  for (const auto& [tok, c] : counts) {
    const double p = c / n;
    h -= p * std::log2(p);
  }
  return std::clamp(h / std::log2(static_cast<double>(counts.size())), 0.0, 1.0);
}

// Splits on sentence punctuation (. ! ? ;), then on commas; trims and drops
// empty chunks.
inline std::vector<std::string> segment_phrases(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    const auto b = cur.find_first_not_of(" \t\r\n");
    if (b != std::string::npos) {
      const auto e = cur.find_last_not_of(" \t\r\n");
      out.push_back(cur.substr(b, e - b + 1));
    }
    cur.clear();
  };
  for (char ch : text) {
    if (ch == '.' || ch == '!' || ch == '?' || ch == ';' || ch == ',') {
      flush();
    } else {
      cur.push_back(ch);
    }
  }
  flush();
  return out;
}

// ---- refinement loop -------------------------------------------------------------

struct Phrase {
  int id = 0;
  std::string text;
  Embedding embedding;
};

struct RewriteRequest {
  std::string image_id;
  std::vector<int> flaw_categories;
  std::string text;
  std::vector<std::string> retained_phrases;
};

using Rewriter = std::function<std::string(const RewriteRequest&)>;
using Segmenter = std::function<std::vector<std::string>(const std::string&)>;
using PhraseEncoder = std::function<Embedding(const std::string&)>;
// Externally computed perplexity for a text, if available.
using PerplexityScorer = std::function<std::optional<double>(const std::string&)>;

inline Rewriter identity_rewriter() {
  return [](const RewriteRequest& req) { return req.text; };
}

inline constexpr int kFlawCategories = 14;

struct ExplanationRecord {
  std::string image_id;
  std::vector<int> flaw_categories;  // 1..14
  std::string text;
  int iteration = 0;
  SimSummary sims;
  double ttr = 0.0;
  double se = 0.0;
  std::optional<double> ppl;
  std::vector<PhraseRating> retained;  // top-K of this iteration

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["image_id"] = image_id;
    j["iter"] = iteration;
    j["text"] = text;
    j["top5"] = sims.top5;
    j["top10"] = sims.top10;
    j["overall"] = sims.overall;
    j["ttr"] = ttr;
    j["se"] = se;
    j["flaw_category"] = flaw_categories;
    if (ppl) j["ppl"] = *ppl;
    return j;
  }
};

struct RefineInput {
  std::string image_id;
  std::vector<int> flaw_categories;
  std::string text;
  std::vector<Phrase> phrases;
};

struct RefineOptions {
  double lambda = 9.0;
  int iterations = 3;
  std::size_t k = 10;
  Segmenter segmenter = segment_phrases;
  PerplexityScorer perplexity;
};

struct RefineOutcome {
  std::vector<ExplanationRecord> records;
  bool ok = true;
  std::string failure;  // set when !ok
};

inline std::vector<PhraseRating> rate_all(std::span<const Phrase> phrases, const RegionEmbeddings& regions,
                                          double lambda) {
  std::vector<PhraseRating> out;
  for (const auto& p : phrases) out.push_back({p.id, p.text, rate_phrase(p.embedding, regions, lambda).r});
  return out;
}

// Records iteration 0 for the input, then per iteration: keep the top-K
// phrases, ask the rewriter for a revised text, re-segment, re-encode and
// record. Failures in the rewriter, segmenter or encoder stop the loop and
// return the records gathered so far.
inline RefineOutcome refine_loop(const RegionEmbeddings& regions, const RefineInput& input, const Rewriter& rewriter,
                                 const PhraseEncoder& encoder, const RefineOptions& opts = {}) {
  if (opts.iterations < 0) throw InvalidArgument("refine_loop: iterations must be >= 0");
  if (opts.k < 1) throw InvalidArgument("refine_loop: K must be >= 1");
  for (int c : input.flaw_categories)
    if (c < 1 || c > kFlawCategories) throw InvalidArgument("refine_loop: flaw category outside 1..14");

  RefineOutcome out;
  std::vector<Phrase> phrases = input.phrases;
  std::string text = input.text;
  for (int it = 0;; ++it) {
    try {
      if (phrases.empty()) throw Error("no phrases to rate");
      const auto ratings = rate_all(phrases, regions, opts.lambda);
      ExplanationRecord rec;
      rec.image_id = input.image_id;
      rec.flaw_categories = input.flaw_categories;
      rec.text = text;
      rec.iteration = it;
      rec.sims = sim_summary(ratings);
      const auto tokens = tokenize(text);
      rec.ttr = tokens.empty() ? 0.0 : explain::ttr(tokens);
      rec.se = tokens.empty() ? 0.0 : shannon_entropy_norm(tokens);
      if (opts.perplexity) rec.ppl = opts.perplexity(text);
      rec.retained = rank_topk(ratings, opts.k);
      const auto retained = rec.retained;
      out.records.push_back(std::move(rec));
      if (it == opts.iterations) break;

      RewriteRequest req{input.image_id, input.flaw_categories, text, {}};
      for (const auto& r : retained) req.retained_phrases.push_back(r.text);
      std::string revised = rewriter(req);
      const auto chunks = opts.segmenter(revised);
      std::vector<Phrase> next;
      for (std::size_t i = 0; i < chunks.size(); ++i) {
        next.push_back({static_cast<int>(i), chunks[i], encoder(chunks[i])});
      }
      phrases = std::move(next);
      text = std::move(revised);
    } catch (const std::exception& e) {
      out.ok = false;
      out.failure = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
  }
  return out;
}

}  // namespace eside::explain

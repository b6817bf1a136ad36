#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace emotrans {

inline constexpr std::string_view kTokenizerVersion = "icu-alnum-lower/1";

/// Lowercases and splits on runs of non-alphanumeric code points (Unicode
/// aware). Punctuation is dropped, digits are kept.
std::vector<std::string> tokenize(std::string_view text);

/// Frequency model over n-grams of one order. Keys are the n tokens joined
/// by U+001F, which the tokenizer never emits.
struct NGramDistribution {
  int n = 1;
  std::unordered_map<std::string, std::uint64_t> counts;
  std::uint64_t total = 0;
  std::string tokenizer_version{kTokenizerVersion};

  /// Counts every n-gram inside one token sequence.
  void add_tokens(const std::vector<std::string>& tokens);
  /// Adds another distribution's counts. Orders must match.
  void merge(const NGramDistribution& other);
  std::uint64_t count(const std::vector<std::string>& gram) const;
  bool empty() const noexcept { return total == 0; }

  bool operator==(const NGramDistribution&) const = default;
};

std::string ngram_key(const std::vector<std::string>& gram);

/// Counts n-grams within each passage (never across passage boundaries).
/// Work is split into shards over `workers` threads and merged.
/// Throws std::invalid_argument unless n is 1, 2 or 3.
NGramDistribution ngram_distribution(const std::vector<std::string>& texts, int n,
                                     std::size_t workers = 1);

/// Sorted union of the distributions' keys.
std::vector<std::string> union_support(std::span<const NGramDistribution* const> dists);

/// (count + alpha) / (total + alpha * |support|) for each key of `support`.
std::vector<double> smoothed_probabilities(const NGramDistribution& dist,
                                           const std::vector<std::string>& support, double alpha);

/// KL(P||Q) in nats over aligned probability vectors. Terms with p = 0
/// contribute nothing.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// KL(P||Q) in nats with additive-alpha smoothing over the union support.
/// Throws std::invalid_argument on an order mismatch, an empty
/// distribution, or alpha <= 0.
double kl_divergence(const NGramDistribution& p, const NGramDistribution& q, double alpha);

/// Pointwise weighted sum of aligned distributions. Weights are normalized.
std::vector<double> mixture(const std::vector<std::vector<double>>& dists,
                            std::span<const double> weights);

struct LengthStats {
  std::map<std::string, double> model_means;
  std::map<std::string, std::size_t> model_counts;
  double combined_mean = 0;
  std::size_t combined_count = 0;
  double original_mean = 0;
  std::size_t original_count = 0;
};

/// Mean token counts per model, pooled over all models, and for the original.
LengthStats length_stats(const std::map<std::string, std::vector<std::string>>& corpora,
                         const std::vector<std::string>& original);

struct ModelDivergence {
  std::string model_id;
  std::size_t passages = 0;
  std::array<double, 3> kl{};  // n = 1, 2, 3
  double mean_length = 0;
};

struct DivergenceReport {
  double alpha = 0.5;
  std::string tokenizer_version{kTokenizerVersion};
  std::size_t original_passages = 0;
  double original_mean_length = 0;
  std::vector<ModelDivergence> models;  // sorted by model id
  ModelDivergence combined;             // pooled synthetic corpus, id "combined"
};

/// Compares the original corpus against each model's synthetic output and
/// against their union.
DivergenceReport analyze_corpora(const std::vector<std::string>& original,
                                 const std::map<std::string, std::vector<std::string>>& synthetic,
                                 double alpha, std::size_t workers = 1);

std::string report_json(const DivergenceReport& report);
std::string report_table(const DivergenceReport& report);
std::string report_csv(const DivergenceReport& report);

}  // namespace emotrans

#include "emotrans/analysis.hpp"

#include <unicode/uchar.h>
#include <unicode/utf8.h>

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "emotrans/util.hpp"

namespace emotrans {

namespace {

constexpr char kJoin = '\x1f';

void append_utf8(std::string& out, UChar32 c) {
  char buf[U8_MAX_LENGTH];
  int32_t len = 0;
  U8_APPEND_UNSAFE(buf, len, c);
  out.append(buf, static_cast<std::size_t>(len));
}

void check_order(int n) {
  if (n < 1 || n > 3) throw std::invalid_argument("n-gram order must be 1, 2 or 3");
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  const auto* bytes = reinterpret_cast<const uint8_t*>(text.data());
  const auto length = static_cast<int32_t>(text.size());
  int32_t i = 0;
  while (i < length) {
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    bool word_char = c >= 0 && (u_isalnum(c) || (!current.empty() && (U_GET_GC_MASK(c) & U_GC_M_MASK)));
    if (word_char) {
      append_utf8(current, u_tolower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::string ngram_key(const std::vector<std::string>& gram) {
  std::string key;
  for (std::size_t i = 0; i < gram.size(); ++i) {
    if (i) key += kJoin;
    key += gram[i];
  }
  return key;
}

void NGramDistribution::add_tokens(const std::vector<std::string>& tokens) {
  const auto order = static_cast<std::size_t>(n);
  if (tokens.size() < order) return;
  std::string key;
  for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
    key.clear();
    for (std::size_t j = 0; j < order; ++j) {
      if (j) key += kJoin;
      key += tokens[i + j];
    }
    ++counts[key];
    ++total;
  }
}

void NGramDistribution::merge(const NGramDistribution& other) {
  if (other.n != n) throw std::invalid_argument("cannot merge n-gram distributions of different order");
  for (const auto& [key, c] : other.counts) counts[key] += c;
  total += other.total;
}

std::uint64_t NGramDistribution::count(const std::vector<std::string>& gram) const {
  auto it = counts.find(ngram_key(gram));
  return it == counts.end() ? 0 : it->second;
}

NGramDistribution ngram_distribution(const std::vector<std::string>& texts, int n,
                                     std::size_t workers) {
  check_order(n);
  constexpr std::size_t kShard = 4096;
  const std::size_t shards = (texts.size() + kShard - 1) / kShard;
  std::vector<NGramDistribution> partial(shards);
  parallel_for(shards, workers, [&](std::size_t s) {
    auto& dist = partial[s];
    dist.n = n;
    const std::size_t end = std::min(texts.size(), (s + 1) * kShard);
    for (std::size_t i = s * kShard; i < end; ++i) dist.add_tokens(tokenize(texts[i]));
  });
  NGramDistribution out;
  out.n = n;
  for (const auto& d : partial) out.merge(d);
  return out;
}

std::vector<std::string> union_support(std::span<const NGramDistribution* const> dists) {
  std::vector<std::string> keys;
  for (const auto* d : dists) {
    for (const auto& [k, c] : d->counts) keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
  return keys;
}

std::vector<double> smoothed_probabilities(const NGramDistribution& dist,
                                           const std::vector<std::string>& support, double alpha) {
  const double denom = static_cast<double>(dist.total) + alpha * static_cast<double>(support.size());
  std::vector<double> out;
  out.reserve(support.size());
  for (const auto& key : support) {
    auto it = dist.counts.find(key);
    double c = it == dist.counts.end() ? 0.0 : static_cast<double>(it->second);
    out.push_back((c + alpha) / denom);
  }
  return out;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distributions are not aligned");
  double sum = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) sum += p[i] * std::log(p[i] / q[i]);
  }
  // Rounding can leave a tiny negative value for identical inputs.
  return std::max(sum, 0.0);
}

double kl_divergence(const NGramDistribution& p, const NGramDistribution& q, double alpha) {
  if (p.n != q.n) throw std::invalid_argument("n-gram orders differ");
  if (p.empty() || q.empty()) throw std::invalid_argument("KL divergence of an empty distribution");
  if (!(alpha > 0)) throw std::invalid_argument("smoothing alpha must be > 0");
  const NGramDistribution* both[] = {&p, &q};
  auto support = union_support(both);
  return kl_divergence(smoothed_probabilities(p, support, alpha),
                       smoothed_probabilities(q, support, alpha));
}

std::vector<double> mixture(const std::vector<std::vector<double>>& dists,
                            std::span<const double> weights) {
  if (dists.size() != weights.size() || dists.empty()) {
    throw std::invalid_argument("mixture needs one weight per distribution");
  }
  double wsum = 0;
  for (double w : weights) wsum += w;
  std::vector<double> out(dists.front().size(), 0.0);
  for (std::size_t d = 0; d < dists.size(); ++d) {
    if (dists[d].size() != out.size()) throw std::invalid_argument("distributions are not aligned");
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += weights[d] / wsum * dists[d][i];
  }
  return out;
}

namespace {

std::pair<double, std::size_t> token_sum(const std::vector<std::string>& texts) {
  double sum = 0;
  for (const auto& t : texts) sum += static_cast<double>(tokenize(t).size());
  return {sum, texts.size()};
}

}  // namespace

LengthStats length_stats(const std::map<std::string, std::vector<std::string>>& corpora,
                         const std::vector<std::string>& original) {
  LengthStats out;
  double pooled = 0;
  for (const auto& [model, texts] : corpora) {
    auto [sum, count] = token_sum(texts);
    out.model_counts[model] = count;
    out.model_means[model] = count ? sum / static_cast<double>(count) : 0.0;
    pooled += sum;
    out.combined_count += count;
  }
  out.combined_mean = out.combined_count ? pooled / static_cast<double>(out.combined_count) : 0.0;
  auto [osum, ocount] = token_sum(original);
  out.original_count = ocount;
  out.original_mean = ocount ? osum / static_cast<double>(ocount) : 0.0;
  return out;
}

DivergenceReport analyze_corpora(const std::vector<std::string>& original,
                                 const std::map<std::string, std::vector<std::string>>& synthetic,
                                 double alpha, std::size_t workers) {
  DivergenceReport report;
  report.alpha = alpha;
  auto lengths = length_stats(synthetic, original);
  report.original_passages = lengths.original_count;
  report.original_mean_length = lengths.original_mean;
  report.combined.model_id = "combined";
  report.combined.passages = lengths.combined_count;
  report.combined.mean_length = lengths.combined_mean;
  for (const auto& [model, texts] : synthetic) {
    ModelDivergence md;
    md.model_id = model;
    md.passages = lengths.model_counts[model];
    md.mean_length = lengths.model_means[model];
    report.models.push_back(md);
  }
  for (int n = 1; n <= 3; ++n) {
    auto p = ngram_distribution(original, n, workers);
    NGramDistribution pooled;
    pooled.n = n;
    for (auto& md : report.models) {
      auto q = ngram_distribution(synthetic.at(md.model_id), n, workers);
      md.kl[n - 1] = kl_divergence(p, q, alpha);
      pooled.merge(q);
    }
    report.combined.kl[n - 1] = kl_divergence(p, pooled, alpha);
  }
  return report;
}

namespace {

ordered_json model_json(const ModelDivergence& m) {
  ordered_json j;
  j["model_id"] = m.model_id;
  j["passages"] = m.passages;
  j["kl_unigram"] = m.kl[0];
  j["kl_bigram"] = m.kl[1];
  j["kl_trigram"] = m.kl[2];
  j["mean_length"] = m.mean_length;
  return j;
}

}  // namespace

std::string report_json(const DivergenceReport& r) {
  ordered_json j;
  j["alpha"] = r.alpha;
  j["kl_units"] = "nats";
  j["tokenizer"] = r.tokenizer_version;
  j["original"] = {{"passages", r.original_passages}, {"mean_length", r.original_mean_length}};
  j["models"] = ordered_json::array();
  for (const auto& m : r.models) j["models"].push_back(model_json(m));
  j["combined"] = model_json(r.combined);
  j["combined_minus_original_length"] = r.combined.mean_length - r.original_mean_length;
  return j.dump(2);
}

std::string report_table(const DivergenceReport& r) {
  std::ostringstream out;
  out << std::fixed;
  out << std::left << std::setw(24) << "corpus" << std::right << std::setw(10) << "passages"
      << std::setw(12) << "KL(1)" << std::setw(12) << "KL(2)" << std::setw(12) << "KL(3)"
      << std::setw(12) << "mean_len" << '\n';
  auto row = [&](const ModelDivergence& m) {
    out << std::left << std::setw(24) << m.model_id << std::right << std::setw(10) << m.passages
        << std::setprecision(4) << std::setw(12) << m.kl[0] << std::setw(12) << m.kl[1]
        << std::setw(12) << m.kl[2] << std::setprecision(2) << std::setw(12) << m.mean_length
        << '\n';
  };
  for (const auto& m : r.models) row(m);
  row(r.combined);
  out << std::left << std::setw(24) << "original" << std::right << std::setw(10)
      << r.original_passages << std::setw(12) << "-" << std::setw(12) << "-" << std::setw(12)
      << "-" << std::setprecision(2) << std::setw(12) << r.original_mean_length << '\n';
  out << "alpha=" << std::setprecision(3) << r.alpha << ", KL in nats\n";
  return out.str();
}

std::string report_csv(const DivergenceReport& r) {
  std::ostringstream out;
  out << std::setprecision(10);
  write_csv_row(out, {"corpus", "passages", "kl_unigram", "kl_bigram", "kl_trigram", "mean_length"});
  auto row = [&](const ModelDivergence& m) {
    std::ostringstream a, b, c, d;
    a << std::setprecision(10) << m.kl[0];
    b << std::setprecision(10) << m.kl[1];
    c << std::setprecision(10) << m.kl[2];
    d << std::setprecision(10) << m.mean_length;
    write_csv_row(out, {m.model_id, std::to_string(m.passages), a.str(), b.str(), c.str(), d.str()});
  };
  for (const auto& m : r.models) row(m);
  row(r.combined);
  std::ostringstream len;
  len << std::setprecision(10) << r.original_mean_length;
  write_csv_row(out, {"original", std::to_string(r.original_passages), "", "", "", len.str()});
  return out.str();
}

}  // namespace emotrans

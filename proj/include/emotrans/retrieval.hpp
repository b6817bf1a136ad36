#pragma once

#include <chrono>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "emotrans/llm_gateway.hpp"

namespace emotrans {

/// Row-major dense matrix of float32 embeddings, one row per id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;
  /// Throws InputError if sizes disagree or any entry is NaN/Inf.
  EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim, std::vector<float> values);

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  const std::vector<std::string>& ids() const noexcept { return ids_; }
  const std::vector<float>& values() const noexcept { return values_; }
  std::span<const float> row(std::size_t i) const {
    return {values_.data() + i * dim_, dim_};
  }

  /// Rows of `other` appended after this matrix's rows. Dims must match.
  EmbeddingMatrix concat(const EmbeddingMatrix& other) const;

  bool operator==(const EmbeddingMatrix&) const = default;

 private:
  std::vector<std::string> ids_;
  std::size_t dim_ = 0;
  std::vector<float> values_;
};

struct Hit {
  std::string passage_id;
  double score = 0;  // raw inner product

  bool operator==(const Hit&) const = default;
};

struct RetrievalResult {
  std::string query_id;
  std::vector<Hit> hits;  // score descending, then id ascending
};

/// Inner product accumulated in double, left to right.
double inner_product(std::span<const float> a, std::span<const float> b);

/// Exact top-k maximum inner product search over every row of `index`.
/// Ties break by ascending passage id. k larger than the index returns the
/// full ranking. Throws std::invalid_argument on k == 0 or a dim mismatch.
std::vector<Hit> top_k_mips(std::span<const float> query, const EmbeddingMatrix& index,
                            std::size_t k);

/// Runs top_k_mips for every row of `queries` across `workers` threads.
std::vector<RetrievalResult> search_all(const EmbeddingMatrix& queries,
                                        const EmbeddingMatrix& index, std::size_t k,
                                        std::size_t workers = 1);

// ---------------------------------------------------------------------------
// Embedding files: a binary matrix plus a sidecar ids file.
//
//   offset 0  char[4]  magic "EMBF"
//          4  u32      version (1)
//          8  u32      dim
//         12  u64      count
//         20  f32[count*dim] little-endian, row-major
//
// The sidecar "<path>.ids" holds one id per line in row order.

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix);
EmbeddingMatrix load_embeddings(const std::filesystem::path& path);
std::filesystem::path ids_path_for(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Embedding endpoint: POST {base_url}/v1/embeddings
//   {"input": [str], "model": str} -> {"data": [{"embedding": [float]}]}

struct EmbeddingEndpoint {
  std::string base_url;
  std::string model;
  std::string api_key_env;
  std::size_t batch_size = 64;
  std::size_t dim = 0;  // expected dimension; 0 = learn from the first batch
  std::chrono::milliseconds timeout{60000};
  int max_retries = 3;
};

/// Embeds texts in order, batch by batch. Throws TransportError (with the last
/// HTTP status) when a batch fails after retries, and InputError when batches
/// disagree on dimension or with the configured dim.
EmbeddingMatrix embed_texts(const std::vector<std::string>& ids,
                            const std::vector<std::string>& texts,
                            const EmbeddingEndpoint& endpoint, Transport& transport,
                            const RetryPolicy& retry = {});

}  // namespace emotrans

#include "emotrans/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "emotrans/error.hpp"

namespace emotrans {

static_assert(std::endian::native == std::endian::little,
              "embedding files are read and written as little-endian");

EmbeddingMatrix::EmbeddingMatrix(std::vector<std::string> ids, std::size_t dim,
                                 std::vector<float> values)
    : ids_(std::move(ids)), dim_(dim), values_(std::move(values)) {
  if (dim_ == 0) throw InputError("embedding dim must be > 0");
  if (values_.size() != ids_.size() * dim_) {
    throw InputError("embedding matrix has " + std::to_string(values_.size()) + " values for " +
                     std::to_string(ids_.size()) + " rows of dim " + std::to_string(dim_));
  }
  for (std::size_t i = 0; i < values_.size(); ++i) {
    if (!std::isfinite(values_[i])) {
      throw InputError("non-finite embedding value in row '" + ids_[i / dim_] + "'");
    }
  }
}

EmbeddingMatrix EmbeddingMatrix::concat(const EmbeddingMatrix& other) const {
  if (rows() == 0) return other;
  if (other.rows() == 0) return *this;
  if (other.dim_ != dim_) {
    throw InputError("embedding dim mismatch: " + std::to_string(dim_) + " vs " +
                     std::to_string(other.dim_));
  }
  auto ids = ids_;
  ids.insert(ids.end(), other.ids_.begin(), other.ids_.end());
  auto values = values_;
  values.insert(values.end(), other.values_.begin(), other.values_.end());
  return EmbeddingMatrix(std::move(ids), dim_, std::move(values));
}

double inner_product(std::span<const float> a, std::span<const float> b) {
  double sum = 0;
  for (std::size_t i = 0; i < a.size(); ++i) sum += static_cast<double>(a[i]) * b[i];
  return sum;
}

namespace {

struct Ranked {
  double score;
  std::size_t row;
};

}  // namespace

std::vector<Hit> top_k_mips(std::span<const float> query, const EmbeddingMatrix& index,
                            std::size_t k) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  if (index.rows() == 0) return {};
  if (query.size() != index.dim()) {
    throw std::invalid_argument("query dim " + std::to_string(query.size()) +
                                " does not match index dim " + std::to_string(index.dim()));
  }
  const auto& ids = index.ids();
  auto better = [&](const Ranked& a, const Ranked& b) {
    if (a.score != b.score) return a.score > b.score;
    return ids[a.row] < ids[b.row];
  };
  k = std::min(k, index.rows());

  // Blocked scan keeping a bounded heap whose top is the current worst hit.
  constexpr std::size_t kBlock = 256;
  std::vector<Ranked> heap;
  heap.reserve(k + 1);
  std::vector<double> scores(kBlock);
  for (std::size_t start = 0; start < index.rows(); start += kBlock) {
    const std::size_t end = std::min(index.rows(), start + kBlock);
    for (std::size_t r = start; r < end; ++r) scores[r - start] = inner_product(query, index.row(r));
    for (std::size_t r = start; r < end; ++r) {
      Ranked cand{scores[r - start], r};
      if (heap.size() < k) {
        heap.push_back(cand);
        std::push_heap(heap.begin(), heap.end(), better);
      } else if (better(cand, heap.front())) {
        std::pop_heap(heap.begin(), heap.end(), better);
        heap.back() = cand;
        std::push_heap(heap.begin(), heap.end(), better);
      }
    }
  }
  std::sort(heap.begin(), heap.end(), better);
  std::vector<Hit> hits;
  hits.reserve(heap.size());
  for (const auto& r : heap) hits.push_back({ids[r.row], r.score});
  return hits;
}

std::vector<RetrievalResult> search_all(const EmbeddingMatrix& queries,
                                        const EmbeddingMatrix& index, std::size_t k,
                                        std::size_t workers) {
  if (queries.rows() > 0 && index.rows() > 0 && queries.dim() != index.dim()) {
    throw InputError("query dim " + std::to_string(queries.dim()) + " does not match index dim " +
                     std::to_string(index.dim()));
  }
  std::vector<RetrievalResult> out(queries.rows());
  parallel_for(queries.rows(), workers, [&](std::size_t i) {
    out[i].query_id = queries.ids()[i];
    out[i].hits = top_k_mips(queries.row(i), index, k);
  });
  return out;
}

namespace {

constexpr char kMagic[4] = {'E', 'M', 'B', 'F'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::filesystem::path& path) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw InputError(path.string() + ": truncated embedding header");
  return value;
}

}  // namespace

std::filesystem::path ids_path_for(const std::filesystem::path& path) {
  auto p = path;
  p += ".ids";
  return p;
}

void save_embeddings(const std::filesystem::path& path, const EmbeddingMatrix& matrix) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out.write(kMagic, 4);
    write_pod<std::uint32_t>(out, kVersion);
    write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(matrix.dim()));
    write_pod<std::uint64_t>(out, matrix.rows());
    out.write(reinterpret_cast<const char*>(matrix.values().data()),
              static_cast<std::streamsize>(matrix.values().size() * sizeof(float)));
    if (!out) throw Error("write failed: " + tmp.string());
  }
  std::string ids;
  for (const auto& id : matrix.ids()) {
    if (id.find('\n') != std::string::npos) throw InputError("id contains a newline: " + id);
    ids += id;
    ids += '\n';
  }
  atomic_write(ids_path_for(path), ids);
  std::filesystem::rename(tmp, path);
}

EmbeddingMatrix load_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) {
    throw InputError(path.string() + ": not an embedding file");
  }
  auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw InputError(path.string() + ": unsupported version " + std::to_string(version));
  }
  auto dim = read_pod<std::uint32_t>(in, path);
  auto count = read_pod<std::uint64_t>(in, path);
  std::vector<float> values(static_cast<std::size_t>(count) * dim);
  in.read(reinterpret_cast<char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!in) throw InputError(path.string() + ": truncated embedding rows");

  std::vector<std::string> ids;
  std::ifstream id_in(ids_path_for(path));
  if (!id_in) throw InputError("missing ids sidecar " + ids_path_for(path).string());
  std::string line;
  while (std::getline(id_in, line)) ids.push_back(line);
  if (ids.size() != count) {
    throw InputError(path.string() + ": header says " + std::to_string(count) + " rows but sidecar has " +
                     std::to_string(ids.size()) + " ids");
  }
  return EmbeddingMatrix(std::move(ids), dim, std::move(values));
}

EmbeddingMatrix embed_texts(const std::vector<std::string>& ids,
                            const std::vector<std::string>& texts,
                            const EmbeddingEndpoint& endpoint, Transport& transport,
                            const RetryPolicy& retry) {
  if (ids.size() != texts.size()) throw InputError("embed_texts: ids and texts differ in length");
  if (texts.empty()) {
    if (endpoint.dim == 0) {
      throw ConfigError("embedding endpoint has no configured dim for an empty input");
    }
    return EmbeddingMatrix({}, endpoint.dim, {});
  }
  const std::size_t batch = std::max<std::size_t>(endpoint.batch_size, 1);
  std::size_t dim = endpoint.dim;
  std::vector<float> values;
  values.reserve(texts.size() * std::max<std::size_t>(dim, 1));
  HttpHeaders headers = auth_headers(endpoint.api_key_env);

  for (std::size_t start = 0; start < texts.size(); start += batch) {
    const std::size_t end = std::min(texts.size(), start + batch);
    json body{{"input", json::array()}, {"model", endpoint.model}};
    for (std::size_t i = start; i < end; ++i) body["input"].push_back(texts[i]);

    std::vector<std::vector<float>> rows;
    auto parse = [&](const HttpReply& reply) {
      try {
        auto j = json::parse(reply.body);
        const auto& data = j.at("data");
        if (!data.is_array() || data.size() != end - start) return false;
        rows.clear();
        for (const auto& item : data) rows.push_back(item.at("embedding").get<std::vector<float>>());
        return true;
      } catch (const json::exception&) {
        return false;
      }
    };
    auto outcome = post_with_retries(transport, endpoint.base_url, "/v1/embeddings", body.dump(),
                                     headers, endpoint.timeout, endpoint.max_retries, retry, parse);
    bool ok = outcome.reply.status >= 200 && outcome.reply.status < 300 && outcome.reply.error.empty();
    if (!ok) {
      throw TransportError("embedding endpoint failed after " + std::to_string(outcome.attempts) +
                               " attempt(s), status " + std::to_string(outcome.reply.status),
                           outcome.reply.status);
    }
    for (const auto& row : rows) {
      if (dim == 0) dim = row.size();
      if (row.size() != dim) {
        throw InputError("embedding dimension mismatch: expected " + std::to_string(dim) +
                         ", got " + std::to_string(row.size()));
      }
      values.insert(values.end(), row.begin(), row.end());
    }
  }
  return EmbeddingMatrix(ids, dim, std::move(values));
}

}  // namespace emotrans

/*
    Licensed under the Apache License, Version 2.0 (the "License");
    you may not use this file except in compliance with the License.
    You may obtain a copy of the License at

        https://www.apache.org/licenses/LICENSE-2.0

    Unless required by applicable law or agreed to in writing, software
    distributed under the License is distributed on an "AS IS" BASIS,
    WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
    See the License for the specific language governing permissions and
    limitations under the License.
*/

#pragma once

#include "vgssl/autodiff.hpp"
#include "vgssl/encoder.hpp"
#include "vgssl/geodata.hpp"

#include <span>
#include <vector>

// Exact nearest-neighbor retrieval over L2-normalized embeddings and the
// Recall@N metric.
namespace vgssl::retrieval {

using geo::SampleId;

struct EmbeddingIndex {
    std::vector<SampleId> ids;
    ad::Tensor vectors; ///< one unit-norm row per id
    std::vector<geo::Position> positions;

    std::size_t size() const { return ids.size(); }
    std::size_t dim() const { return vectors.cols(); }
};

struct RecallReport {
    std::vector<std::size_t> n_values;
    std::vector<double> recalls;
    double threshold_m = 25.0;
    std::size_t n_queries = 0;
};

/// Unit-normalizes every row in place; a zero row raises NumericError.
void normalize_rows(ad::Tensor& m);

/// Index from raw vectors. Rows are reordered by ascending id and normalized.
EmbeddingIndex make_index(std::vector<SampleId> ids, const ad::Tensor& vectors, std::vector<geo::Position> positions);

/// Eval-mode embeddings of the whole database.
EmbeddingIndex build_index(const geo::GeoDataset& ds, const nn::Encoder& encoder);

/// Eval-mode embeddings of arbitrary samples, one row per id.
ad::Tensor embed_samples(const geo::GeoDataset& ds, const nn::Encoder& encoder, std::span<const SampleId> ids);

/// Ids of the k nearest rows (ascending distance, then ascending id). k > size
/// returns every id. The query is normalized before searching.
std::vector<SampleId> knn(const EmbeddingIndex& index, std::span<const double> query, std::size_t k);

/// Recall@N for every N in n_values (ascending): the fraction of queries with
/// at least one of their top-N retrieved samples within threshold_m.
RecallReport recall_at_n(const geo::GeoDataset& ds, const EmbeddingIndex& index, const ad::Tensor& query_vectors,
                         std::span<const std::size_t> n_values, double threshold_m = 25.0);

/// Embeds the queries with the encoder and evaluates recall_at_n.
RecallReport recall_at_n(const geo::GeoDataset& ds, const EmbeddingIndex& index, const nn::Encoder& encoder,
                         std::span<const std::size_t> n_values, double threshold_m = 25.0);

} // namespace vgssl::retrieval

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

#include "vgssl/retrieval.hpp"

#include "vgssl/errors.hpp"
#include "vgssl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace vgssl::retrieval {

using ad::Shape;
using ad::Tensor;

void normalize_rows(Tensor& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) {
            acc += m(r, c) * m(r, c);
        }
        const double n = std::sqrt(acc);
        if (!(n > 1e-12)) {
            throw NumericError("cannot normalize embedding row " + std::to_string(r) + ": zero norm");
        }
        for (std::size_t c = 0; c < m.cols(); ++c) {
            m(r, c) /= n;
        }
    }
}

EmbeddingIndex make_index(std::vector<SampleId> ids, const Tensor& vectors, std::vector<geo::Position> positions) {
    if (ids.size() != vectors.rows() || ids.size() != positions.size()) {
        throw std::invalid_argument("index needs aligned ids (" + std::to_string(ids.size()) + "), vectors (" +
                                    std::to_string(vectors.rows()) + ") and positions (" +
                                    std::to_string(positions.size()) + ")");
    }
    std::vector<std::size_t> order(ids.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ids[a] < ids[b]; });
    EmbeddingIndex index;
    index.vectors = vectors.gather_rows(order);
    normalize_rows(index.vectors);
    for (auto i : order) {
        index.ids.push_back(ids[i]);
        index.positions.push_back(positions[i]);
    }
    return index;
}

Tensor embed_samples(const geo::GeoDataset& ds, const nn::Encoder& encoder, std::span<const SampleId> ids) {
    const std::size_t f = encoder.config().input_dim;
    if (ds.feature_dim() != f) {
        throw std::invalid_argument("dataset feature width " + std::to_string(ds.feature_dim()) +
                                    " does not match encoder input_dim " + std::to_string(f));
    }
    Tensor batch(Shape{ids.size(), f});
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const auto& feats = ds.sample(ids[i]).features;
        std::copy(feats.begin(), feats.end(), batch.data().begin() + static_cast<std::ptrdiff_t>(i * f));
    }
    return encoder.embed(batch);
}

EmbeddingIndex build_index(const geo::GeoDataset& ds, const nn::Encoder& encoder) {
    std::vector<SampleId> ids;
    std::vector<geo::Position> positions;
    for (const auto& s : ds.database) {
        ids.push_back(s.id);
        positions.push_back(s.position);
    }
    const Tensor vectors = embed_samples(ds, encoder, ids);
    return make_index(std::move(ids), vectors, std::move(positions));
}

std::vector<SampleId> knn(const EmbeddingIndex& index, std::span<const double> query, std::size_t k) {
    if (k < 1) {
        throw std::invalid_argument("knn needs k >= 1");
    }
    if (query.size() != index.dim()) {
        throw std::invalid_argument("knn query has dimension " + std::to_string(query.size()) +
                                    ", index has dimension " + std::to_string(index.dim()));
    }
    Tensor q(Shape{1, query.size()}, std::vector<double>(query.begin(), query.end()));
    normalize_rows(q);
    std::vector<double> dist(index.size());
    kernels::pairwise_l2(q.data(), index.vectors.data(), dist, 1, index.size(), index.dim());
    // Rows are sorted by id, so the (distance, row) order is (distance, id).
    const auto top = kernels::topk_rows(dist, 1, index.size(), std::min(k, index.size()));
    std::vector<SampleId> out;
    for (const auto& n : top.front()) {
        out.push_back(index.ids[n.index]);
    }
    return out;
}

RecallReport recall_at_n(const geo::GeoDataset& ds, const EmbeddingIndex& index, const Tensor& query_vectors,
                         std::span<const std::size_t> n_values, double threshold_m) {
    const std::size_t nq = ds.queries.size();
    if (nq == 0) {
        throw std::invalid_argument("recall needs at least one query");
    }
    if (query_vectors.rows() != nq || query_vectors.cols() != index.dim()) {
        throw std::invalid_argument("query embeddings " + query_vectors.shape().str() + " do not match " +
                                    std::to_string(nq) + " queries of dimension " + std::to_string(index.dim()));
    }
    if (n_values.empty() || !std::is_sorted(n_values.begin(), n_values.end()) || n_values.front() < 1) {
        throw std::invalid_argument("recall N values must be non-empty, ascending and >= 1");
    }
    if (index.size() == 0) {
        throw std::invalid_argument("recall needs a non-empty index");
    }
    Tensor q = query_vectors;
    normalize_rows(q);
    std::vector<double> dist(nq * index.size());
    kernels::pairwise_l2(q.data(), index.vectors.data(), dist, nq, index.size(), index.dim());
    const std::size_t k = std::min(n_values.back(), index.size());
    const auto top = kernels::topk_rows(dist, nq, index.size(), k);

    // First rank (1-based) at which each query finds a sample within the threshold; 0 if none.
    std::vector<std::size_t> first_hit(nq, 0);
    for (std::size_t i = 0; i < nq; ++i) {
        for (std::size_t r = 0; r < top[i].size(); ++r) {
            if (geo::distance_m(ds.queries[i].position, index.positions[top[i][r].index]) <= threshold_m) {
                first_hit[i] = r + 1;
                break;
            }
        }
    }
    RecallReport report;
    report.threshold_m = threshold_m;
    report.n_queries = nq;
    for (auto n : n_values) {
        std::size_t hits = 0;
        for (auto h : first_hit) {
            if (h != 0 && h <= n) {
                ++hits;
            }
        }
        report.n_values.push_back(n);
        report.recalls.push_back(static_cast<double>(hits) / static_cast<double>(nq));
    }
    return report;
}

RecallReport recall_at_n(const geo::GeoDataset& ds, const EmbeddingIndex& index, const nn::Encoder& encoder,
                         std::span<const std::size_t> n_values, double threshold_m) {
    std::vector<SampleId> ids;
    for (const auto& s : ds.queries) {
        ids.push_back(s.id);
    }
    return recall_at_n(ds, index, embed_samples(ds, encoder, ids), n_values, threshold_m);
}

} // namespace vgssl::retrieval

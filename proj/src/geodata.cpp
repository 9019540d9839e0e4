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

#include "vgssl/geodata.hpp"

#include "vgssl/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace vgssl::geo {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

/// Shortest text that parses back to the same double.
std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text, std::size_t line) {
    double v = 0.0;
    const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
    if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
        throw std::runtime_error("dataset line " + std::to_string(line) + ": cannot parse number '" +
                                 std::string(text) + "'");
    }
    return v;
}

std::vector<std::string_view> split_csv(std::string_view line) {
    std::vector<std::string_view> fields;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        if (comma == std::string_view::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

} // namespace

std::string_view coord_mode_name(CoordMode mode) { return mode == CoordMode::Planar ? "planar" : "geodetic"; }

CoordMode parse_coord_mode(std::string_view name) {
    if (name == "planar") {
        return CoordMode::Planar;
    }
    if (name == "geodetic") {
        return CoordMode::Geodetic;
    }
    throw std::invalid_argument("unknown coordinate mode '" + std::string(name) + "' (planar or geodetic)");
}

Position Position::planar(double x, double y) {
    Position p{CoordMode::Planar, x, y};
    p.validate();
    return p;
}

Position Position::geodetic(double lat, double lon) {
    Position p{CoordMode::Geodetic, lat, lon};
    p.validate();
    return p;
}

void Position::validate() const {
    if (!std::isfinite(x_or_lat) || !std::isfinite(y_or_lon)) {
        throw std::invalid_argument("position coordinates must be finite");
    }
    if (mode == CoordMode::Geodetic &&
        (x_or_lat < -90.0 || x_or_lat > 90.0 || y_or_lon < -180.0 || y_or_lon > 180.0)) {
        throw std::invalid_argument("geodetic position out of range: lat " + std::to_string(x_or_lat) + ", lon " +
                                    std::to_string(y_or_lon));
    }
}

double distance_m(const Position& a, const Position& b) {
    if (a.mode != b.mode) {
        throw std::invalid_argument("distance_m: cannot mix planar and geodetic positions");
    }
    if (a.mode == CoordMode::Planar) {
        return std::hypot(a.x_or_lat - b.x_or_lat, a.y_or_lon - b.y_or_lon);
    }
    const double lat1 = a.x_or_lat * kDegToRad;
    const double lat2 = b.x_or_lat * kDegToRad;
    const double dlat = lat2 - lat1;
    const double dlon = (b.y_or_lon - a.y_or_lon) * kDegToRad;
    const double s1 = std::sin(dlat / 2.0);
    const double s2 = std::sin(dlon / 2.0);
    const double h = s1 * s1 + std::cos(lat1) * std::cos(lat2) * s2 * s2;
    return 2.0 * kEarthRadiusM * std::asin(std::min(1.0, std::sqrt(h)));
}

// ---------------------------------------------------------------------------
// GeoDataset

void GeoDataset::validate() const {
    if (!(r_pos > 0.0) || !(r_pos < r_neg)) {
        throw std::invalid_argument("dataset radii must satisfy 0 < r_pos < r_neg");
    }
    std::unordered_set<SampleId> ids;
    const GeoSample* first = nullptr;
    for (const auto* list : {&database, &queries}) {
        for (const auto& s : *list) {
            if (!ids.insert(s.id).second) {
                throw std::invalid_argument("duplicate sample id " + std::to_string(s.id));
            }
            s.position.validate();
            if (first == nullptr) {
                first = &s;
                continue;
            }
            if (s.position.mode != first->position.mode) {
                throw std::invalid_argument("dataset mixes planar and geodetic positions");
            }
            if (s.features.size() != first->features.size()) {
                throw std::invalid_argument("sample " + std::to_string(s.id) + " has " +
                                            std::to_string(s.features.size()) + " features, expected " +
                                            std::to_string(first->features.size()));
            }
        }
    }
    for (const auto& s : queries) {
        if (s.role != Role::Query) {
            throw std::invalid_argument("sample " + std::to_string(s.id) + " is listed as a query but has role database");
        }
    }
    for (const auto& s : database) {
        if (s.role != Role::Database) {
            throw std::invalid_argument("sample " + std::to_string(s.id) + " is in the database but has role query");
        }
    }
}

void GeoDataset::reindex() {
    index_.clear();
    for (std::size_t i = 0; i < database.size(); ++i) {
        index_[database[i].id] = Slot{Role::Database, i};
    }
    for (std::size_t i = 0; i < queries.size(); ++i) {
        index_[queries[i].id] = Slot{Role::Query, i};
    }
}

const GeoSample& GeoDataset::sample(SampleId id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) {
        throw std::out_of_range("no sample with id " + std::to_string(id));
    }
    return it->second.role == Role::Database ? database[it->second.offset] : queries[it->second.offset];
}

std::size_t GeoDataset::feature_dim() const {
    if (!database.empty()) {
        return database.front().features.size();
    }
    return queries.empty() ? 0 : queries.front().features.size();
}

CoordMode GeoDataset::mode() const {
    if (!database.empty()) {
        return database.front().position.mode;
    }
    return queries.empty() ? CoordMode::Planar : queries.front().position.mode;
}

std::vector<SampleId> positive_set(const GeoSample& q, const GeoDataset& ds) {
    std::vector<SampleId> ids;
    for (const auto& s : ds.database) {
        if (distance_m(q.position, s.position) <= ds.r_pos) {
            ids.push_back(s.id);
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

std::vector<SampleId> negative_set(const GeoSample& q, const GeoDataset& ds) {
    std::vector<SampleId> ids;
    for (const auto& s : ds.database) {
        if (distance_m(q.position, s.position) > ds.r_neg) {
            ids.push_back(s.id);
        }
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

// ---------------------------------------------------------------------------
// Synthesis

GeoDataset synth_dataset(const SynthConfig& cfg) {
    if (cfg.n_places < 2) {
        throw std::invalid_argument("synth_dataset needs n_places >= 2");
    }
    if (!(cfg.r_pos > 0.0) || !(cfg.r_pos < cfg.r_neg)) {
        throw std::invalid_argument("synth_dataset radii must satisfy 0 < r_pos < r_neg");
    }
    if (!(cfg.spacing_m > 2.0 * cfg.r_neg)) {
        throw std::invalid_argument("spacing_m (" + format_double(cfg.spacing_m) +
                                    ") must exceed 2 * r_neg (" + format_double(2.0 * cfg.r_neg) +
                                    ") so that distinct places are mutual negatives");
    }
    if (!(cfg.query_fraction >= 0.0 && cfg.query_fraction <= 1.0)) {
        throw std::invalid_argument("query_fraction must lie in [0, 1]");
    }
    if (cfg.feature_dim == 0) {
        throw std::invalid_argument("feature_dim must be positive");
    }
    if (!(cfg.view_noise >= 0.0)) {
        throw std::invalid_argument("view_noise must be non-negative");
    }
    const double jitter = 0.4 * cfg.r_pos;
    const double buffer_lo = cfg.r_pos + jitter;
    const double buffer_hi = cfg.r_neg - jitter;
    if (cfg.buffer_per_place > 0 && !(buffer_lo < buffer_hi)) {
        throw std::invalid_argument("buffer-zone samples need r_neg - r_pos > 0.8 * r_pos");
    }

    Rng rng(cfg.seed);
    const auto side = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(cfg.n_places))));
    const double cos_lat0 = std::cos(cfg.origin_lat * kDegToRad);
    const auto to_position = [&](double x, double y) {
        if (cfg.mode == CoordMode::Planar) {
            return Position::planar(x, y);
        }
        const double lat = cfg.origin_lat + y / kEarthRadiusM / kDegToRad;
        const double lon = cfg.origin_lon + x / (kEarthRadiusM * cos_lat0) / kDegToRad;
        return Position::geodetic(lat, lon);
    };

    std::vector<std::vector<double>> latents(cfg.n_places, std::vector<double>(cfg.feature_dim));
    for (auto& latent : latents) {
        for (auto& v : latent) {
            v = rng.normal();
        }
    }
    const auto view = [&](std::size_t place) {
        std::vector<double> f = latents[place];
        for (auto& v : f) {
            v += cfg.view_noise * rng.normal();
        }
        return f;
    };
    const auto center = [&](std::size_t place) {
        return std::pair{static_cast<double>(place % side) * cfg.spacing_m,
                         static_cast<double>(place / side) * cfg.spacing_m};
    };
    const auto scatter = [&](std::size_t place, double r_min, double r_max) {
        const auto [cx, cy] = center(place);
        const double angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
        // Area-uniform radius within the annulus.
        const double u = rng.uniform();
        const double radius = std::sqrt(r_min * r_min + u * (r_max * r_max - r_min * r_min));
        return to_position(cx + radius * std::cos(angle), cy + radius * std::sin(angle));
    };

    GeoDataset ds;
    ds.r_pos = cfg.r_pos;
    ds.r_neg = cfg.r_neg;
    SampleId next_id = 0;
    for (std::size_t place = 0; place < cfg.n_places; ++place) {
        for (std::size_t j = 0; j < cfg.db_per_place; ++j) {
            const Position pos = scatter(place, 0.0, jitter);
            ds.database.push_back({next_id++, Role::Database, pos, view(place)});
        }
        for (std::size_t j = 0; j < cfg.buffer_per_place; ++j) {
            const double mid = 0.5 * (buffer_lo + buffer_hi);
            const Position pos = scatter(place, mid, mid);
            ds.database.push_back({next_id++, Role::Database, pos, view(place)});
        }
    }
    std::vector<std::size_t> places(cfg.n_places);
    std::iota(places.begin(), places.end(), std::size_t{0});
    const auto n_query_places =
        static_cast<std::size_t>(round_half_even(cfg.query_fraction * static_cast<double>(cfg.n_places)));
    auto query_places = rng.sample(places, n_query_places);
    std::sort(query_places.begin(), query_places.end());
    for (auto place : query_places) {
        const Position pos = scatter(place, 0.0, jitter);
        ds.queries.push_back({next_id++, Role::Query, pos, view(place)});
    }
    ds.reindex();
    return ds;
}

// ---------------------------------------------------------------------------
// Persistence

std::filesystem::path metadata_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p.replace_extension(".json");
    return p;
}

void write_dataset(const GeoDataset& ds, const std::filesystem::path& csv_path) {
    ds.validate();
    const std::size_t f = ds.feature_dim();
    {
        std::ofstream out(csv_path, std::ios::binary);
        if (!out) {
            throw std::runtime_error("cannot write " + csv_path.string());
        }
        out << "id,role,lat_or_x,lon_or_y";
        for (std::size_t i = 0; i < f; ++i) {
            out << ",f" << i;
        }
        out << '\n';
        for (const auto* list : {&ds.database, &ds.queries}) {
            for (const auto& s : *list) {
                out << s.id << ',' << (s.role == Role::Query ? "query" : "database") << ','
                    << format_double(s.position.x_or_lat) << ',' << format_double(s.position.y_or_lon);
                for (double v : s.features) {
                    out << ',' << format_double(v);
                }
                out << '\n';
            }
        }
    }
    nlohmann::ordered_json meta;
    meta["mode"] = coord_mode_name(ds.mode());
    meta["r_pos"] = ds.r_pos;
    meta["r_neg"] = ds.r_neg;
    meta["feature_dim"] = f;
    std::ofstream out(metadata_path(csv_path), std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot write " + metadata_path(csv_path).string());
    }
    out << meta.dump(2) << '\n';
}

GeoDataset read_dataset(const std::filesystem::path& csv_path) {
    std::ifstream meta_in(metadata_path(csv_path));
    if (!meta_in) {
        throw std::runtime_error("missing dataset metadata " + metadata_path(csv_path).string());
    }
    const auto meta = nlohmann::json::parse(meta_in);
    const CoordMode mode = parse_coord_mode(meta.at("mode").get<std::string>());
    const auto f = meta.at("feature_dim").get<std::size_t>();

    std::ifstream in(csv_path);
    if (!in) {
        throw std::runtime_error("cannot read dataset " + csv_path.string());
    }
    GeoDataset ds;
    ds.r_pos = meta.at("r_pos").get<double>();
    ds.r_neg = meta.at("r_neg").get<double>();
    std::string line;
    std::getline(in, line);
    if (split_csv(line).size() != 4 + f || !line.starts_with("id,role,lat_or_x,lon_or_y")) {
        throw std::runtime_error("dataset header does not match feature_dim " + std::to_string(f));
    }
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        const auto fields = split_csv(line);
        if (fields.size() != 4 + f) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + " has " +
                                     std::to_string(fields.size()) + " fields, expected " + std::to_string(4 + f));
        }
        GeoSample s;
        SampleId id = 0;
        const auto res = std::from_chars(fields[0].data(), fields[0].data() + fields[0].size(), id);
        if (res.ec != std::errc()) {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + ": bad id");
        }
        s.id = id;
        if (fields[1] == "query") {
            s.role = Role::Query;
        } else if (fields[1] == "database") {
            s.role = Role::Database;
        } else {
            throw std::runtime_error("dataset line " + std::to_string(line_no) + ": unknown role '" +
                                     std::string(fields[1]) + "'");
        }
        s.position = Position{mode, parse_double(fields[2], line_no), parse_double(fields[3], line_no)};
        s.features.reserve(f);
        for (std::size_t i = 0; i < f; ++i) {
            s.features.push_back(parse_double(fields[4 + i], line_no));
        }
        (s.role == Role::Query ? ds.queries : ds.database).push_back(std::move(s));
    }
    ds.validate();
    ds.reindex();
    return ds;
}

} // namespace vgssl::geo

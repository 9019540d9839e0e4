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

#include <cstdint>
#include <filesystem>
#include <span>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace vgssl::geo {

using SampleId = std::int64_t;

/// Mean Earth radius used by the haversine distance.
inline constexpr double kEarthRadiusM = 6'371'000.0;

enum class CoordMode { Planar, Geodetic };

std::string_view coord_mode_name(CoordMode mode);
CoordMode parse_coord_mode(std::string_view name);

/// A location: planar meters (x, y) or geodetic degrees (lat, lon).
struct Position {
    CoordMode mode = CoordMode::Planar;
    double x_or_lat = 0.0;
    double y_or_lon = 0.0;

    static Position planar(double x, double y);
    static Position geodetic(double lat, double lon);
    void validate() const;
    bool operator==(const Position&) const = default;
};

enum class Role { Query, Database };

struct GeoSample {
    SampleId id = 0;
    Role role = Role::Database;
    Position position;
    std::vector<double> features;
};

struct GeoDataset {
    std::vector<GeoSample> queries;
    std::vector<GeoSample> database;
    double r_pos = 10.0;
    double r_neg = 25.0;

    /// Checks radii, unique ids, a shared coordinate mode and a common feature width.
    void validate() const;
    /// Rebuilds the id lookup; call after editing the sample lists.
    void reindex();
    const GeoSample& sample(SampleId id) const;
    bool contains(SampleId id) const { return index_.contains(id); }
    std::size_t feature_dim() const;
    CoordMode mode() const;

  private:
    struct Slot {
        Role role;
        std::size_t offset;
    };
    std::unordered_map<SampleId, Slot> index_;
};

/// Euclidean for planar positions, haversine for geodetic ones.
double distance_m(const Position& a, const Position& b);

/// Database ids within r_pos (inclusive) of the query, ascending.
std::vector<SampleId> positive_set(const GeoSample& q, const GeoDataset& ds);
/// Database ids strictly beyond r_neg from the query, ascending.
std::vector<SampleId> negative_set(const GeoSample& q, const GeoDataset& ds);

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t n_places = 20;
    std::size_t db_per_place = 8;
    double query_fraction = 0.5;
    std::size_t feature_dim = 32;
    double view_noise = 0.5;
    double spacing_m = 100.0;
    double r_pos = 10.0;
    double r_neg = 25.0;
    CoordMode mode = CoordMode::Planar;
    /// Reference point for geodetic datasets.
    double origin_lat = 45.0;
    double origin_lon = 7.0;
    /// Extra database samples per place placed between r_pos and r_neg of every
    /// same-place query (ambiguous ground truth); zero by default.
    std::size_t buffer_per_place = 0;
};

/// Synthetic stand-in for a geo-tagged image collection.
///
/// Places sit on a square grid spacing_m apart. Each place has a latent
/// feature vector; every sample's features are latent + view_noise * N(0, 1).
/// Same-place samples lie within 0.4 * r_pos of the place center, so any two
/// of them are positives of each other and samples of different places are
/// mutual negatives. round(query_fraction * n_places) randomly chosen places
/// also get one query sample. Database ids come first, place-major, then queries.
GeoDataset synth_dataset(const SynthConfig& cfg);

/// Writes `id,role,lat_or_x,lon_or_y,f0..` CSV plus a sibling `.json` metadata record.
void write_dataset(const GeoDataset& ds, const std::filesystem::path& csv_path);
GeoDataset read_dataset(const std::filesystem::path& csv_path);
/// The metadata path paired with a dataset CSV.
std::filesystem::path metadata_path(const std::filesystem::path& csv_path);

} // namespace vgssl::geo

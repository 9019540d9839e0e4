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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vgssl/geodata.hpp"
#include "vgssl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

using namespace vgssl;
using namespace vgssl::geo;

namespace {

GeoSample db(SampleId id, double x, double y = 0.0) { return {id, Role::Database, Position::planar(x, y), {0.0}}; }
GeoSample query(SampleId id, double x, double y = 0.0) { return {id, Role::Query, Position::planar(x, y), {0.0}}; }

GeoDataset line_dataset(std::initializer_list<double> db_x) {
    GeoDataset ds;
    ds.queries.push_back(query(1000, 0.0));
    SampleId id = 0;
    for (double x : db_x) {
        ds.database.push_back(db(id++, x));
    }
    ds.reindex();
    return ds;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

TEST_SUITE("distance_m") {
    TEST_CASE("identical positions are zero apart") {
        CHECK(distance_m(Position::planar(3, -2), Position::planar(3, -2)) == 0.0);
        CHECK(distance_m(Position::geodetic(45.1, 7.6), Position::geodetic(45.1, 7.6)) == 0.0);
    }

    TEST_CASE("one degree of longitude on the equator") {
        // 2 * pi * 6371000 / 360
        CHECK(distance_m(Position::geodetic(0, 0), Position::geodetic(0, 1)) ==
              doctest::Approx(111194.93).epsilon(0.01 / 111194.93));
    }

    TEST_CASE("planar 3-4-5 triangle") {
        CHECK(distance_m(Position::planar(0, 0), Position::planar(3, 4)) == 5.0);
    }

    TEST_CASE("mixed coordinate modes are rejected") {
        CHECK_THROWS_AS(distance_m(Position::planar(0, 0), Position::geodetic(0, 0)), std::invalid_argument);
    }

    TEST_CASE("geodetic ranges are validated") {
        CHECK_THROWS_AS(Position::geodetic(91, 0), std::invalid_argument);
        CHECK_THROWS_AS(Position::geodetic(0, -181), std::invalid_argument);
        CHECK_THROWS_AS(Position::planar(std::nan(""), 0), std::invalid_argument);
    }

    TEST_CASE("symmetry and triangle inequality on random planar triples") {
        Rng rng(4);
        for (int i = 0; i < 500; ++i) {
            const Position a = Position::planar(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3));
            const Position b = Position::planar(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3));
            const Position c = Position::planar(rng.uniform(-1e3, 1e3), rng.uniform(-1e3, 1e3));
            CHECK(distance_m(a, b) == distance_m(b, a));
            CHECK(distance_m(a, c) <= distance_m(a, b) + distance_m(b, c) + 1e-9);
        }
    }

    TEST_CASE("geodetic distance is symmetric") {
        Rng rng(5);
        for (int i = 0; i < 200; ++i) {
            const Position a = Position::geodetic(rng.uniform(-80, 80), rng.uniform(-179, 179));
            const Position b = Position::geodetic(rng.uniform(-80, 80), rng.uniform(-179, 179));
            CHECK(distance_m(a, b) == doctest::Approx(distance_m(b, a)).epsilon(1e-12));
            CHECK(distance_m(a, b) >= 0.0);
        }
    }
}

TEST_SUITE("positive and negative sets") {
    TEST_CASE("radii definitions") {
        const auto ds = line_dataset({5.0, 15.0, 30.0});
        CHECK(positive_set(ds.queries[0], ds) == std::vector<SampleId>{0});
        CHECK(negative_set(ds.queries[0], ds) == std::vector<SampleId>{2});
    }

    TEST_CASE("exactly r_pos is positive, exactly r_neg is not negative") {
        const auto ds = line_dataset({10.0, 25.0});
        CHECK(distance_m(ds.queries[0].position, ds.database[0].position) == 10.0);
        CHECK(positive_set(ds.queries[0], ds) == std::vector<SampleId>{0});
        CHECK(negative_set(ds.queries[0], ds).empty());
    }

    TEST_CASE("empty database and all-close database") {
        const auto empty = line_dataset({});
        CHECK(positive_set(empty.queries[0], empty).empty());
        const auto close = line_dataset({1.0, 2.0, 9.0});
        CHECK(negative_set(close.queries[0], close).empty());
        CHECK(positive_set(close.queries[0], close).size() == 3);
    }

    TEST_CASE("the two sets never intersect") {
        SynthConfig sc;
        sc.buffer_per_place = 2;
        sc.query_fraction = 1.0;
        const auto ds = synth_dataset(sc);
        for (const auto& q : ds.queries) {
            auto pos = positive_set(q, ds);
            auto neg = negative_set(q, ds);
            std::vector<SampleId> both;
            std::set_intersection(pos.begin(), pos.end(), neg.begin(), neg.end(), std::back_inserter(both));
            CHECK(both.empty());
            CHECK(pos.size() + neg.size() < ds.database.size()); // buffer samples are in neither
        }
    }
}

TEST_SUITE("synth_dataset") {
    TEST_CASE("fixed seed gives identical datasets") {
        SynthConfig sc;
        sc.seed = 77;
        const auto a = synth_dataset(sc);
        const auto b = synth_dataset(sc);
        REQUIRE(a.database.size() == b.database.size());
        for (std::size_t i = 0; i < a.database.size(); ++i) {
            CHECK(a.database[i].features == b.database[i].features);
            CHECK(a.database[i].position == b.database[i].position);
        }
        for (std::size_t i = 0; i < a.queries.size(); ++i) {
            CHECK(a.queries[i].id == b.queries[i].id);
        }
    }

    TEST_CASE("sample counts follow the construction") {
        SynthConfig sc;
        sc.n_places = 10;
        sc.db_per_place = 4;
        sc.query_fraction = 0.5;
        const auto ds = synth_dataset(sc);
        CHECK(ds.database.size() == 40);
        CHECK(ds.queries.size() == 5);
        CHECK(ds.feature_dim() == sc.feature_dim);
    }

    TEST_CASE("zero view noise makes same-place features identical") {
        SynthConfig sc;
        sc.view_noise = 0.0;
        sc.db_per_place = 3;
        const auto ds = synth_dataset(sc);
        for (std::size_t place = 0; place < sc.n_places; ++place) {
            for (std::size_t j = 1; j < 3; ++j) {
                CHECK(ds.database[place * 3 + j].features == ds.database[place * 3].features);
            }
        }
        CHECK(ds.database[0].features != ds.database[3].features);
    }

    TEST_CASE("spacing must exceed twice the negative radius") {
        SynthConfig sc;
        sc.spacing_m = 50.0;
        CHECK_THROWS_AS(synth_dataset(sc), std::invalid_argument);
        sc.n_places = 1;
        sc.spacing_m = 100.0;
        CHECK_THROWS_AS(synth_dataset(sc), std::invalid_argument);
    }

    TEST_CASE("same-place samples are positives and other places are negatives") {
        for (auto mode : {CoordMode::Planar, CoordMode::Geodetic}) {
            SynthConfig sc;
            sc.mode = mode;
            sc.n_places = 12;
            sc.db_per_place = 3;
            const auto ds = synth_dataset(sc);
            for (std::size_t i = 0; i < ds.database.size(); ++i) {
                for (std::size_t j = i + 1; j < ds.database.size(); ++j) {
                    const double d = distance_m(ds.database[i].position, ds.database[j].position);
                    if (i / 3 == j / 3) {
                        CHECK(d <= ds.r_pos);
                    } else {
                        CHECK(d > ds.r_neg);
                    }
                }
            }
            for (const auto& q : ds.queries) {
                CHECK(positive_set(q, ds).size() == 3);
                CHECK(negative_set(q, ds).size() == ds.database.size() - 3);
            }
        }
    }
}

TEST_SUITE("persistence") {
    TEST_CASE("round trip preserves every value and rewriting is byte-identical") {
        const auto dir = std::filesystem::temp_directory_path() / "vgssl_test_geodata";
        std::filesystem::create_directories(dir);
        SynthConfig sc;
        sc.mode = CoordMode::Geodetic;
        sc.n_places = 6;
        const auto ds = synth_dataset(sc);
        write_dataset(ds, dir / "a.csv");
        const auto back = read_dataset(dir / "a.csv");
        REQUIRE(back.database.size() == ds.database.size());
        REQUIRE(back.queries.size() == ds.queries.size());
        for (std::size_t i = 0; i < ds.database.size(); ++i) {
            CHECK(back.database[i].features == ds.database[i].features);
            CHECK(back.database[i].position == ds.database[i].position);
        }
        CHECK(back.mode() == CoordMode::Geodetic);
        CHECK(back.r_pos == ds.r_pos);
        write_dataset(back, dir / "b.csv");
        CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
        CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
        CHECK(slurp(dir / "a.csv").starts_with("id,role,lat_or_x,lon_or_y,f0,"));
    }

    TEST_CASE("missing metadata is reported") {
        CHECK_THROWS(read_dataset(std::filesystem::temp_directory_path() / "vgssl_no_such_dataset.csv"));
    }
}

TEST_CASE("dataset validation") {
    GeoDataset ds = line_dataset({5.0});
    ds.r_pos = 30.0;
    CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
    ds = line_dataset({5.0, 6.0});
    ds.database[1].id = 0;
    CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
    ds = line_dataset({5.0});
    ds.database[0].features = {1.0, 2.0};
    CHECK_THROWS_AS(ds.validate(), std::invalid_argument);
}

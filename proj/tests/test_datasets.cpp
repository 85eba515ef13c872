#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "deft/dataset.hpp"
#include "deft/metrics.hpp"

using namespace deft;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

double image_mass(const Tensor<float>& img) {
    double acc = 0;
    for (float v : img.data) acc += v;
    return acc;
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("rendering translates by whole pixels across the position grid") {
    const int res = 16, card = 8;
    auto corner = render_shape(0, 0, 3, 0, 1, 0, card, 0, card, res);
    const int mid = card / 2;
    auto center = render_shape(0, 0, 3, 0, 1, mid, card, mid, card, res);
    const int dx = static_cast<int>(grid_center_px(mid, card, res) - grid_center_px(0, card, res));
    CHECK(dx > 0);

    for (int y = 0; y < res; ++y)
        for (int x = 0; x < res; ++x) {
            const float v = corner.data[static_cast<std::size_t>(y) * res + x];
            if (v == 0.0f) continue;
            REQUIRE(y + dx < res);
            REQUIRE(x + dx < res);
            CHECK(center.data[static_cast<std::size_t>(y + dx) * res + (x + dx)] == v);
        }
}

TEST_CASE("square is invariant under a quarter turn") {
    const int res = 16;
    auto base = render_shape(0, 2, 3, 0, 8, 3, 8, 3, 8, res);
    auto turned = render_shape(0, 2, 3, 2, 8, 3, 8, 3, 8, res);  // index 2 of 8 = pi/2
    CHECK(base.data == turned.data);
}

TEST_CASE("rendered mass strictly increases with scale") {
    for (int shape = 0; shape < 3; ++shape) {
        CAPTURE(shape);
        double prev = -1.0;
        for (int s = 0; s < 6; ++s) {
            auto img = render_shape(shape, s, 6, 0, 1, 4, 8, 4, 8, 32);
            const double mass = image_mass(img);
            CHECK(mass > prev);
            prev = mass;
        }
    }
}

TEST_CASE("render rejects out-of-range factor indices") {
    CHECK_THROWS_AS(render_shape(3, 0, 3, 0, 1, 0, 8, 0, 8, 16), std::invalid_argument);
    CHECK_THROWS_AS(render_shape(0, 3, 3, 0, 1, 0, 8, 0, 8, 16), std::invalid_argument);
    CHECK_THROWS_AS(render_shape(0, 0, 3, 0, 1, 8, 8, 0, 8, 16), std::invalid_argument);
}

TEST_CASE("grid dataset has mixed-radix labels and uniform marginals") {
    SUBCASE("single factor of cardinality 3") {
        FactorSchema schema;
        schema.factors = {{"scale", 3, {}}};
        auto ds = generate_grid_dataset(schema, 16);
        CHECK(ds.n() == 3);
    }
    SUBCASE("desk schema") {
        FactorSchema schema;
        schema.factors = {{"shape", 3, {}}, {"scale", 3, {}}, {"orientation", 8, {}},
                          {"posX", 8, {}},  {"posY", 8, {}}};
        auto ds = generate_grid_dataset(schema, 16);
        CHECK(ds.n() == 4608);

        // first factor most significant
        CHECK(ds.label(0, 0) == 0);
        CHECK(ds.label(4608 - 1, 0) == 2);
        const int stride_posy = 1, stride_posx = 8, stride_orient = 64;
        CHECK(ds.label(stride_posy, 4) == 1);
        CHECK(ds.label(stride_posx, 3) == 1);
        CHECK(ds.label(stride_orient, 2) == 1);

        for (int f = 0; f < ds.schema.num_factors(); ++f) {
            std::map<int, int> counts;
            for (int i = 0; i < ds.n(); ++i) ++counts[ds.label(i, f)];
            const int card = ds.schema.factors[static_cast<std::size_t>(f)].cardinality;
            CHECK(static_cast<int>(counts.size()) == card);
            for (const auto& [v, c] : counts) CHECK(c == ds.n() / card);
        }
    }
    SUBCASE("oversized grids are rejected") {
        FactorSchema schema;
        schema.factors = {{"posX", 8, {}}, {"posY", 8, {}}, {"orientation", 8, {}},
                          {"scale", 6, {}}, {"shape", 3, {}}};
        CHECK_THROWS_AS(generate_grid_dataset(schema, 256), std::invalid_argument);
    }
}

TEST_CASE("angle quantization covers (-pi, pi] with axis cases in the right bins") {
    // atan2 argument order: y first
    CHECK(std::atan2(-16.0, 0.0) == doctest::Approx(-M_PI / 2));
    CHECK(std::atan2(0.0, -16.0) == doctest::Approx(M_PI));
    CHECK(quantize_angle(-M_PI / 2, 8) == 1);  // (-3pi/4, -pi/2]
    CHECK(quantize_angle(M_PI, 8) == 7);
    CHECK(quantize_angle(-M_PI + 1e-9, 8) == 0);
    for (int b = 0; b < 8; ++b) CHECK(quantize_angle(bin_center_angle(b, 8), 8) == b);
}

TEST_CASE("triangle dataset: positions independent, orientation fully determined") {
    auto ds = generate_triangle_correlated(16, 8);
    CHECK(ds.n() == 64);
    CHECK(ds.schema.num_factors() == 3);
    CHECK(ds.schema.factors[2].name == "orientation");

    const auto posx = ds.label_column(0);
    const auto posy = ds.label_column(1);
    const auto orient = ds.label_column(2);
    CHECK(discrete_mutual_information(posx, posy) == 0.0);
    const double h_orient = entropy(orient);
    const double mi = discrete_mutual_information(orient, combine_labels(posx, posy));
    CHECK(std::fabs(mi - h_orient) <= 1e-12);
    CHECK(h_orient > 0.0);

    // every triangle stays clear of the exact canvas center
    for (int i = 0; i < ds.n(); ++i) {
        const double cx = grid_center_px(ds.label(i, 0), 8, 16) + 0.5;
        const double cy = grid_center_px(ds.label(i, 1), 8, 16) + 0.5;
        CHECK((cx != 8.0 || cy != 8.0));
    }
}

TEST_CASE("fixed factor batch sweeps exactly one factor") {
    FactorSchema schema;
    schema.factors = {{"scale", 6, {}}, {"posX", 4, {}}, {"posY", 4, {}}};
    auto ds = generate_grid_dataset(schema, 16);
    Rng rng(23);

    auto batch = fixed_factor_batch(ds, 0, rng);
    CHECK(batch.n() == 6);
    for (int i = 0; i < batch.n(); ++i) {
        CHECK(batch.label(i, 0) == i);
        CHECK(batch.label(i, 1) == batch.label(0, 1));
        CHECK(batch.label(i, 2) == batch.label(0, 2));
    }

    // base tuples vary across draws and swept values stay balanced
    std::set<std::pair<int, int>> bases;
    std::map<int, int> value_counts;
    for (int d = 0; d < 1000; ++d) {
        auto b = fixed_factor_batch(ds, 0, rng);
        bases.insert({b.label(0, 1), b.label(0, 2)});
        for (int i = 0; i < b.n(); ++i) ++value_counts[b.label(i, 0)];
    }
    CHECK(bases.size() > 8);
    for (const auto& [v, c] : value_counts) CHECK(c == 1000);

    CHECK_THROWS_AS(fixed_factor_batch(ds, 5, rng), std::invalid_argument);
}

TEST_CASE("dataset files round-trip bit-exactly and reject corruption") {
    FactorSchema schema;
    schema.factors = {{"shape", 3, {"square", "ellipse", "triangle"}}, {"posX", 4, {}}, {"posY", 4, {}}};
    auto ds = generate_grid_dataset(schema, 16);
    const std::string path = temp_path("deft_ds_test.deftdata");
    save_dataset(ds, path);
    auto loaded = load_dataset(path);
    CHECK(loaded.images.shape == ds.images.shape);
    CHECK(loaded.images.data == ds.images.data);
    CHECK(loaded.labels == ds.labels);
    CHECK(loaded.schema.num_factors() == 3);

    SUBCASE("regenerating produces identical bytes") {
        const std::string path2 = temp_path("deft_ds_test2.deftdata");
        save_dataset(generate_grid_dataset(schema, 16), path2);
        CHECK(file_bytes(path) == file_bytes(path2));
        std::remove(path2.c_str());
    }
    SUBCASE("truncation and bad magic fail loudly") {
        const std::string bytes = file_bytes(path);
        const std::string bad = temp_path("deft_ds_bad.deftdata");
        {
            std::ofstream out(bad, std::ios::binary);
            out << bytes.substr(0, bytes.size() - 100);
        }
        CHECK_THROWS_WITH_AS(load_dataset(bad), doctest::Contains("truncated"), std::runtime_error);
        {
            std::ofstream out(bad, std::ios::binary);
            out << "WRONGMAG" << bytes.substr(8);
        }
        CHECK_THROWS_WITH_AS(load_dataset(bad), doctest::Contains("magic"), std::runtime_error);
        std::remove(bad.c_str());
    }
    std::remove(path.c_str());
}

TEST_CASE("rendering is a pure function of the factor tuple") {
    auto a = render_shape(2, 1, 3, 5, 8, 2, 8, 6, 8, 32);
    auto b = render_shape(2, 1, 3, 5, 8, 2, 8, 6, 8, 32);
    CHECK(a.data == b.data);
    for (float v : a.data) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    CHECK(image_mass(a) > 0.0);
}

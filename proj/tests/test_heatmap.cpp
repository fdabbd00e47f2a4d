#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "htk/heatmap.hpp"

using namespace htk;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() : path("t_heatmap") {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

}  // namespace

TEST_CASE("normalization semantics") {
    Heatmap m(2, 2);
    m.v = {1.0, 3.0, 0.0, 4.0};

    Heatmap s = normalize_sum(m);
    CHECK(heatmap_sum(s) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(s.v[1] == doctest::Approx(0.375).epsilon(1e-12));

    Heatmap x = normalize_max(m);
    CHECK(heatmap_max(x) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(x.v[0] == doctest::Approx(0.25).epsilon(1e-12));

    // no mass: sum normalization falls back to uniform
    Heatmap z(2, 3);
    Heatmap u = normalize_sum(z);
    for (double v : u.v) CHECK(v == doctest::Approx(1.0 / 6.0).epsilon(1e-12));
    Heatmap zm = normalize_max(z);
    for (double v : zm.v) CHECK(v == 0.0);
}

TEST_CASE("gaussian heatmap peaks at the center and is symmetric") {
    Heatmap g = gaussian_heatmap(9, 9, 4.0, 4.0, 1.5);
    auto [py, px] = std::pair<int, int>{4, 4};
    for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 9; ++x) CHECK(g.at(y, x) <= g.at(py, px) + 1e-15);
    CHECK(g.at(2, 4) == doctest::Approx(g.at(6, 4)).epsilon(1e-12));
    CHECK(g.at(4, 1) == doctest::Approx(g.at(4, 7)).epsilon(1e-12));
    // ratio between center and a 1-pixel offset matches exp(-1/(2*sigma^2))
    CHECK(g.at(4, 5) / g.at(4, 4) == doctest::Approx(std::exp(-1.0 / (2.0 * 1.5 * 1.5))).epsilon(1e-12));
}

TEST_CASE("gaussian blur preserves mass and spreads peaks") {
    Heatmap m(11, 11);
    m.at(5, 5) = 1.0;
    Heatmap b = gaussian_blur(m, 1.0);
    CHECK(heatmap_sum(b) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(b.at(5, 5) < 1.0);
    CHECK(b.at(5, 6) > 0.0);
    CHECK(b.at(5, 4) == doctest::Approx(b.at(5, 6)).epsilon(1e-12));
}

TEST_CASE("pgm header bytes and round trip") {
    TempDir td;
    Heatmap m(2, 3);
    m.v = {0.0, 0.5, 1.0, 0.25, 0.75, 1.0};
    save_pgm(td.path / "m.pgm", m);

    std::ifstream in(td.path / "m.pgm", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string header = "P5\n3 2\n255\n";
    REQUIRE(bytes.size() == header.size() + 6);
    CHECK(bytes.substr(0, header.size()) == header);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 0]) == 0);
    CHECK(static_cast<unsigned char>(bytes[header.size() + 1]) == 128);  // lround(0.5 * 255)
    CHECK(static_cast<unsigned char>(bytes[header.size() + 2]) == 255);

    Heatmap r = load_pgm(td.path / "m.pgm");
    CHECK(r.h == 2);
    CHECK(r.w == 3);
    CHECK(r.at(0, 2) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.at(0, 1) == doctest::Approx(128.0 / 255.0).epsilon(1e-12));

    // out-of-range values clamp instead of wrapping
    Heatmap c(1, 2);
    c.v = {-0.5, 2.0};
    save_pgm(td.path / "c.pgm", c);
    Heatmap rc = load_pgm(td.path / "c.pgm");
    CHECK(rc.at(0, 0) == 0.0);
    CHECK(rc.at(0, 1) == 1.0);
}

#include <cosp/error.hpp>
#include <cosp/raster_io.hpp>

#include <doctest.h>
#include <tiffio.h>

#include <cstring>
#include <filesystem>
#include <fstream>

using namespace cosp;
namespace fs = std::filesystem;

namespace
{

fs::path temp_dir()
{
    const fs::path d = fs::temp_directory_path() / "cosp_test_raster";
    fs::create_directories(d);
    return d;
}

RasterGrid sample_grid()
{
    RasterGrid g(5, 3, 0.0f, GeoTransform::north_up(280000.0, 4941000.0, 10.0));
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 5; ++c)
            g.at(c, r) = static_cast<float>(10 * r + c) + 0.25f;
    g.set_nodata(4, 2);
    g.set_crs("EPSG:32647");
    return g;
}

} // namespace

TEST_CASE("raster rejects zero pixel size")
{
    CHECK_THROWS_AS(RasterGrid(2, 2, 0.0f, GeoTransform{{0, 0, 0, 0, 0, 1}}), Error);
}

TEST_CASE("bilinear sampling uses pixel-center convention")
{
    const RasterGrid g = sample_grid();
    CHECK(*g.sample(0.5, 0.5) == doctest::Approx(0.25));
    CHECK(*g.sample(1.0, 0.5) == doctest::Approx(0.75));
    CHECK(*g.sample(1.0, 1.0) == doctest::Approx(5.75));
    CHECK(*g.sample(0.1, 0.1) == doctest::Approx(0.25)); // clamped inside the edge pixel
    CHECK_FALSE(g.sample(-0.1, 1.0).has_value());
    CHECK_FALSE(g.sample(4.0, 2.0).has_value()); // touches the nodata pixel
    const Eigen::Vector2d c = g.cell_center(1, 1);
    CHECK(*g.sample_map(c.x(), c.y()) == doctest::Approx(11.25));
}

TEST_CASE("computed values never collide with nodata")
{
    RasterGrid g(1, 1, 0.0f);
    g.put(0, 0, kDefaultNodata);
    CHECK(g.valid(0, 0));
    CHECK(g.at(0, 0) != g.nodata());
}

TEST_CASE("flat raster round trip with sidecar")
{
    const RasterGrid g = sample_grid();
    const fs::path p = temp_dir() / "grid.bin";
    write_raster(p, g);
    CHECK(fs::exists(sidecar_path(p)));
    CHECK(fs::file_size(p) == 5 * 3 * 4);
    const RasterGrid back = read_raster(p);
    CHECK(same_grid(g, back));
    CHECK(back.crs() == "EPSG:32647");
    CHECK(back.nodata() == g.nodata());
    CHECK(std::memcmp(back.values().data(), g.values().data(), 15 * sizeof(float)) == 0);

    // little-endian row-major from the top-left
    std::ifstream raw(p, std::ios::binary);
    unsigned char bytes[4];
    raw.read(reinterpret_cast<char *>(bytes), 4);
    float first;
    const uint32_t bits = bytes[0] | (bytes[1] << 8) | (bytes[2] << 16) | (static_cast<uint32_t>(bytes[3]) << 24);
    std::memcpy(&first, &bits, 4);
    CHECK(first == 0.25f);
}

TEST_CASE("geotiff round trip keeps georeferencing and nodata")
{
    const RasterGrid g = sample_grid();
    const fs::path p = temp_dir() / "grid.tif";
    write_raster(p, g);
    const RasterGrid back = read_raster(p);
    CHECK(same_grid(g, back));
    CHECK(back.crs() == "EPSG:32647");
    CHECK(back.nodata() == g.nodata());
    CHECK_FALSE(back.valid(4, 2));
    CHECK(back.at(3, 1) == g.at(3, 1));

    RasterGrid rotated(2, 2, 1.0f, GeoTransform{{100.0, 1.0, 0.2, 50.0, 0.1, -1.0}});
    write_raster(p, rotated);
    CHECK(read_raster(p).geotransform() == rotated.geotransform());
}

TEST_CASE("8 and 16 bit scan tiffs are read as floats")
{
    for (int bits : {8, 16})
    {
        const fs::path p = temp_dir() / ("scan" + std::to_string(bits) + ".tif");
        {
            TIFF *t = TIFFOpen(p.c_str(), "w");
            REQUIRE(t);
            TIFFSetField(t, TIFFTAG_IMAGEWIDTH, 3u);
            TIFFSetField(t, TIFFTAG_IMAGELENGTH, 2u);
            TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, 1);
            TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, bits);
            TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
            TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
            for (uint32_t r = 0; r < 2; ++r)
            {
                if (bits == 8)
                {
                    uint8_t row[3] = {static_cast<uint8_t>(r), 100, 255};
                    TIFFWriteScanline(t, row, r, 0);
                }
                else
                {
                    uint16_t row[3] = {static_cast<uint16_t>(r), 1000, 65535};
                    TIFFWriteScanline(t, row, r, 0);
                }
            }
            TIFFClose(t);
        }
        const RasterGrid g = read_raster(p);
        CHECK(g.width() == 3);
        CHECK(g.at(0, 1) == 1.0f);
        CHECK(g.at(2, 0) == (bits == 8 ? 255.0f : 65535.0f));
    }
}

TEST_CASE("missing sidecar is reported as missing input")
{
    try
    {
        read_raster(temp_dir() / "does_not_exist.bin");
        FAIL("expected an error");
    }
    catch (const Error &e)
    {
        CHECK(e.code() == ErrorCode::MissingInput);
    }
}

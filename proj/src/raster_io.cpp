#include <cosp/error.hpp>
#include <cosp/raster_io.hpp>

#include <json.hpp>
#include <tiffio.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <mutex>

namespace cosp
{

namespace fs = std::filesystem;

namespace
{

constexpr ttag_t kTagModelPixelScale = 33550;
constexpr ttag_t kTagModelTiepoint = 33922;
constexpr ttag_t kTagModelTransformation = 34264;
constexpr ttag_t kTagGeoKeyDirectory = 34735;
constexpr ttag_t kTagGdalNodata = 42113;

const TIFFFieldInfo kGeoFields[] = {
    {kTagModelPixelScale, -1, -1, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1, const_cast<char *>("ModelPixelScaleTag")},
    {kTagModelTiepoint, -1, -1, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1, const_cast<char *>("ModelTiepointTag")},
    {kTagModelTransformation, -1, -1, TIFF_DOUBLE, FIELD_CUSTOM, 1, 1, const_cast<char *>("ModelTransformationTag")},
    {kTagGeoKeyDirectory, -1, -1, TIFF_SHORT, FIELD_CUSTOM, 1, 1, const_cast<char *>("GeoKeyDirectoryTag")},
    {kTagGdalNodata, -1, -1, TIFF_ASCII, FIELD_CUSTOM, 1, 0, const_cast<char *>("GDALNoDataTag")},
};

TIFFExtendProc g_parent_extender = nullptr;

void geo_tag_extender(TIFF *tif)
{
    TIFFMergeFieldInfo(tif, kGeoFields, sizeof(kGeoFields) / sizeof(kGeoFields[0]));
    if (g_parent_extender)
        g_parent_extender(tif);
}

void register_geo_tags()
{
    static std::once_flag once;
    std::call_once(once, [] { g_parent_extender = TIFFSetTagExtender(geo_tag_extender); });
}

struct TiffCloser
{
    void operator()(TIFF *t) const { TIFFClose(t); }
};
using TiffPtr = std::unique_ptr<TIFF, TiffCloser>;

int epsg_code(const std::string &crs)
{
    if (crs.rfind("EPSG:", 0) == 0)
    {
        try
        {
            return std::stoi(crs.substr(5));
        }
        catch (...)
        {
        }
    }
    return 0;
}

template <typename T>
void convert_row(const unsigned char *src, float *dst, int n)
{
    for (int i = 0; i < n; ++i)
    {
        T v;
        std::memcpy(&v, src + sizeof(T) * i, sizeof(T));
        dst[i] = static_cast<float>(v);
    }
}

} // namespace

fs::path sidecar_path(const fs::path &data_path)
{
    fs::path p = data_path;
    p.replace_extension(".json");
    return p;
}

RasterGrid read_raster(const fs::path &path)
{
    const std::string ext = path.extension().string();
    if (ext == ".tif" || ext == ".tiff" || ext == ".TIF" || ext == ".TIFF")
        return read_geotiff(path);
    return read_flat_raster(path);
}

void write_raster(const fs::path &path, const RasterGrid &grid)
{
    const std::string ext = path.extension().string();
    if (ext == ".tif" || ext == ".tiff")
        write_geotiff(path, grid);
    else
        write_flat_raster(path, grid);
}

void write_flat_raster(const fs::path &path, const RasterGrid &grid)
{
    static_assert(std::endian::native == std::endian::little, "flat raster writer assumes a little-endian host");
    std::ofstream out(path, std::ios::binary);
    if (!out)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out.write(reinterpret_cast<const char *>(grid.values().data()), static_cast<std::streamsize>(grid.values().size() * sizeof(float)));

    nlohmann::ordered_json meta;
    meta["width"] = grid.width();
    meta["height"] = grid.height();
    meta["geotransform"] = grid.geotransform().c;
    meta["nodata"] = grid.nodata();
    meta["crs"] = grid.crs();
    std::ofstream side(sidecar_path(path));
    if (!side)
        throw Error(ErrorCode::IoError, "cannot write sidecar for " + path.string());
    side << meta.dump(2) << "\n";
}

RasterGrid read_flat_raster(const fs::path &path)
{
    std::ifstream side(sidecar_path(path));
    if (!side)
        throw Error(ErrorCode::MissingInput, "missing raster sidecar " + sidecar_path(path).string());
    nlohmann::json meta;
    try
    {
        side >> meta;
    }
    catch (const std::exception &e)
    {
        throw Error(ErrorCode::IoError, "bad raster sidecar: " + std::string(e.what()));
    }
    GeoTransform gt;
    gt.c = meta.at("geotransform").get<std::array<double, 6>>();
    RasterGrid grid(meta.at("width").get<int>(), meta.at("height").get<int>(), 0.0f, gt, meta.at("nodata").get<float>());
    grid.set_crs(meta.value("crs", std::string{}));

    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::MissingInput, "cannot read " + path.string());
    auto values = grid.values();
    in.read(reinterpret_cast<char *>(values.data()), static_cast<std::streamsize>(values.size() * sizeof(float)));
    if (in.gcount() != static_cast<std::streamsize>(values.size() * sizeof(float)))
        throw Error(ErrorCode::IoError, "truncated raster " + path.string());
    return grid;
}

void write_geotiff(const fs::path &path, const RasterGrid &grid)
{
    register_geo_tags();
    TiffPtr tif(TIFFOpen(path.c_str(), "w"));
    if (!tif)
        throw Error(ErrorCode::IoError, "cannot write " + path.string());
    TIFF *t = tif.get();
    TIFFSetField(t, TIFFTAG_IMAGEWIDTH, static_cast<uint32_t>(grid.width()));
    TIFFSetField(t, TIFFTAG_IMAGELENGTH, static_cast<uint32_t>(grid.height()));
    TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, 1);
    TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, 32);
    TIFFSetField(t, TIFFTAG_SAMPLEFORMAT, SAMPLEFORMAT_IEEEFP);
    TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_MINISBLACK);
    TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
    TIFFSetField(t, TIFFTAG_COMPRESSION, COMPRESSION_NONE);
    TIFFSetField(t, TIFFTAG_ROWSPERSTRIP, TIFFDefaultStripSize(t, 0));

    const auto &c = grid.geotransform().c;
    if (c[2] == 0.0 && c[4] == 0.0)
    {
        double scale[3] = {c[1], -c[5], 0.0};
        double tie[6] = {0.0, 0.0, 0.0, c[0], c[3], 0.0};
        TIFFSetField(t, kTagModelPixelScale, 3, scale);
        TIFFSetField(t, kTagModelTiepoint, 6, tie);
    }
    else
    {
        double m[16] = {c[1], c[2], 0, c[0], c[4], c[5], 0, c[3], 0, 0, 0, 0, 0, 0, 0, 1};
        TIFFSetField(t, kTagModelTransformation, 16, m);
    }
    const int code = epsg_code(grid.crs());
    std::vector<uint16_t> keys = {1, 1, 0, 0};
    auto add_key = [&](uint16_t id, uint16_t value) {
        keys.insert(keys.end(), {id, 0, 1, value});
        keys[3]++;
    };
    add_key(1024, code == 4326 ? 2 : 1); // GTModelTypeGeoKey
    add_key(1025, 1);                    // GTRasterTypeGeoKey: PixelIsArea
    if (code > 0)
        add_key(code == 4326 ? 2048 : 3072, static_cast<uint16_t>(code));
    TIFFSetField(t, kTagGeoKeyDirectory, static_cast<uint32_t>(keys.size()), keys.data());
    const std::string nodata = std::to_string(grid.nodata());
    TIFFSetField(t, kTagGdalNodata, nodata.c_str());

    std::vector<float> row(static_cast<size_t>(grid.width()));
    for (int r = 0; r < grid.height(); ++r)
    {
        for (int col = 0; col < grid.width(); ++col)
            row[static_cast<size_t>(col)] = grid.at(col, r);
        if (TIFFWriteScanline(t, row.data(), static_cast<uint32_t>(r), 0) < 0)
            throw Error(ErrorCode::IoError, "failed writing " + path.string());
    }
}

RasterGrid read_geotiff(const fs::path &path)
{
    register_geo_tags();
    TiffPtr tif(TIFFOpen(path.c_str(), "r"));
    if (!tif)
        throw Error(ErrorCode::MissingInput, "cannot open " + path.string());
    TIFF *t = tif.get();
    uint32_t w = 0, h = 0;
    uint16_t bps = 8, spp = 1, fmt = SAMPLEFORMAT_UINT;
    TIFFGetField(t, TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(t, TIFFTAG_IMAGELENGTH, &h);
    TIFFGetFieldDefaulted(t, TIFFTAG_BITSPERSAMPLE, &bps);
    TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLESPERPIXEL, &spp);
    TIFFGetFieldDefaulted(t, TIFFTAG_SAMPLEFORMAT, &fmt);
    if (spp != 1)
        throw Error(ErrorCode::IoError, path.string() + ": only single-band rasters are supported");
    const bool is_float = fmt == SAMPLEFORMAT_IEEEFP && bps == 32;
    const bool is_u8 = fmt == SAMPLEFORMAT_UINT && bps == 8;
    const bool is_u16 = fmt == SAMPLEFORMAT_UINT && bps == 16;
    if (!is_float && !is_u8 && !is_u16)
        throw Error(ErrorCode::IoError, path.string() + ": unsupported sample format");

    GeoTransform gt;
    uint32_t count = 0;
    double *data = nullptr;
    if (TIFFGetField(t, kTagModelTransformation, &count, &data) && count >= 16)
        gt.c = {data[3], data[0], data[1], data[7], data[4], data[5]};
    else
    {
        double *scale = nullptr, *tie = nullptr;
        uint32_t ns = 0, nt = 0;
        if (TIFFGetField(t, kTagModelPixelScale, &ns, &scale) && TIFFGetField(t, kTagModelTiepoint, &nt, &tie) && ns >= 2 && nt >= 6)
            gt.c = {tie[3] - tie[0] * scale[0], scale[0], 0.0, tie[4] + tie[1] * scale[1], 0.0, -scale[1]};
    }
    float nodata = kDefaultNodata;
    char *nd = nullptr;
    if (TIFFGetField(t, kTagGdalNodata, &nd) && nd)
        nodata = std::stof(nd);

    RasterGrid grid(static_cast<int>(w), static_cast<int>(h), 0.0f, gt, nodata);
    uint16_t *keys = nullptr;
    if (TIFFGetField(t, kTagGeoKeyDirectory, &count, &keys) && count >= 4)
    {
        for (uint32_t k = 4; k + 3 < count; k += 4)
            if ((keys[k] == 3072 || keys[k] == 2048) && keys[k + 1] == 0)
                grid.set_crs("EPSG:" + std::to_string(keys[k + 3]));
    }

    const int bytes = bps / 8;
    auto convert = [&](const unsigned char *src, float *dst, int n) {
        if (is_float)
            convert_row<float>(src, dst, n);
        else if (is_u16)
            convert_row<uint16_t>(src, dst, n);
        else
            convert_row<uint8_t>(src, dst, n);
    };

    auto values = grid.values();
    if (TIFFIsTiled(t))
    {
        uint32_t tw = 0, th = 0;
        TIFFGetField(t, TIFFTAG_TILEWIDTH, &tw);
        TIFFGetField(t, TIFFTAG_TILELENGTH, &th);
        std::vector<unsigned char> buf(TIFFTileSize(t));
        for (uint32_t ty = 0; ty < h; ty += th)
            for (uint32_t tx = 0; tx < w; tx += tw)
            {
                if (TIFFReadTile(t, buf.data(), tx, ty, 0, 0) < 0)
                    throw Error(ErrorCode::IoError, "failed reading tile of " + path.string());
                for (uint32_t r = 0; r < th && ty + r < h; ++r)
                {
                    const int n = static_cast<int>(std::min(tw, w - tx));
                    convert(buf.data() + static_cast<size_t>(r) * tw * bytes, values.data() + static_cast<size_t>(ty + r) * w + tx, n);
                }
            }
    }
    else
    {
        std::vector<unsigned char> buf(TIFFScanlineSize(t));
        for (uint32_t r = 0; r < h; ++r)
        {
            if (TIFFReadScanline(t, buf.data(), r, 0) < 0)
                throw Error(ErrorCode::IoError, "failed reading " + path.string());
            convert(buf.data(), values.data() + static_cast<size_t>(r) * w, static_cast<int>(w));
        }
    }
    return grid;
}

} // namespace cosp

#pragma once

#include <cosp/raster.hpp>

#include <filesystem>

namespace cosp
{

/// Reads a GeoTIFF (8/16-bit unsigned or 32-bit float, single band) or a flat float32 grid with a
/// JSON sidecar, chosen by extension (.tif/.tiff vs anything else).
RasterGrid read_raster(const std::filesystem::path &path);

/// Writes float32 GeoTIFF for .tif/.tiff, otherwise little-endian row-major float32 plus a
/// `<stem>.json` sidecar {width, height, geotransform[6], nodata, crs}.
void write_raster(const std::filesystem::path &path, const RasterGrid &grid);

RasterGrid read_flat_raster(const std::filesystem::path &path);
void write_flat_raster(const std::filesystem::path &path, const RasterGrid &grid);
RasterGrid read_geotiff(const std::filesystem::path &path);
void write_geotiff(const std::filesystem::path &path, const RasterGrid &grid);

std::filesystem::path sidecar_path(const std::filesystem::path &data_path);

} // namespace cosp

#pragma once

#include <iosfwd>
#include <string>

#include "panoctx/geom.hpp"

namespace panoctx {

// "EDEP" depth raster: magic, width u32 LE, height u32 LE, then
// width*height f32 LE meters, row-major, top row first.
void write_edep(const EquirectRaster& depth, std::ostream& os);
void write_edep(const EquirectRaster& depth, const std::string& path);
EquirectRaster read_edep(std::istream& is);
EquirectRaster read_edep(const std::string& path);

// Binary PPM (P6), values scaled to [0, 255].
void write_ppm(const EquirectRaster& rgb, const std::string& path);
EquirectRaster read_ppm(const std::string& path);

}  // namespace panoctx

#pragma once

#include <string>
#include <vector>

namespace fogdet {

// RGB raster, row-major, intensities in [0,1]. data holds height*width*3
// doubles in R,G,B channel order.
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    double& at(int y, int x, int ch) { return data[(static_cast<size_t>(y) * width + x) * 3 + ch]; }
    double at(int y, int x, int ch) const { return data[(static_cast<size_t>(y) * width + x) * 3 + ch]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Single-channel raster of nonnegative finite relative depths, row-major,
// stored top-to-bottom regardless of the on-disk row order.
struct DepthMap {
    int width = 0;
    int height = 0;
    std::vector<double> data;

    double& at(int y, int x) { return data[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return data[static_cast<size_t>(y) * width + x]; }
    size_t pixel_count() const { return static_cast<size_t>(width) * height; }
};

// Binary PPM (P6, maxval 255). Samples map to intensity via v/255.
// Writer emits exactly "P6\n<w> <h>\n255\n" + w*h*3 bytes, one byte per
// sample, round-half-up.
Image load_ppm(const std::string& path);
void save_ppm(const std::string& path, const Image& img);

// Grayscale PFM ("Pf"). Negative scale means little-endian payload, rows
// stored bottom-to-top. Color "PF" files are rejected. Writer emits
// "Pf\n<w> <h>\n-1.0\n" + w*h little-endian f32, rows bottom-to-top.
DepthMap load_pfm(const std::string& path);
void save_pfm(const std::string& path, const DepthMap& d);

// In-memory codecs behind the file API; exposed for byte-level tests.
Image decode_ppm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_ppm(const Image& img);
DepthMap decode_pfm(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_pfm(const DepthMap& d);

std::vector<unsigned char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes);

} // namespace fogdet

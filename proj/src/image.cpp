#include "fogdet/image.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "fogdet/error.hpp"

namespace fogdet {

const char* errc_name(errc c) {
    switch (c) {
        case errc::malformed_header: return "MalformedHeader";
        case errc::unsupported_maxval: return "UnsupportedMaxval";
        case errc::truncated_data: return "TruncatedData";
        case errc::io_failure: return "IoFailure";
        case errc::invalid_depth: return "InvalidDepth";
        case errc::dimension_mismatch: return "DimensionMismatch";
        case errc::transmission_underflow: return "TransmissionUnderflow";
        case errc::malformed_xml: return "MalformedXml";
        case errc::unknown_class: return "UnknownClass";
        case errc::degenerate_box: return "DegenerateBox";
        case errc::class_list_mismatch: return "ClassListMismatch";
        case errc::shape_mismatch: return "ShapeMismatch";
        case errc::architecture_mismatch: return "ArchitectureMismatch";
        case errc::missing_trace: return "MissingTrace";
        case errc::missing_depth: return "MissingDepth";
        case errc::divergence: return "Divergence";
        case errc::unknown_image_id: return "UnknownImageId";
        case errc::bad_config: return "BadConfig";
        case errc::invalid_param: return "InvalidParam";
    }
    return "UnknownError";
}

std::vector<unsigned char> read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw error(errc::io_failure, "cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw error(errc::io_failure, "read failed on " + path);
    return bytes;
}

void write_file_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw error(errc::io_failure, "cannot open " + path + " for writing");
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw error(errc::io_failure, "write failed on " + path);
}

namespace {

// PNM header tokenizer: skips whitespace and '#' comments.
struct ByteCursor {
    const std::vector<unsigned char>& b;
    size_t pos = 0;

    bool eof() const { return pos >= b.size(); }

    void skip_space_and_comments() {
        while (!eof()) {
            unsigned char c = b[pos];
            if (c == '#') {
                while (!eof() && b[pos] != '\n') ++pos;
            } else if (std::isspace(c)) {
                ++pos;
            } else {
                break;
            }
        }
    }

    std::string token() {
        skip_space_and_comments();
        std::string t;
        while (!eof() && !std::isspace(b[pos])) t.push_back(static_cast<char>(b[pos++]));
        return t;
    }
};

int parse_dim(const std::string& t) {
    if (t.empty() || t.size() > 9) throw error(errc::malformed_header, "bad dimension token '" + t + "'");
    long v = 0;
    for (char c : t) {
        if (c < '0' || c > '9') throw error(errc::malformed_header, "bad dimension token '" + t + "'");
        v = v * 10 + (c - '0');
    }
    if (v < 1) throw error(errc::malformed_header, "dimension must be >= 1");
    return static_cast<int>(v);
}

float f32_from_le(const unsigned char* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                      (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    return std::bit_cast<float>(u);
}

float f32_from_be(const unsigned char* p) {
    std::uint32_t u = static_cast<std::uint32_t>(p[3]) | (static_cast<std::uint32_t>(p[2]) << 8) |
                      (static_cast<std::uint32_t>(p[1]) << 16) | (static_cast<std::uint32_t>(p[0]) << 24);
    return std::bit_cast<float>(u);
}

void f32_to_le(float v, unsigned char* p) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(v);
    p[0] = static_cast<unsigned char>(u & 0xFF);
    p[1] = static_cast<unsigned char>((u >> 8) & 0xFF);
    p[2] = static_cast<unsigned char>((u >> 16) & 0xFF);
    p[3] = static_cast<unsigned char>((u >> 24) & 0xFF);
}

} // namespace

Image decode_ppm(const std::vector<unsigned char>& bytes) {
    ByteCursor cur{bytes};
    if (cur.token() != "P6") throw error(errc::malformed_header, "magic is not P6");
    int w = parse_dim(cur.token());
    int h = parse_dim(cur.token());
    std::string maxval = cur.token();
    if (maxval.empty()) throw error(errc::malformed_header, "missing maxval");
    if (maxval != "255") throw error(errc::unsupported_maxval, "maxval " + maxval + " (only 255 supported)");
    if (cur.eof() || !std::isspace(bytes[cur.pos]))
        throw error(errc::malformed_header, "missing separator after maxval");
    ++cur.pos; // exactly one whitespace byte before the payload

    size_t need = static_cast<size_t>(w) * h * 3;
    if (bytes.size() - cur.pos < need)
        throw error(errc::truncated_data, "pixel payload short by " +
                                              std::to_string(need - (bytes.size() - cur.pos)) + " bytes");

    Image img;
    img.width = w;
    img.height = h;
    img.data.resize(need);
    for (size_t i = 0; i < need; ++i) img.data[i] = bytes[cur.pos + i] / 255.0;
    return img;
}

std::vector<unsigned char> encode_ppm(const Image& img) {
    if (img.width < 1 || img.height < 1 || img.data.size() != img.pixel_count() * 3)
        throw error(errc::invalid_param, "image fields inconsistent");
    std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.reserve(bytes.size() + img.data.size());
    for (double v : img.data) {
        // round-half-up, pinned for cross-language golden files
        double q = std::floor(v * 255.0 + 0.5);
        if (q < 0.0) q = 0.0;
        if (q > 255.0) q = 255.0;
        bytes.push_back(static_cast<unsigned char>(q));
    }
    return bytes;
}

Image load_ppm(const std::string& path) { return decode_ppm(read_file_bytes(path)); }

void save_ppm(const std::string& path, const Image& img) { write_file_bytes(path, encode_ppm(img)); }

DepthMap decode_pfm(const std::vector<unsigned char>& bytes) {
    ByteCursor cur{bytes};
    std::string magic = cur.token();
    if (magic == "PF") throw error(errc::malformed_header, "color PF not supported, expected grayscale Pf");
    if (magic != "Pf") throw error(errc::malformed_header, "magic is not Pf");
    int w = parse_dim(cur.token());
    int h = parse_dim(cur.token());
    std::string scale_tok = cur.token();
    if (scale_tok.empty()) throw error(errc::malformed_header, "missing scale");
    double scale = 0.0;
    try {
        size_t used = 0;
        scale = std::stod(scale_tok, &used);
        if (used != scale_tok.size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
        throw error(errc::malformed_header, "bad scale token '" + scale_tok + "'");
    }
    if (scale == 0.0) throw error(errc::malformed_header, "scale must be nonzero");
    if (cur.eof() || !std::isspace(bytes[cur.pos]))
        throw error(errc::malformed_header, "missing separator after scale");
    ++cur.pos;

    bool little_endian = scale < 0.0;
    double mag = std::fabs(scale);
    size_t count = static_cast<size_t>(w) * h;
    if (bytes.size() - cur.pos < count * 4)
        throw error(errc::truncated_data, "float payload short");

    DepthMap d;
    d.width = w;
    d.height = h;
    d.data.resize(count);
    // rows on disk run bottom-to-top
    for (int row = 0; row < h; ++row) {
        int out_row = h - 1 - row;
        for (int col = 0; col < w; ++col) {
            const unsigned char* p = bytes.data() + cur.pos + (static_cast<size_t>(row) * w + col) * 4;
            float raw = little_endian ? f32_from_le(p) : f32_from_be(p);
            double v = static_cast<double>(raw) * mag;
            if (std::isnan(v)) throw error(errc::invalid_depth, "NaN depth sample");
            if (v < 0.0 || !std::isfinite(v)) throw error(errc::invalid_depth, "depth sample out of range");
            d.at(out_row, col) = std::max(v, 0.0);
        }
    }
    return d;
}

std::vector<unsigned char> encode_pfm(const DepthMap& d) {
    if (d.width < 1 || d.height < 1 || d.data.size() != d.pixel_count())
        throw error(errc::invalid_param, "depth map fields inconsistent");
    std::string header = "Pf\n" + std::to_string(d.width) + " " + std::to_string(d.height) + "\n-1.0\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.resize(bytes.size() + d.pixel_count() * 4);
    unsigned char* payload = bytes.data() + header.size();
    for (int row = 0; row < d.height; ++row) {
        int src_row = d.height - 1 - row;
        for (int col = 0; col < d.width; ++col) {
            f32_to_le(static_cast<float>(d.at(src_row, col)),
                      payload + (static_cast<size_t>(row) * d.width + col) * 4);
        }
    }
    return bytes;
}

DepthMap load_pfm(const std::string& path) { return decode_pfm(read_file_bytes(path)); }

void save_pfm(const std::string& path, const DepthMap& d) { write_file_bytes(path, encode_pfm(d)); }

} // namespace fogdet

#include "hads/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "hads/errors.hpp"

#ifdef HADS_HAVE_PNG
#include <png.h>
#endif

namespace hads {

Image::Image(int w, int h, double fill, std::string image_id)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill), id(std::move(image_id)) {
    if (w < 1 || h < 1) throw DimensionError("image: extent must be positive, got " + std::to_string(w) + "x" + std::to_string(h));
}

double Image::clamped(int x, int y) const {
    x = std::clamp(x, 0, width - 1);
    y = std::clamp(y, 0, height - 1);
    return at(x, y);
}

double Image::bilinear(double x, double y) const {
    x = std::clamp(x, 0.0, static_cast<double>(width - 1));
    y = std::clamp(y, 0.0, static_cast<double>(height - 1));
    const int x0 = static_cast<int>(std::floor(x));
    const int y0 = static_cast<int>(std::floor(y));
    const double fx = x - x0, fy = y - y0;
    const int x1 = std::min(x0 + 1, width - 1);
    const int y1 = std::min(y0 + 1, height - 1);
    if (fx == 0.0 && fy == 0.0) return at(x0, y0);
    const double top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    const double bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    return top * (1.0 - fy) + bottom * fy;
}

void clamp_intensities(Image& img) {
    for (auto& v : img.pixels) v = std::clamp(v, 0.0, 255.0);
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma <= 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& v : k) v /= total;
    Image tmp = img, out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * img.clamped(x + i, y);
            tmp.at(x, y) = s;
        }
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            double s = 0.0;
            for (int i = -radius; i <= radius; ++i) s += k[i + radius] * tmp.clamped(x, y + i);
            out.at(x, y) = s;
        }
    return out;
}

Image resize(const Image& img, int side) {
    if (side < 8) throw ConfigError("resize: target side must be >= 8, got " + std::to_string(side));
    if (img.width == side && img.height == side) return img;
    Image out(side, side, 0.0, img.id);
    const double sx = static_cast<double>(img.width) / side;
    const double sy = static_cast<double>(img.height) / side;
    for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x) out.at(x, y) = img.bilinear((x + 0.5) * sx - 0.5, (y + 0.5) * sy - 0.5);
    return out;
}

void write_pgm(const std::filesystem::path& path, const Image& img) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open for writing: " + path.string());
    out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    std::vector<unsigned char> bytes(img.pixels.size());
    for (std::size_t i = 0; i < bytes.size(); ++i)
        bytes[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 255.0)));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

namespace {

// Reads the next header token, skipping whitespace and '#' comments.
std::string pnm_token(std::istream& in) {
    std::string tok;
    char c;
    while (in.get(c)) {
        if (c == '#') {
            std::string rest;
            std::getline(in, rest);
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!tok.empty()) break;
            continue;
        }
        tok.push_back(c);
    }
    return tok;
}

int pnm_int(std::istream& in, const std::filesystem::path& path) {
    const std::string tok = pnm_token(in);
    try {
        std::size_t used = 0;
        const int v = std::stoi(tok, &used);
        if (used != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw DataError("malformed PGM header in " + path.string());
    }
}

}  // namespace

Image read_pgm(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open image: " + path.string());
    const std::string magic = pnm_token(in);
    if (magic != "P5" && magic != "P2") throw DataError("not a PGM file: " + path.string());
    const int w = pnm_int(in, path), h = pnm_int(in, path), maxval = pnm_int(in, path);
    if (w < 1 || h < 1 || maxval < 1 || maxval > 65535) throw DataError("bad PGM dimensions in " + path.string());
    Image img(w, h, 0.0, path.filename().string());
    const double to8 = 255.0 / maxval;
    if (magic == "P2") {
        for (auto& v : img.pixels) v = pnm_int(in, path) * to8;
        return img;
    }
    const std::size_t n = img.pixels.size();
    if (maxval < 256) {
        std::vector<unsigned char> bytes(n);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in.gcount()) != n) throw DataError("truncated PGM data: " + path.string());
        for (std::size_t i = 0; i < n; ++i) img.pixels[i] = bytes[i] * to8;
    } else {
        std::vector<unsigned char> bytes(2 * n);
        in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(2 * n));
        if (static_cast<std::size_t>(in.gcount()) != 2 * n) throw DataError("truncated PGM data: " + path.string());
        for (std::size_t i = 0; i < n; ++i) img.pixels[i] = ((bytes[2 * i] << 8) | bytes[2 * i + 1]) * to8;
    }
    return img;
}

bool png_supported() {
#ifdef HADS_HAVE_PNG
    return true;
#else
    return false;
#endif
}

#ifdef HADS_HAVE_PNG
namespace {
Image read_png(const std::filesystem::path& path) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str()))
        throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
    image.format = PNG_FORMAT_RGB;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw DataError("cannot decode PNG " + path.string() + ": " + image.message);
    }
    Image img(static_cast<int>(image.width), static_cast<int>(image.height), 0.0, path.filename().string());
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        img.pixels[i] = (buf[3 * i] + buf[3 * i + 1] + buf[3 * i + 2]) / 3.0;
    return img;
}
}  // namespace
#endif

Image read_image(const std::filesystem::path& path) {
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw DataError("cannot open image: " + path.string());
    unsigned char sig[8] = {};
    probe.read(reinterpret_cast<char*>(sig), 8);
    probe.close();
    if (sig[0] == 'P' && (sig[1] == '5' || sig[1] == '2')) return read_pgm(path);
    if (sig[0] == 0x89 && sig[1] == 'P' && sig[2] == 'N' && sig[3] == 'G') {
#ifdef HADS_HAVE_PNG
        return read_png(path);
#else
        throw DataError("PNG support not built in; cannot read " + path.string());
#endif
    }
    throw DataError("unsupported image format: " + path.string());
}

}  // namespace hads

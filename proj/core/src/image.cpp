#include "reid/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "reid/errors.hpp"

namespace reid {

namespace {

// Skips whitespace and '#' comment lines between PNM header tokens.
int read_pnm_int(std::istream& in, const std::string& path) {
    int ch = in.get();
    while (ch != EOF) {
        if (ch == '#') {
            while (ch != EOF && ch != '\n') ch = in.get();
        } else if (!std::isspace(ch)) {
            break;
        }
        ch = in.get();
    }
    if (ch == EOF || !std::isdigit(ch)) throw IoError("bad PNM header in " + path);
    int value = 0;
    while (ch != EOF && std::isdigit(ch)) {
        value = value * 10 + (ch - '0');
        ch = in.get();
    }
    return value;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open image file " + path.string());

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    int channels = 0;
    if (m0 == 'P' && m1 == '5') channels = 1;
    else if (m0 == 'P' && m1 == '6') channels = 3;
    else throw IoError("unsupported image format (want P5/P6) in " + path.string());

    const int w = read_pnm_int(in, path.string());
    const int h = read_pnm_int(in, path.string());
    const int maxval = read_pnm_int(in, path.string());
    if (w <= 0 || h <= 0 || maxval != 255)
        throw IoError("unsupported PNM dimensions/maxval in " + path.string());

    Image img(h, w, channels);
    std::vector<unsigned char> raw(img.size());
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (static_cast<std::size_t>(in.gcount()) != raw.size())
        throw IoError("truncated image data in " + path.string());
    for (std::size_t i = 0; i < raw.size(); ++i) img.px[i] = static_cast<float>(raw[i]) / 255.f;
    return img;
}

void write_image(const Image& img, const std::filesystem::path& path) {
    if (img.c != 1 && img.c != 3)
        throw InvalidArgument("write_image supports 1 or 3 channels, got " + std::to_string(img.c));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open image file for writing: " + path.string());
    out << (img.c == 1 ? "P5" : "P6") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<unsigned char> raw(img.size());
    for (std::size_t i = 0; i < raw.size(); ++i) {
        const float v = std::clamp(img.px[i], 0.f, 1.f);
        raw[i] = static_cast<unsigned char>(std::lround(v * 255.f));
    }
    out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!out) throw IoError("failed writing image file " + path.string());
}

Image warp_affine(const Image& img, double rotate_rad, double scale, double tx, double ty) {
    if (scale <= 0.0) throw InvalidArgument("warp_affine: scale must be positive");
    Image out(img.h, img.w, img.c);
    const double cx = (img.w - 1) / 2.0;
    const double cy = (img.h - 1) / 2.0;
    const double cosr = std::cos(rotate_rad);
    const double sinr = std::sin(rotate_rad);
    // Inverse map: undo translation, then the inverse rotation/scale about center.
    for (int y = 0; y < img.h; ++y) {
        for (int x = 0; x < img.w; ++x) {
            const double dx = (x - cx) - tx;
            const double dy = (y - cy) - ty;
            const double sx = (cosr * dx + sinr * dy) / scale + cx;
            const double sy = (-sinr * dx + cosr * dy) / scale + cy;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0;
            const double fy = sy - y0;
            const auto clip_x = [&](int v) { return std::clamp(v, 0, img.w - 1); };
            const auto clip_y = [&](int v) { return std::clamp(v, 0, img.h - 1); };
            for (int ch = 0; ch < img.c; ++ch) {
                const double v00 = img.at(clip_y(y0), clip_x(x0), ch);
                const double v01 = img.at(clip_y(y0), clip_x(x0 + 1), ch);
                const double v10 = img.at(clip_y(y0 + 1), clip_x(x0), ch);
                const double v11 = img.at(clip_y(y0 + 1), clip_x(x0 + 1), ch);
                const double v = (1 - fy) * ((1 - fx) * v00 + fx * v01) + fy * ((1 - fx) * v10 + fx * v11);
                out.at(y, x, ch) = static_cast<float>(v);
            }
        }
    }
    return out;
}

Image shift_wrap(const Image& img, int dy, int dx) {
    Image out(img.h, img.w, img.c);
    for (int y = 0; y < img.h; ++y) {
        const int sy = ((y - dy) % img.h + img.h) % img.h;
        for (int x = 0; x < img.w; ++x) {
            const int sx = ((x - dx) % img.w + img.w) % img.w;
            for (int ch = 0; ch < img.c; ++ch) out.at(y, x, ch) = img.at(sy, sx, ch);
        }
    }
    return out;
}

}  // namespace reid

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace reid {

// Dense H x W x C pixel buffer, values in [0, 1], row-major with the channel
// as the fastest-varying index: px[(y * w + x) * c + ch].
struct Image {
    int h = 0;
    int w = 0;
    int c = 0;
    std::vector<float> px;

    Image() = default;
    Image(int h_, int w_, int c_, float fill = 0.f)
        : h(h_), w(w_), c(c_), px(static_cast<std::size_t>(h_) * w_ * c_, fill) {}

    float& at(int y, int x, int ch) { return px[(static_cast<std::size_t>(y) * w + x) * c + ch]; }
    float at(int y, int x, int ch) const { return px[(static_cast<std::size_t>(y) * w + x) * c + ch]; }

    std::size_t size() const { return px.size(); }
    bool same_shape(const Image& o) const { return h == o.h && w == o.w && c == o.c; }
};

// Binary PGM (P5, 1 channel) / PPM (P6, 3 channels), maxval 255. Values are
// quantised to 8 bits on write.
Image read_image(const std::filesystem::path& path);
void write_image(const Image& img, const std::filesystem::path& path);

// Affine warp about the image center: rotate by `rotate_rad`, scale by
// `scale`, then translate by (tx, ty) pixels. Bilinear sampling with edge
// clamping. The identity transform reproduces the input exactly.
Image warp_affine(const Image& img, double rotate_rad, double scale, double tx, double ty);

// Circular shift by (dy, dx) pixels.
Image shift_wrap(const Image& img, int dy, int dx);

}  // namespace reid

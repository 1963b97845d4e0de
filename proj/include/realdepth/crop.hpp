#pragma once

#include <algorithm>
#include <utility>
#include <vector>

#include "realdepth/rng.hpp"
#include "realdepth/tensor.hpp"

namespace realdepth {

struct CropWindow {
    int top = 0;
    int left = 0;
    int height = 0;
    int width = 0;
};

/// Uniform square window of side `size`; size <= 0 or larger than the image
/// selects the whole image (clipped per axis).
inline CropWindow random_crop(int h, int w, int size, Rng& rng) {
    CropWindow win{0, 0, h, w};
    if (size <= 0) return win;
    win.height = std::min(size, h);
    win.width = std::min(size, w);
    win.top = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - win.height + 1)));
    win.left = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - win.width + 1)));
    return win;
}

inline Grid2D crop(const Grid2D& g, const CropWindow& win) {
    if (win.top == 0 && win.left == 0 && win.height == g.height() && win.width == g.width()) {
        return g;
    }
    Grid2D out(win.height, win.width);
    for (int y = 0; y < win.height; ++y) {
        for (int x = 0; x < win.width; ++x) out(y, x) = g(win.top + y, win.left + x);
    }
    return out;
}

inline FeatureMap crop(const FeatureMap& f, const CropWindow& win) {
    if (win.top == 0 && win.left == 0 && win.height == f.height() && win.width == f.width()) {
        return f;
    }
    FeatureMap out(f.channels(), win.height, win.width);
    for (int c = 0; c < f.channels(); ++c) {
        for (int y = 0; y < win.height; ++y) {
            for (int x = 0; x < win.width; ++x) out(c, y, x) = f(c, win.top + y, win.left + x);
        }
    }
    return out;
}

// Fisher-Yates with the project generator (std::shuffle is not portable).
template <typename T>
void shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        std::swap(items[i - 1], items[rng.below(i)]);
    }
}

}  // namespace realdepth

#pragma once

#include <cstddef>
#include <vector>

namespace disclabel {

// Batch activation tensor, (n, c, h, w) contiguous, channel plane row-major.
template <class S>
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<S> v;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        v(static_cast<std::size_t>(n_) * c_ * h_ * w_, S(0)) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(h) * w; }
  std::size_t image_size() const { return static_cast<std::size_t>(c) * h * w; }

  S* image(int in) { return v.data() + static_cast<std::size_t>(in) * image_size(); }
  const S* image(int in) const { return v.data() + static_cast<std::size_t>(in) * image_size(); }

  S* plane(int in, int ic) { return image(in) + static_cast<std::size_t>(ic) * plane_size(); }
  const S* plane(int in, int ic) const {
    return image(in) + static_cast<std::size_t>(ic) * plane_size();
  }

  S at(int in, int ic, int r, int col) const { return plane(in, ic)[r * w + col]; }
  S& at(int in, int ic, int r, int col) { return plane(in, ic)[r * w + col]; }
};

}  // namespace disclabel

#include "sofpi/nn.hpp"

#include <Eigen/Core>
#include <cmath>

namespace sofpi {
namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, ho, wo;
};

// cols has shape [cin*k*k, ho*wo].
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        double* row = cols + ((c * g.k + ki) * g.k + kj) * g.ho * g.wo;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - pad;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - pad;
            const bool inside = ii >= 0 && jj >= 0 && ii < static_cast<long>(g.h) && jj < static_cast<long>(g.w);
            row[oi * g.wo + oj] = inside ? x[(c * g.h + ii) * g.w + jj] : 0.0;
          }
        }
      }
}

void col2im(const double* cols, const ConvGeometry& g, double* x) {
  const long pad = static_cast<long>(g.pad);
  for (std::size_t c = 0; c < g.cin; ++c)
    for (std::size_t ki = 0; ki < g.k; ++ki)
      for (std::size_t kj = 0; kj < g.k; ++kj) {
        const double* row = cols + ((c * g.k + ki) * g.k + kj) * g.ho * g.wo;
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi * g.stride + ki) - pad;
          if (ii < 0 || ii >= static_cast<long>(g.h)) continue;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj = static_cast<long>(oj * g.stride + kj) - pad;
            if (jj < 0 || jj >= static_cast<long>(g.w)) continue;
            x[(c * g.h + ii) * g.w + jj] += row[oi * g.wo + oj];
          }
        }
      }
}

}  // namespace

Var conv2d(const Var& input, const Var& kernel, std::size_t stride, std::size_t padding) {
  const Shape& xs = input.shape();
  const Shape& ks = kernel.shape();
  if (xs.size() != 3) throw ShapeError("conv2d input must be [C,H,W], got " + shape_string(xs));
  if (ks.size() != 4 || ks[2] != ks[3]) throw ShapeError("conv2d kernel must be [C_out,C_in,k,k], got " + shape_string(ks));
  if (ks[1] != xs[0]) throw ShapeError("conv2d channel mismatch", xs, ks);
  if (ks[2] % 2 == 0) throw ShapeError("conv2d kernel size must be odd, got " + shape_string(ks));
  if (stride == 0) throw Error("conv2d stride must be positive");
  ConvGeometry g{xs[0], xs[1], xs[2], ks[0], ks[2], stride, padding, 0, 0};
  if (g.h + 2 * g.pad < g.k || g.w + 2 * g.pad < g.k) throw ShapeError("conv2d kernel larger than padded input", xs, ks);
  g.ho = (g.h + 2 * g.pad - g.k) / g.stride + 1;
  g.wo = (g.w + 2 * g.pad - g.k) / g.stride + 1;

  const std::size_t patch = g.cin * g.k * g.k, npix = g.ho * g.wo;
  std::vector<double> cols(patch * npix);
  im2col(input.value().data().data(), g, cols.data());
  Tensor out(Shape{g.cout, g.ho, g.wo});
  MapMatrix(out.data().data(), g.cout, npix).noalias() =
      ConstMapMatrix(kernel.value().data().data(), g.cout, patch) * ConstMapMatrix(cols.data(), patch, npix);

  return make_result(
      std::move(out), {input, kernel},
      [g, patch, npix](const DiffNode& self, const Tensor& up) {
        const DiffNode& x = *self.parents[0];
        const DiffNode& kern = *self.parents[1];
        ConstMapMatrix dout(up.data().data(), g.cout, npix);
        std::vector<Tensor> grads(2);
        if (kern.requires_grad) {
          std::vector<double> cols(patch * npix);
          im2col(x.value.data().data(), g, cols.data());
          grads[1] = Tensor(kern.value.shape());
          MapMatrix(grads[1].data().data(), g.cout, patch).noalias() =
              dout * ConstMapMatrix(cols.data(), patch, npix).transpose();
        }
        if (x.requires_grad) {
          std::vector<double> dcols(patch * npix);
          MapMatrix(dcols.data(), patch, npix).noalias() =
              ConstMapMatrix(kern.value.data().data(), g.cout, patch).transpose() * dout;
          grads[0] = Tensor(x.value.shape());
          col2im(dcols.data(), g, grads[0].data().data());
        }
        return grads;
      },
      "conv2d");
}

Var add_channel_bias(const Var& x, const Var& bias) {
  const Shape& xs = x.shape();
  if (xs.size() != 3 || bias.shape() != Shape{xs[0]}) throw ShapeError("add_channel_bias", xs, bias.shape());
  const std::size_t plane = xs[1] * xs[2];
  Tensor out = x.value();
  for (std::size_t c = 0; c < xs[0]; ++c)
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bias.value()[c];
  return make_result(
      std::move(out), {x, bias},
      [plane](const DiffNode& self, const Tensor& up) {
        const std::size_t channels = self.parents[1]->value.size();
        Tensor gb(Shape{channels});
        for (std::size_t c = 0; c < channels; ++c)
          for (std::size_t i = 0; i < plane; ++i) gb[c] += up[c * plane + i];
        return std::vector<Tensor>{up, std::move(gb)};
      },
      "add_channel_bias");
}

Var leaky_relu(const Var& x, double slope) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = v >= 0.0 ? v : slope * v;
  return make_result(
      std::move(out), {x},
      [slope](const DiffNode& self, const Tensor& up) {
        const Tensor& xv = self.parents[0]->value;
        Tensor g = up;
        for (std::size_t i = 0; i < g.size(); ++i)
          if (xv[i] < 0.0) g[i] *= slope;
        return std::vector<Tensor>{std::move(g)};
      },
      "leaky_relu");
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Var sigmoid(const Var& x) {
  Tensor out = x.value();
  for (auto& v : out.data()) v = sigmoid(v);
  return make_result(
      std::move(out), {x},
      [](const DiffNode& self, const Tensor& up) {
        Tensor g = up;
        for (std::size_t i = 0; i < g.size(); ++i) g[i] *= self.value[i] * (1.0 - self.value[i]);
        return std::vector<Tensor>{std::move(g)};
      },
      "sigmoid");
}

Var upsample_nearest2x(const Var& x) {
  const Shape& xs = x.shape();
  if (xs.size() != 3) throw ShapeError("upsample expects [C,H,W], got " + shape_string(xs));
  const std::size_t c = xs[0], h = xs[1], w = xs[2];
  Tensor out(Shape{c, 2 * h, 2 * w});
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) out.at(ch, i, j) = x.value().at(ch, i / 2, j / 2);
  return make_result(
      std::move(out), {x},
      [c, h, w](const DiffNode&, const Tensor& up) {
        Tensor g(Shape{c, h, w});
        for (std::size_t ch = 0; ch < c; ++ch)
          for (std::size_t i = 0; i < 2 * h; ++i)
            for (std::size_t j = 0; j < 2 * w; ++j) g.at(ch, i / 2, j / 2) += up.at(ch, i, j);
        return std::vector<Tensor>{std::move(g)};
      },
      "upsample_nearest2x");
}

}  // namespace sofpi

#include "urep/nn.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>

namespace urep {

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1) throw ShapeError("conv channel counts must be positive");
  if (kernel != 1 && kernel != 3 && kernel != 5 && kernel != 7) {
    throw ContractError("conv kernel must be one of 1, 3, 5, 7; got " + std::to_string(kernel));
  }
  if (stride < 1 || dilation < 1) throw ContractError("conv stride and dilation must be positive");
}

std::pair<int, int> ConvSpec::pads(int input) const {
  if (padding == Padding::valid) return {0, 0};
  const int out = (input + stride - 1) / stride;
  const int total = std::max((out - 1) * stride + effective_kernel() - input, 0);
  return {total / 2, total - total / 2};
}

int ConvSpec::output_size(int input) const {
  const auto [before, after] = pads(input);
  const int span = input + before + after - effective_kernel();
  if (span < 0) {
    throw ShapeError("input extent " + std::to_string(input) + " smaller than effective kernel " +
                     std::to_string(effective_kernel()));
  }
  return span / stride + 1;
}

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int channels, height, width;
  int out_h, out_w;
  int pad_top, pad_left;
  int kernel, stride, dilation;

  std::int64_t rows() const { return static_cast<std::int64_t>(channels) * kernel * kernel; }
  std::int64_t cols() const { return static_cast<std::int64_t>(out_h) * out_w; }
  bool is_identity() const { return kernel == 1 && stride == 1 && pad_top == 0 && pad_left == 0; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& geo, T* cols) {
  const int k = geo.kernel;
  for (int c = 0; c < geo.channels; ++c) {
    const T* plane = x + static_cast<std::size_t>(c) * geo.height * geo.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * geo.cols();
        const int dy = ki * geo.dilation - geo.pad_top;
        const int dx = kj * geo.dilation - geo.pad_left;
        for (int oy = 0; oy < geo.out_h; ++oy) {
          const int iy = oy * geo.stride + dy;
          T* dst = row + static_cast<std::size_t>(oy) * geo.out_w;
          if (iy < 0 || iy >= geo.height) {
            std::fill(dst, dst + geo.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(iy) * geo.width;
          if (geo.stride == 1) {
            // contiguous run: ox in [lo, hi) maps to ix = ox + dx inside the image
            const int lo = std::clamp(-dx, 0, geo.out_w);
            const int hi = std::clamp(geo.width - dx, lo, geo.out_w);
            std::fill(dst, dst + lo, T(0));
            std::copy(src + lo + dx, src + hi + dx, dst + lo);
            std::fill(dst + hi, dst + geo.out_w, T(0));
          } else {
            for (int ox = 0; ox < geo.out_w; ++ox) {
              const int ix = ox * geo.stride + dx;
              dst[ox] = (ix >= 0 && ix < geo.width) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& geo, T* x) {
  const int k = geo.kernel;
  for (int c = 0; c < geo.channels; ++c) {
    T* plane = x + static_cast<std::size_t>(c) * geo.height * geo.width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = cols + ((static_cast<std::size_t>(c) * k + ki) * k + kj) * geo.cols();
        const int dy = ki * geo.dilation - geo.pad_top;
        const int dx = kj * geo.dilation - geo.pad_left;
        for (int oy = 0; oy < geo.out_h; ++oy) {
          const int iy = oy * geo.stride + dy;
          if (iy < 0 || iy >= geo.height) continue;
          const T* src = row + static_cast<std::size_t>(oy) * geo.out_w;
          T* dst = plane + static_cast<std::size_t>(iy) * geo.width;
          for (int ox = 0; ox < geo.out_w; ++ox) {
            const int ix = ox * geo.stride + dx;
            if (ix >= 0 && ix < geo.width) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

template <typename T>
Graph<T>& same_graph(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = nullptr;
  for (const auto& v : vars) {
    if (!v.valid() || (g != nullptr && v.graph != g)) throw ContractError("variables from different graphs");
    g = v.graph;
  }
  return *g;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, const ConvSpec& spec) {
  spec.validate();
  auto& g = same_graph<T>({x, weight, bias});
  const auto& vx = x.value();
  if (vx.rank() != 4) throw ShapeError("conv2d input must be [N, C, H, W], got " + to_string(vx.shape()));
  if (vx.dim(1) != spec.in_channels) {
    throw ShapeError("conv2d expects " + std::to_string(spec.in_channels) + " input channels, got " +
                     std::to_string(vx.dim(1)));
  }
  const Shape wshape{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel};
  if (weight.value().shape() != wshape) throw ShapeError("conv2d weight shape " + to_string(weight.shape()));
  if (bias.value().shape() != Shape{spec.out_channels}) throw ShapeError("conv2d bias shape " + to_string(bias.shape()));

  ConvGeometry geo{};
  geo.channels = spec.in_channels;
  geo.height = static_cast<int>(vx.dim(2));
  geo.width = static_cast<int>(vx.dim(3));
  geo.out_h = spec.output_size(geo.height);
  geo.out_w = spec.output_size(geo.width);
  geo.pad_top = spec.pads(geo.height).first;
  geo.pad_left = spec.pads(geo.width).first;
  geo.kernel = spec.kernel;
  geo.stride = spec.stride;
  geo.dilation = spec.dilation;

  const auto batch = vx.dim(0);
  const auto cout = static_cast<std::int64_t>(spec.out_channels);
  const auto krows = geo.rows();
  const auto pix = geo.cols();
  const std::size_t in_stride = static_cast<std::size_t>(geo.channels) * geo.height * geo.width;
  const std::size_t out_stride = static_cast<std::size_t>(cout * pix);

  Tensor<T> out({batch, cout, geo.out_h, geo.out_w});
  Buffer<T> cols(geo.is_identity() ? 0 : static_cast<std::size_t>(krows * pix));
  CMapMat<T> w(weight.value().data().data(), cout, krows);
  const auto& vb = bias.value();
  for (std::int64_t n = 0; n < batch; ++n) {
    const T* xn = vx.data().data() + n * in_stride;
    const T* colp = xn;
    if (!geo.is_identity()) {
      im2col(xn, geo, cols.data());
      colp = cols.data();
    }
    MapMat<T> on(out.data().data() + n * out_stride, cout, pix);
    on.noalias() = w * CMapMat<T>(colp, krows, pix);
    for (std::int64_t c = 0; c < cout; ++c) on.row(c).array() += vb[static_cast<std::size_t>(c)];
  }

  const int ix = x.id, iw = weight.id, ib = bias.id;
  return g.record(OpKind::conv2d, {x, weight, bias}, std::move(out),
                  [=](Graph<T>& gr, std::span<const T> go) {
                    const auto& xin = gr.value({&gr, ix});
                    const auto& wv = gr.value({&gr, iw});
                    auto gx = gr.grad_if(ix);
                    auto gw = gr.grad_if(iw);
                    auto gb = gr.grad_if(ib);
                    Buffer<T> colbuf(geo.is_identity() ? 0 : static_cast<std::size_t>(krows * pix));
                    Buffer<T> dcols(gx.empty() || geo.is_identity() ? 0 : static_cast<std::size_t>(krows * pix));
                    CMapMat<T> wm(wv.data().data(), cout, krows);
                    for (std::int64_t n = 0; n < batch; ++n) {
                      CMapMat<T> gn(go.data() + n * out_stride, cout, pix);
                      if (!gb.empty()) {
                        for (std::int64_t c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += gn.row(c).sum();
                      }
                      const T* xn = xin.data().data() + n * in_stride;
                      if (!gw.empty()) {
                        const T* colp = xn;
                        if (!geo.is_identity()) {
                          im2col(xn, geo, colbuf.data());
                          colp = colbuf.data();
                        }
                        MapMat<T>(gw.data(), cout, krows).noalias() += gn * CMapMat<T>(colp, krows, pix).transpose();
                      }
                      if (!gx.empty()) {
                        if (geo.is_identity()) {
                          MapMat<T>(gx.data() + n * in_stride, krows, pix).noalias() += wm.transpose() * gn;
                        } else {
                          MapMat<T>(dcols.data(), krows, pix).noalias() = wm.transpose() * gn;
                          col2im_add(dcols.data(), geo, gx.data() + n * in_stride);
                        }
                      }
                    }
                  });
}

template <typename T>
Var<T> upsample_nearest(Var<T> x, int factor) {
  if (factor < 1) throw ContractError("upsample factor must be positive");
  if (!x.valid()) throw ContractError("invalid variable");
  auto& g = *x.graph;
  const auto& vx = x.value();
  if (vx.rank() != 4) throw ShapeError("upsample input must be [N, C, H, W]");
  const auto planes = static_cast<std::size_t>(vx.dim(0) * vx.dim(1));
  const auto h = static_cast<std::size_t>(vx.dim(2)), w = static_cast<std::size_t>(vx.dim(3));
  const auto f = static_cast<std::size_t>(factor);
  Tensor<T> out({vx.dim(0), vx.dim(1), vx.dim(2) * factor, vx.dim(3) * factor});
  const std::size_t ow = w * f;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = vx.data().data() + p * h * w;
    T* dst = out.data().data() + p * h * w * f * f;
    for (std::size_t y = 0; y < h * f; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx) dst[y * ow + xx] = src[(y / f) * w + xx / f];
    }
  }
  const int ix = x.id;
  return g.record(OpKind::upsample, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = go.data() + p * h * w * f * f;
      T* dst = gx.data() + p * h * w;
      for (std::size_t y = 0; y < h * f; ++y) {
        for (std::size_t xx = 0; xx < ow; ++xx) dst[(y / f) * w + xx / f] += src[y * ow + xx];
      }
    }
  });
}

template <typename T>
BatchNormState<T>::BatchNormState(int channels)
    : gamma(Tensor<T>::full({channels}, T(1))),
      beta(Tensor<T>::zeros({channels})),
      running_mean(Tensor<T>::zeros({channels})),
      running_var(Tensor<T>::full({channels}, T(1))) {
  gamma.set_requires_grad(true);
  beta.set_requires_grad(true);
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BatchNormState<T>& state, Mode mode) {
  auto& g = same_graph<T>({x, gamma, beta});
  const auto& vx = x.value();
  if (vx.rank() != 4 && vx.rank() != 2) throw ShapeError("batch_norm input must be [N, C, H, W] or [N, C]");
  const auto batch = static_cast<std::size_t>(vx.dim(0));
  const auto channels = static_cast<std::size_t>(vx.dim(1));
  if (static_cast<std::size_t>(state.channels()) != channels || gamma.value().size() != channels ||
      beta.value().size() != channels) {
    throw ShapeError("batch_norm channel mismatch");
  }
  if (mode == Mode::train && batch < 2) throw ContractError("batch_norm in train mode needs batch size >= 2");
  const std::size_t inner = vx.size() / (batch * channels);
  const std::size_t count = batch * inner;
  const auto& gv = gamma.value();
  const auto& bv = beta.value();

  Tensor<T> out(vx.shape());
  auto xhat = std::make_shared<std::vector<T>>(vx.size());
  auto inv_std = std::make_shared<std::vector<T>>(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double mu, var;
    if (mode == Mode::train) {
      double s = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = vx.data().data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) s += p[i];
      }
      mu = s / static_cast<double>(count);
      double ss = 0;
      for (std::size_t n = 0; n < batch; ++n) {
        const T* p = vx.data().data() + (n * channels + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) ss += (p[i] - mu) * (p[i] - mu);
      }
      var = ss / static_cast<double>(count);
      const double unbiased = ss / static_cast<double>(count - 1);
      state.running_mean[c] = static_cast<T>((1 - state.momentum) * state.running_mean[c] + state.momentum * mu);
      state.running_var[c] = static_cast<T>((1 - state.momentum) * state.running_var[c] + state.momentum * unbiased);
    } else {
      mu = state.running_mean[c];
      var = state.running_var[c];
    }
    const T istd = static_cast<T>(1.0 / std::sqrt(var + state.eps));
    (*inv_std)[c] = istd;
    for (std::size_t n = 0; n < batch; ++n) {
      const std::size_t off = (n * channels + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const T h = (vx[off + i] - static_cast<T>(mu)) * istd;
        (*xhat)[off + i] = h;
        out[off + i] = gv[c] * h + bv[c];
      }
    }
  }

  const int ix = x.id, ig = gamma.id, ibeta = beta.id;
  const bool batch_stats = mode == Mode::train;
  return g.record(OpKind::batch_norm, {x, gamma, beta}, std::move(out),
                  [=](Graph<T>& gr, std::span<const T> go) {
                    auto gx = gr.grad_if(ix);
                    auto gg = gr.grad_if(ig);
                    auto gbt = gr.grad_if(ibeta);
                    const auto& gam = gr.value({&gr, ig});
                    for (std::size_t c = 0; c < channels; ++c) {
                      T sum_dy = 0, sum_dy_xhat = 0;
                      for (std::size_t n = 0; n < batch; ++n) {
                        const std::size_t off = (n * channels + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          sum_dy += go[off + i];
                          sum_dy_xhat += go[off + i] * (*xhat)[off + i];
                        }
                      }
                      if (!gg.empty()) gg[c] += sum_dy_xhat;
                      if (!gbt.empty()) gbt[c] += sum_dy;
                      if (gx.empty()) continue;
                      const T k = gam[c] * (*inv_std)[c];
                      const T m = static_cast<T>(count);
                      for (std::size_t n = 0; n < batch; ++n) {
                        const std::size_t off = (n * channels + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i) {
                          if (batch_stats) {
                            gx[off + i] += k * (go[off + i] - sum_dy / m - (*xhat)[off + i] * sum_dy_xhat / m);
                          } else {
                            gx[off + i] += k * go[off + i];
                          }
                        }
                      }
                    }
                  });
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& vx = x.value();
  if (vx.rank() != 4) throw ShapeError("global_avg_pool input must be [N, C, H, W]");
  auto& g = *x.graph;
  const auto planes = static_cast<std::size_t>(vx.dim(0) * vx.dim(1));
  const auto inner = static_cast<std::size_t>(vx.dim(2) * vx.dim(3));
  Tensor<T> out({vx.dim(0), vx.dim(1)});
  for (std::size_t p = 0; p < planes; ++p) {
    T acc = 0;
    const T* src = vx.data().data() + p * inner;
    for (std::size_t i = 0; i < inner; ++i) acc += src[i];
    out[p] = acc / static_cast<T>(inner);
  }
  const int ix = x.id;
  return g.record(OpKind::global_avg_pool, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    const T w = T(1) / static_cast<T>(inner);
    for (std::size_t p = 0; p < planes; ++p) {
      for (std::size_t i = 0; i < inner; ++i) gx[p * inner + i] += go[p] * w;
    }
  });
}

template <typename T>
Var<T> dense(Var<T> x, Var<T> weight, Var<T> bias) {
  return add_bias(matmul(x, weight), bias);
}

template <typename T>
Var<T> dropout(Var<T> x, double rate, Mode mode, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw ContractError("dropout rate must be in [0, 1)");
  if (mode == Mode::infer || rate == 0.0) return x;
  auto& g = *x.graph;
  const auto& vx = x.value();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(vx.size());
  Tensor<T> out(vx.shape());
  for (std::size_t i = 0; i < vx.size(); ++i) {
    (*mask)[i] = rng.uniform() < rate ? T(0) : keep_scale;
    out[i] = vx[i] * (*mask)[i];
  }
  const int ix = x.id;
  return g.record(OpKind::dropout, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * (*mask)[i];
  });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const auto& vx = x.value();
  if (vx.rank() != 2 || vx.dim(1) < 2) throw ShapeError("softmax input must be [N, K] with K >= 2");
  auto& g = *x.graph;
  const auto rows = static_cast<std::size_t>(vx.dim(0));
  const auto k = static_cast<std::size_t>(vx.dim(1));
  Tensor<T> out(vx.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* in = vx.data().data() + r * k;
    T* o = out.data().data() + r * k;
    const T mx = *std::max_element(in, in + k);
    T total = 0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(in[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] /= total;
  }
  const int ix = x.id;
  const int iout = static_cast<int>(g.size());
  return g.record(OpKind::softmax, {x}, std::move(out), [=](Graph<T>& gr, std::span<const T> go) {
    auto gx = gr.grad_if(ix);
    if (gx.empty()) return;
    const auto& s = gr.value({&gr, iout});
    for (std::size_t r = 0; r < rows; ++r) {
      T dot = 0;
      for (std::size_t j = 0; j < k; ++j) dot += go[r * k + j] * s[r * k + j];
      for (std::size_t j = 0; j < k; ++j) gx[r * k + j] += s[r * k + j] * (go[r * k + j] - dot);
    }
  });
}

template <typename T>
Tensor<T> add_gaussian_noise(const Tensor<T>& x, double sigma, Rng& rng) {
  Tensor<T> out = x.detached();
  if (sigma == 0.0) return out;
  for (auto& v : out.data()) v = static_cast<T>(std::clamp(v + rng.normal(0.0, sigma), 0.0, 1.0));
  return out;
}

template <typename T>
Tensor<T> he_uniform(Shape shape, std::int64_t fan_in, Rng& rng) {
  const T bound = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
  return Tensor<T>::uniform(std::move(shape), -bound, bound, rng);
}

#define UREP_INSTANTIATE_NN(T)                                                          \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, const ConvSpec&);                   \
  template Var<T> upsample_nearest<T>(Var<T>, int);                                     \
  template struct BatchNormState<T>;                                                    \
  template Var<T> batch_norm<T>(Var<T>, Var<T>, Var<T>, BatchNormState<T>&, Mode);      \
  template Var<T> global_avg_pool<T>(Var<T>);                                           \
  template Var<T> dense<T>(Var<T>, Var<T>, Var<T>);                                     \
  template Var<T> dropout<T>(Var<T>, double, Mode, Rng&);                               \
  template Var<T> softmax<T>(Var<T>);                                                   \
  template Tensor<T> add_gaussian_noise<T>(const Tensor<T>&, double, Rng&);             \
  template Tensor<T> he_uniform<T>(Shape, std::int64_t, Rng&);

UREP_INSTANTIATE_NN(float)
UREP_INSTANTIATE_NN(double)

}  // namespace urep

#pragma once

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tleap/rng.hpp"
#include "tleap/tensor.hpp"

namespace tleap::nn {

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

inline void gemm(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                 const double* a, int lda, const double* b, int ldb, double beta,
                 double* c, int ldc) {
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b, ldb,
                beta, c, ldc);
}

/// Trainable parameter with its gradient accumulator. BatchNorm running
/// statistics reuse this type with trainable=false (saved in checkpoints,
/// ignored by the optimizer).
template <typename S>
struct ParamTensor {
    std::string name;
    Tensor<S> value;
    Tensor<S> grad;
    bool trainable = true;

    void init_shape(std::vector<int64_t> shape) {
        value = Tensor<S>(shape);
        grad = Tensor<S>(std::move(shape));
    }
};

/// Kernel/stride/padding geometry shared by convolution and transposed
/// convolution. "Positions" are the strided-grid side (conv output,
/// transposed-conv input); the "image" is the other, larger side.
struct ConvGeom {
    int kt = 1, kh = 1, kw = 1;
    int st = 1, sh = 1, sw = 1;
    int pt = 0, ph = 0, pw = 0;
    int opt = 0, oph = 0, opw = 0;  // output padding, transposed only

    int conv_out(int in, int k, int s, int p) const { return (in + 2 * p - k) / s + 1; }
    int tconv_out(int in, int k, int s, int p, int op) const {
        return (in - 1) * s - 2 * p + k + op;
    }
};

/// Gathers image patches into columns: col[(C*kt*kh*kw) x n_pos] for the
/// position range [pos0, pos0+n_pos). The range must cover whole output
/// rows (pos0 and n_pos multiples of w_pos). Out-of-bounds taps are zero.
/// Inner loops run over contiguous x spans with no per-element index math.
template <typename S>
void im2col(const S* img, int c_img, int ti, int hi, int wi, const ConvGeom& g,
            int t_pos, int h_pos, int w_pos, int64_t pos0, int64_t n_pos, S* col) {
    const int64_t k_rows = int64_t(c_img) * g.kt * g.kh * g.kw;
    const int64_t plane = int64_t(hi) * wi;
    const int64_t row0 = pos0 / w_pos;
    const int64_t rows = n_pos / w_pos;  // flattened (t, y) output rows
    for (int64_t r = 0; r < k_rows; ++r) {
        const int dx = int(r % g.kw);
        const int dy = int((r / g.kw) % g.kh);
        const int dt = int((r / (int64_t(g.kw) * g.kh)) % g.kt);
        const int c = int(r / (int64_t(g.kw) * g.kh * g.kt));
        const S* src_chan = img + int64_t(c) * ti * plane;
        // valid output-x span for this kernel x-offset
        int x_lo = 0;
        while (x_lo < w_pos && x_lo * g.sw + dx - g.pw < 0) ++x_lo;
        int x_hi = w_pos;
        while (x_hi > x_lo && (x_hi - 1) * g.sw + dx - g.pw >= wi) --x_hi;
        S* out = col + r * n_pos;
        for (int64_t row = 0; row < rows; ++row) {
            const int64_t p = row0 + row;
            const int y = int(p % h_pos);
            const int t = int(p / h_pos);
            const int sy = y * g.sh + dy - g.ph;
            const int st = t * g.st + dt - g.pt;
            S* dst = out + row * w_pos;
            if (st < 0 || st >= ti || sy < 0 || sy >= hi || x_lo >= x_hi) {
                std::fill(dst, dst + w_pos, S(0));
                continue;
            }
            std::fill(dst, dst + x_lo, S(0));
            std::fill(dst + x_hi, dst + w_pos, S(0));
            const S* src = src_chan + int64_t(st) * plane + int64_t(sy) * wi +
                           (int64_t(x_lo) * g.sw + dx - g.pw);
            if (g.sw == 1) {
                std::copy_n(src, x_hi - x_lo, dst + x_lo);
            } else {
                for (int x = x_lo; x < x_hi; ++x) dst[x] = src[int64_t(x - x_lo) * g.sw];
            }
        }
    }
}

/// Scatter-add transpose of im2col. Same whole-row range requirement.
template <typename S>
void col2im_add(const S* col, int c_img, int ti, int hi, int wi, const ConvGeom& g,
                int t_pos, int h_pos, int w_pos, int64_t pos0, int64_t n_pos, S* img) {
    const int64_t k_rows = int64_t(c_img) * g.kt * g.kh * g.kw;
    const int64_t plane = int64_t(hi) * wi;
    const int64_t row0 = pos0 / w_pos;
    const int64_t rows = n_pos / w_pos;
    for (int64_t r = 0; r < k_rows; ++r) {
        const int dx = int(r % g.kw);
        const int dy = int((r / g.kw) % g.kh);
        const int dt = int((r / (int64_t(g.kw) * g.kh)) % g.kt);
        const int c = int(r / (int64_t(g.kw) * g.kh * g.kt));
        S* dst_chan = img + int64_t(c) * ti * plane;
        int x_lo = 0;
        while (x_lo < w_pos && x_lo * g.sw + dx - g.pw < 0) ++x_lo;
        int x_hi = w_pos;
        while (x_hi > x_lo && (x_hi - 1) * g.sw + dx - g.pw >= wi) --x_hi;
        const S* in = col + r * n_pos;
        for (int64_t row = 0; row < rows; ++row) {
            const int64_t p = row0 + row;
            const int y = int(p % h_pos);
            const int t = int(p / h_pos);
            const int sy = y * g.sh + dy - g.ph;
            const int st = t * g.st + dt - g.pt;
            if (st < 0 || st >= ti || sy < 0 || sy >= hi || x_lo >= x_hi) continue;
            const S* src = in + row * w_pos;
            S* dst = dst_chan + int64_t(st) * plane + int64_t(sy) * wi +
                     (int64_t(x_lo) * g.sw + dx - g.pw);
            if (g.sw == 1) {
                for (int x = x_lo; x < x_hi; ++x) dst[x - x_lo] += src[x];
            } else {
                for (int x = x_lo; x < x_hi; ++x) dst[int64_t(x - x_lo) * g.sw] += src[x];
            }
        }
    }
}

template <typename S>
class Layer {
public:
    virtual ~Layer() = default;
    virtual const char* kind() const = 0;
    /// x is [B, C, T, H, W]. train=true caches what backward needs.
    virtual Tensor<S> forward(const Tensor<S>& x, bool train) = 0;
    /// Returns grad wrt x; accumulates parameter grads. Must be called
    /// with the same x as the preceding training-mode forward.
    virtual Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) = 0;
    virtual std::vector<ParamTensor<S>*> params() { return {}; }
};

namespace detail {
constexpr int64_t kColTile = 16384;  // positions per im2col/GEMM tile

/// Tiles must cover whole output rows (see im2col).
inline int64_t row_aligned_tile(int64_t w_pos, int64_t total_pos) {
    const int64_t rows = std::max<int64_t>(1, kColTile / w_pos);
    return std::min(total_pos, rows * w_pos);
}

constexpr int kLanes = 16;  // accumulator lanes for vectorized reductions

/// Direct 3x3 stride-1 pad-1 2-D convolution, accumulating:
///   y[oc][oy][ox] += sum_ic sum_dy,dx w(oc,ic)[dy*3+dx] * x[ic][oy+dy-1][ox+dx-1]
/// Channel planes are addressed through strides so temporal slices of a
/// 5-D tensor can be passed directly.
template <typename S>
void conv2d3x3_acc(const S* x, int64_t x_cstride, const S* w, int64_t w_oc_stride,
                   int64_t w_ic_stride, S* y, int64_t y_cstride, int cin, int cout,
                   int h, int width) {
    for (int oy = 0; oy < h; ++oy) {
        for (int oc = 0; oc < cout; ++oc) {
            S* yrow = y + oc * y_cstride + int64_t(oy) * width;
            for (int ic = 0; ic < cin; ++ic) {
                const S* wk = w + oc * w_oc_stride + ic * w_ic_stride;
                const S* xchan = x + ic * x_cstride;
                for (int dy = 0; dy < 3; ++dy) {
                    const int sy = oy + dy - 1;
                    if (sy < 0 || sy >= h) continue;
                    const S* xrow = xchan + int64_t(sy) * width;
                    const S w0 = wk[dy * 3], w1 = wk[dy * 3 + 1], w2 = wk[dy * 3 + 2];
                    for (int ox = 1; ox < width - 1; ++ox)
                        yrow[ox] += w0 * xrow[ox - 1] + w1 * xrow[ox] + w2 * xrow[ox + 1];
                    yrow[0] += w1 * xrow[0] + w2 * xrow[1];
                    yrow[width - 1] += w0 * xrow[width - 2] + w1 * xrow[width - 1];
                }
            }
        }
    }
}

/// Weight gradient of the same geometry, all three x-shifts fused into one
/// pass per row pair. Lane-split partial sums keep the reduction
/// vectorizable under strict FP semantics.
template <typename S>
void gradw2d3x3_acc(const S* x, int64_t x_cstride, const S* gy, int64_t gy_cstride,
                    S* gw, int64_t gw_oc_stride, int64_t gw_ic_stride, int cin,
                    int cout, int h, int width) {
    for (int oc = 0; oc < cout; ++oc) {
        const S* gychan = gy + oc * gy_cstride;
        for (int ic = 0; ic < cin; ++ic) {
            const S* xchan = x + ic * x_cstride;
            S acc[9] = {};
            for (int oy = 0; oy < h; ++oy) {
                const S* gyrow = gychan + int64_t(oy) * width;
                for (int dy = 0; dy < 3; ++dy) {
                    const int sy = oy + dy - 1;
                    if (sy < 0 || sy >= h) continue;
                    const S* xrow = xchan + int64_t(sy) * width;
                    S p0[kLanes] = {}, p1[kLanes] = {}, p2[kLanes] = {};
                    int ox = 1;
                    for (; ox + kLanes <= width - 1; ox += kLanes)
                        for (int l = 0; l < kLanes; ++l) {
                            const S g = gyrow[ox + l];
                            p0[l] += xrow[ox + l - 1] * g;
                            p1[l] += xrow[ox + l] * g;
                            p2[l] += xrow[ox + l + 1] * g;
                        }
                    S s0 = 0, s1 = 0, s2 = 0;
                    for (; ox < width - 1; ++ox) {
                        const S g = gyrow[ox];
                        s0 += xrow[ox - 1] * g;
                        s1 += xrow[ox] * g;
                        s2 += xrow[ox + 1] * g;
                    }
                    for (int l = 0; l < kLanes; ++l) {
                        s0 += p0[l];
                        s1 += p1[l];
                        s2 += p2[l];
                    }
                    s1 += xrow[0] * gyrow[0];
                    s2 += xrow[1] * gyrow[0];
                    s0 += xrow[width - 2] * gyrow[width - 1];
                    s1 += xrow[width - 1] * gyrow[width - 1];
                    acc[dy * 3] += s0;
                    acc[dy * 3 + 1] += s1;
                    acc[dy * 3 + 2] += s2;
                }
            }
            S* out = gw + oc * gw_oc_stride + ic * gw_ic_stride;
            for (int k = 0; k < 9; ++k) out[k] += acc[k];
        }
    }
}
}  // namespace detail

/// 3-D convolution, stride 1, bias. Static nets use kt=1; temporal nets
/// kt=3 with temporal padding 1 (size-preserving). When the input temporal
/// extent is 1 the kt=3 kernel reduces exactly to its middle temporal
/// slice (the outer slices only ever see zero padding), which this layer
/// exploits to skip two thirds of the GEMM work.
template <typename S>
class Conv3d : public Layer<S> {
public:
    Conv3d(std::string name, int cin, int cout, int kt, int kh, int kw, int pt,
           int ph, int pw)
        : cin_(cin), cout_(cout) {
        geom_.kt = kt;
        geom_.kh = kh;
        geom_.kw = kw;
        geom_.pt = pt;
        geom_.ph = ph;
        geom_.pw = pw;
        weight_.name = name + ".weight";
        weight_.init_shape({cout, cin, kt, kh, kw});
        bias_.name = name + ".bias";
        bias_.init_shape({cout});
    }

    const char* kind() const override { return "conv"; }

    Tensor<S> forward(const Tensor<S>& x, bool) override {
        check_input(x);
        if (direct_path(x)) return forward_direct(x);
        const int64_t b = x.dim(0);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        const bool mid = use_mid_slice(ti);
        const ConvGeom g = effective_geom(mid);
        const int to = g.conv_out(ti, g.kt, 1, g.pt);
        const int ho = g.conv_out(hi, g.kh, 1, g.ph);
        const int wo = g.conv_out(wi, g.kw, 1, g.pw);
        Tensor<S> y({b, cout_, to, ho, wo});

        const S* w = mid ? mid_weight() : weight_.value.data();
        const int64_t k_rows = int64_t(cin_) * g.kt * g.kh * g.kw;
        const int64_t n_pos = int64_t(to) * ho * wo;
        const int64_t tile = detail::row_aligned_tile(wo, n_pos);
        col_.resize(size_t(k_rows * tile));

        for (int64_t s = 0; s < b; ++s) {
            const S* xs = x.data() + s * cin_ * ti * int64_t(hi) * wi;
            S* ys = y.data() + s * cout_ * n_pos;
            for (int64_t p0 = 0; p0 < n_pos; p0 += tile) {
                const int64_t np = std::min(tile, n_pos - p0);
                im2col(xs, cin_, ti, hi, wi, g, to, ho, wo, p0, np, col_.data());
                // y[cout x np] = W[cout x k] * col[k x np], strided into ys
                gemm(false, false, cout_, int(np), int(k_rows), S(1), w, int(k_rows),
                     col_.data(), int(np), S(0), tile_out_ptr(np), int(np));
                scatter_tile(ys, n_pos, p0, np);
            }
            for (int c = 0; c < cout_; ++c) {
                S* row = ys + int64_t(c) * n_pos;
                const S bv = bias_.value[size_t(c)];
                for (int64_t i = 0; i < n_pos; ++i) row[i] += bv;
            }
        }
        return y;
    }

    Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) override {
        if (direct_path(x)) return backward_direct(x, gy);
        const int64_t b = x.dim(0);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        const bool mid = use_mid_slice(ti);
        const ConvGeom g = effective_geom(mid);
        const int to = int(gy.dim(2)), ho = int(gy.dim(3)), wo = int(gy.dim(4));
        const int64_t k_rows = int64_t(cin_) * g.kt * g.kh * g.kw;
        const int64_t n_pos = int64_t(to) * ho * wo;

        Tensor<S> gx(x.shape());
        const S* w = mid ? mid_weight() : weight_.value.data();
        std::vector<S> gw_local(size_t(cout_ * k_rows), S(0));
        const int64_t tile = detail::row_aligned_tile(wo, n_pos);
        col_.resize(size_t(k_rows * tile));
        gcol_.resize(col_.size());

        for (int64_t s = 0; s < b; ++s) {
            const S* xs = x.data() + s * cin_ * ti * int64_t(hi) * wi;
            const S* gys = gy.data() + s * cout_ * n_pos;
            S* gxs = gx.data() + s * cin_ * ti * int64_t(hi) * wi;
            for (int64_t p0 = 0; p0 < n_pos; p0 += tile) {
                const int64_t np = std::min(tile, n_pos - p0);
                gather_tile(gys, n_pos, p0, np);
                im2col(xs, cin_, ti, hi, wi, g, to, ho, wo, p0, np, col_.data());
                // gW += gy_tile[cout x np] * col[k x np]^T
                gemm(false, true, cout_, int(k_rows), int(np), S(1), tile_out_ptr(np),
                     int(np), col_.data(), int(np), S(1), gw_local.data(), int(k_rows));
                // gcol[k x np] = W^T * gy_tile
                gemm(true, false, int(k_rows), int(np), cout_, S(1), w, int(k_rows),
                     tile_out_ptr(np), int(np), S(0), gcol_.data(), int(np));
                col2im_add(gcol_.data(), cin_, ti, hi, wi, g, to, ho, wo, p0, np, gxs);
            }
            for (int c = 0; c < cout_; ++c) {
                const S* row = gys + int64_t(c) * n_pos;
                S acc = 0;
                for (int64_t i = 0; i < n_pos; ++i) acc += row[i];
                bias_.grad[size_t(c)] += acc;
            }
        }
        accumulate_weight_grad(gw_local, mid);
        return gx;
    }

    std::vector<ParamTensor<S>*> params() override { return {&weight_, &bias_}; }

    ParamTensor<S>& weight() { return weight_; }
    ParamTensor<S>& bias() { return bias_; }

private:
    void check_input(const Tensor<S>& x) const {
        if (x.rank() != 5 || x.dim(1) != cin_)
            throw std::invalid_argument("Conv3d " + weight_.name +
                                        ": bad input shape " + x.shape_str());
    }

    /// All convolutions in these architectures are spatial 3x3, stride 1,
    /// pad 1; that case runs through cache-friendly direct kernels instead
    /// of im2col + GEMM.
    bool direct_path(const Tensor<S>& x) const {
        return geom_.kh == 3 && geom_.kw == 3 && geom_.ph == 1 && geom_.pw == 1 &&
               x.dim(4) >= 4 && x.dim(3) >= 1;
    }

    Tensor<S> forward_direct(const Tensor<S>& x) {
        const int64_t b = x.dim(0);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        const int to = geom_.conv_out(ti, geom_.kt, 1, geom_.pt);
        Tensor<S> y({b, cout_, to, hi, wi});
        const int64_t x_plane = int64_t(hi) * wi;
        const int64_t x_cstride = int64_t(ti) * x_plane;
        const int64_t y_cstride = int64_t(to) * x_plane;
        const int64_t w_oc = int64_t(cin_) * geom_.kt * 9;
        const int64_t w_ic = int64_t(geom_.kt) * 9;
        const S* w = weight_.value.data();
        for (int64_t s = 0; s < b; ++s) {
            S* ys = y.data() + s * cout_ * y_cstride;
            for (int oc = 0; oc < cout_; ++oc)
                std::fill(ys + oc * y_cstride, ys + (oc + 1) * y_cstride,
                          bias_.value[size_t(oc)]);
            const S* xs = x.data() + s * cin_ * x_cstride;
            for (int t_out = 0; t_out < to; ++t_out)
                for (int dt = 0; dt < geom_.kt; ++dt) {
                    const int st = t_out + dt - geom_.pt;
                    if (st < 0 || st >= ti) continue;
                    detail::conv2d3x3_acc(xs + int64_t(st) * x_plane, x_cstride,
                                          w + int64_t(dt) * 9, w_oc, w_ic,
                                          ys + int64_t(t_out) * x_plane, y_cstride,
                                          cin_, cout_, hi, wi);
                }
        }
        return y;
    }

    Tensor<S> backward_direct(const Tensor<S>& x, const Tensor<S>& gy) {
        const int64_t b = x.dim(0);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        const int to = int(gy.dim(2));
        Tensor<S> gx(x.shape());
        const int64_t plane = int64_t(hi) * wi;
        const int64_t x_cstride = int64_t(ti) * plane;
        const int64_t gy_cstride = int64_t(to) * plane;
        const int64_t w_oc = int64_t(cin_) * geom_.kt * 9;
        const int64_t w_ic = int64_t(geom_.kt) * 9;

        // grad wrt input: correlate gy with the 180-degree-flipped kernel,
        // channels transposed; materialize that view once
        flip_w_.resize(size_t(weight_.value.numel()));
        const S* w = weight_.value.data();
        for (int64_t oc = 0; oc < cout_; ++oc)
            for (int64_t ic = 0; ic < cin_; ++ic)
                for (int64_t dt = 0; dt < geom_.kt; ++dt)
                    for (int64_t k = 0; k < 9; ++k)
                        flip_w_[size_t(((ic * cout_ + oc) * geom_.kt + dt) * 9 +
                                       (8 - k))] =
                            w[(((oc * cin_ + ic) * geom_.kt + dt) * 9 + k)];
        const int64_t fw_ic = int64_t(cout_) * geom_.kt * 9;  // outer stride (by ic)
        const int64_t fw_oc = int64_t(geom_.kt) * 9;          // inner stride (by oc)

        for (int64_t s = 0; s < b; ++s) {
            const S* xs = x.data() + s * cin_ * x_cstride;
            const S* gys = gy.data() + s * cout_ * gy_cstride;
            S* gxs = gx.data() + s * cin_ * x_cstride;
            for (int t_out = 0; t_out < to; ++t_out)
                for (int dt = 0; dt < geom_.kt; ++dt) {
                    const int st = t_out + dt - geom_.pt;
                    if (st < 0 || st >= ti) continue;
                    detail::conv2d3x3_acc(gys + int64_t(t_out) * plane, gy_cstride,
                                          flip_w_.data() + int64_t(dt) * 9, fw_ic,
                                          fw_oc, gxs + int64_t(st) * plane, x_cstride,
                                          cout_, cin_, hi, wi);
                    detail::gradw2d3x3_acc(xs + int64_t(st) * plane, x_cstride,
                                           gys + int64_t(t_out) * plane, gy_cstride,
                                           weight_.grad.data() + int64_t(dt) * 9, w_oc,
                                           w_ic, cin_, cout_, hi, wi);
                }
            for (int c = 0; c < cout_; ++c) {
                const S* row = gys + int64_t(c) * gy_cstride;
                S acc = 0;
                for (int64_t i = 0; i < gy_cstride; ++i) acc += row[i];
                bias_.grad[size_t(c)] += acc;
            }
        }
        return gx;
    }

    bool use_mid_slice(int ti) const {
        return ti == 1 && geom_.kt == 3 && geom_.pt == 1;
    }

    ConvGeom effective_geom(bool mid) const {
        ConvGeom g = geom_;
        if (mid) {
            g.kt = 1;
            g.pt = 0;
        }
        return g;
    }

    const S* mid_weight() {
        const int64_t k2d = int64_t(geom_.kh) * geom_.kw;
        mid_w_.resize(size_t(cout_ * cin_ * k2d));
        const S* src = weight_.value.data();
        for (int64_t oc = 0; oc < cout_; ++oc)
            for (int64_t ic = 0; ic < cin_; ++ic)
                std::copy_n(src + ((oc * cin_ + ic) * geom_.kt + 1) * k2d, k2d,
                            mid_w_.data() + (oc * cin_ + ic) * k2d);
        return mid_w_.data();
    }

    void accumulate_weight_grad(const std::vector<S>& gw, bool mid) {
        if (!mid) {
            for (size_t i = 0; i < gw.size(); ++i) weight_.grad[i] += gw[i];
            return;
        }
        // Scatter into the middle temporal slice; outer slices saw only
        // zero padding, so their gradient is exactly zero.
        const int64_t k2d = int64_t(geom_.kh) * geom_.kw;
        for (int64_t oc = 0; oc < cout_; ++oc)
            for (int64_t ic = 0; ic < cin_; ++ic)
                for (int64_t i = 0; i < k2d; ++i)
                    weight_.grad[size_t(((oc * cin_ + ic) * geom_.kt + 1) * k2d + i)] +=
                        gw[size_t((oc * cin_ + ic) * k2d + i)];
    }

    S* tile_out_ptr(int64_t np) {
        tile_out_.resize(size_t(int64_t(cout_) * np));
        return tile_out_.data();
    }
    void scatter_tile(S* ys, int64_t n_pos, int64_t p0, int64_t np) {
        for (int c = 0; c < cout_; ++c)
            std::copy_n(tile_out_.data() + int64_t(c) * np, size_t(np),
                        ys + int64_t(c) * n_pos + p0);
    }
    void gather_tile(const S* gys, int64_t n_pos, int64_t p0, int64_t np) {
        tile_out_.resize(size_t(int64_t(cout_) * np));
        for (int c = 0; c < cout_; ++c)
            std::copy_n(gys + int64_t(c) * n_pos + p0, size_t(np),
                        tile_out_.data() + int64_t(c) * np);
    }

    int cin_, cout_;
    ConvGeom geom_;
    ParamTensor<S> weight_, bias_;
    std::vector<S> col_, gcol_, tile_out_, mid_w_, flip_w_;
};

/// Transposed 3-D convolution with bias. Spatial stride 2 and output
/// padding 1 double the spatial size exactly; the temporal dimension is
/// size-preserving (and by construction extent 1 in the decoders).
template <typename S>
class ConvTranspose3d : public Layer<S> {
public:
    ConvTranspose3d(std::string name, int cin, int cout, int kt, int pt)
        : cin_(cin), cout_(cout) {
        geom_.kt = kt;
        geom_.kh = 3;
        geom_.kw = 3;
        geom_.st = 1;
        geom_.sh = 2;
        geom_.sw = 2;
        geom_.pt = pt;
        geom_.ph = 1;
        geom_.pw = 1;
        geom_.opt = 0;
        geom_.oph = 1;
        geom_.opw = 1;
        weight_.name = name + ".weight";
        weight_.init_shape({cin, cout, kt, 3, 3});
        bias_.name = name + ".bias";
        bias_.init_shape({cout});
    }

    const char* kind() const override { return "conv_transpose"; }

    Tensor<S> forward(const Tensor<S>& x, bool) override {
        if (x.rank() != 5 || x.dim(1) != cin_)
            throw std::invalid_argument("ConvTranspose3d " + weight_.name +
                                        ": bad input shape " + x.shape_str());
        const int64_t b = x.dim(0);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        const bool mid = use_mid_slice(ti);
        const ConvGeom g = effective_geom(mid);
        const int to = g.tconv_out(ti, g.kt, g.st, g.pt, g.opt);
        const int ho = g.tconv_out(hi, g.kh, g.sh, g.ph, g.oph);
        const int wo = g.tconv_out(wi, g.kw, g.sw, g.pw, g.opw);
        Tensor<S> y({b, cout_, to, ho, wo});

        const S* w = mid ? mid_weight() : weight_.value.data();  // [cin x cout*k]
        const int64_t k_rows = int64_t(cout_) * g.kt * g.kh * g.kw;
        const int64_t n_pos = int64_t(ti) * hi * wi;
        const int64_t y_plane = int64_t(to) * ho * wo;

        const int64_t tile = detail::row_aligned_tile(wi, n_pos);
        for (int64_t s = 0; s < b; ++s) {
            const S* xs = x.data() + s * cin_ * n_pos;
            S* ys = y.data() + s * cout_ * y_plane;
            for (int64_t p0 = 0; p0 < n_pos; p0 += tile) {
                const int64_t np = std::min(tile, n_pos - p0);
                // col[cout*k x np] = W^T[cout*k x cin] * x[cin x np]
                gcol_.resize(size_t(k_rows * np));
                xtile_.resize(size_t(int64_t(cin_) * np));
                for (int c = 0; c < cin_; ++c)
                    std::copy_n(xs + int64_t(c) * n_pos + p0, size_t(np),
                                xtile_.data() + int64_t(c) * np);
                gemm(true, false, int(k_rows), int(np), cin_, S(1), w, int(k_rows),
                     xtile_.data(), int(np), S(0), gcol_.data(), int(np));
                col2im_add(gcol_.data(), cout_, to, ho, wo, g, ti, hi, wi, p0, np, ys);
            }
            for (int c = 0; c < cout_; ++c) {
                S* row = ys + int64_t(c) * y_plane;
                const S bv = bias_.value[size_t(c)];
                for (int64_t i = 0; i < y_plane; ++i) row[i] += bv;
            }
        }
        return y;
    }

    Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) override {
        const int64_t b = x.dim(0);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        const bool mid = use_mid_slice(ti);
        const ConvGeom g = effective_geom(mid);
        const int to = int(gy.dim(2)), ho = int(gy.dim(3)), wo = int(gy.dim(4));
        const int64_t k_rows = int64_t(cout_) * g.kt * g.kh * g.kw;
        const int64_t n_pos = int64_t(ti) * hi * wi;
        const int64_t y_plane = int64_t(to) * ho * wo;

        Tensor<S> gx(x.shape());
        const S* w = mid ? mid_weight() : weight_.value.data();
        std::vector<S> gw_local(size_t(cin_ * k_rows), S(0));

        const int64_t tile = detail::row_aligned_tile(wi, n_pos);
        for (int64_t s = 0; s < b; ++s) {
            const S* xs = x.data() + s * cin_ * n_pos;
            const S* gys = gy.data() + s * cout_ * y_plane;
            S* gxs = gx.data() + s * cin_ * n_pos;
            for (int64_t p0 = 0; p0 < n_pos; p0 += tile) {
                const int64_t np = std::min(tile, n_pos - p0);
                col_.resize(size_t(k_rows * np));
                im2col(gys, cout_, to, ho, wo, g, ti, hi, wi, p0, np, col_.data());
                // gx[cin x np] = W[cin x cout*k] * col
                xtile_.resize(size_t(int64_t(cin_) * np));
                gemm(false, false, cin_, int(np), int(k_rows), S(1), w, int(k_rows),
                     col_.data(), int(np), S(0), xtile_.data(), int(np));
                for (int c = 0; c < cin_; ++c)
                    std::copy_n(xtile_.data() + int64_t(c) * np, size_t(np),
                                gxs + int64_t(c) * n_pos + p0);
                // gW[cin x cout*k] += x_tile * col^T
                for (int c = 0; c < cin_; ++c)
                    std::copy_n(xs + int64_t(c) * n_pos + p0, size_t(np),
                                xtile_.data() + int64_t(c) * np);
                gemm(false, true, cin_, int(k_rows), int(np), S(1), xtile_.data(),
                     int(np), col_.data(), int(np), S(1), gw_local.data(), int(k_rows));
            }
            for (int c = 0; c < cout_; ++c) {
                const S* row = gys + int64_t(c) * y_plane;
                S acc = 0;
                for (int64_t i = 0; i < y_plane; ++i) acc += row[i];
                bias_.grad[size_t(c)] += acc;
            }
        }
        accumulate_weight_grad(gw_local, mid);
        return gx;
    }

    std::vector<ParamTensor<S>*> params() override { return {&weight_, &bias_}; }

private:
    bool use_mid_slice(int ti) const {
        return ti == 1 && geom_.kt == 3 && geom_.pt == 1;
    }

    ConvGeom effective_geom(bool mid) const {
        ConvGeom g = geom_;
        if (mid) {
            g.kt = 1;
            g.pt = 0;
        }
        return g;
    }

    const S* mid_weight() {
        const int64_t k2d = int64_t(geom_.kh) * geom_.kw;
        mid_w_.resize(size_t(cin_ * cout_ * k2d));
        const S* src = weight_.value.data();
        for (int64_t ic = 0; ic < cin_; ++ic)
            for (int64_t oc = 0; oc < cout_; ++oc)
                std::copy_n(src + ((ic * cout_ + oc) * geom_.kt + 1) * k2d, k2d,
                            mid_w_.data() + (ic * cout_ + oc) * k2d);
        return mid_w_.data();
    }

    void accumulate_weight_grad(const std::vector<S>& gw, bool mid) {
        if (!mid) {
            for (size_t i = 0; i < gw.size(); ++i) weight_.grad[i] += gw[i];
            return;
        }
        const int64_t k2d = int64_t(geom_.kh) * geom_.kw;
        for (int64_t ic = 0; ic < cin_; ++ic)
            for (int64_t oc = 0; oc < cout_; ++oc)
                for (int64_t i = 0; i < k2d; ++i)
                    weight_.grad[size_t(((ic * cout_ + oc) * geom_.kt + 1) * k2d + i)] +=
                        gw[size_t((ic * cout_ + oc) * k2d + i)];
    }

    int cin_, cout_;
    ConvGeom geom_;
    ParamTensor<S> weight_, bias_;
    std::vector<S> col_, gcol_, xtile_, mid_w_;
};

/// Max pooling with kernel == stride (disjoint windows). Spatial kernel 2;
/// the temporal kernel is min(2, input extent), fixed at build time, which
/// halves the temporal signal per pool until it collapses to one.
template <typename S>
class MaxPool3d : public Layer<S> {
public:
    MaxPool3d(int kt, int kh, int kw) : kt_(kt), kh_(kh), kw_(kw) {}

    const char* kind() const override { return "max_pool"; }

    Tensor<S> forward(const Tensor<S>& x, bool train) override {
        const int64_t b = x.dim(0), c = x.dim(1);
        const int ti = int(x.dim(2)), hi = int(x.dim(3)), wi = int(x.dim(4));
        if (ti % kt_ || hi % kh_ || wi % kw_)
            throw std::invalid_argument("MaxPool3d: input not divisible by kernel");
        const int to = ti / kt_, ho = hi / kh_, wo = wi / kw_;
        Tensor<S> y({b, c, to, ho, wo});
        argmax_.assign(size_t(y.numel()), 0);

        const int64_t in_chan = int64_t(ti) * hi * wi;
        const int64_t out_chan = int64_t(to) * ho * wo;
        for (int64_t bc = 0; bc < b * c; ++bc) {
            const S* xs = x.data() + bc * in_chan;
            S* ys = y.data() + bc * out_chan;
            int64_t* am = argmax_.data() + bc * out_chan;
            for (int t = 0; t < to; ++t)
                for (int yy = 0; yy < ho; ++yy)
                    for (int xx = 0; xx < wo; ++xx) {
                        S best = std::numeric_limits<S>::lowest();
                        int64_t best_i = 0;
                        for (int dt = 0; dt < kt_; ++dt)
                            for (int dy = 0; dy < kh_; ++dy)
                                for (int dx = 0; dx < kw_; ++dx) {
                                    const int64_t i =
                                        (int64_t(t * kt_ + dt) * hi + (yy * kh_ + dy)) * wi +
                                        (xx * kw_ + dx);
                                    if (xs[i] > best) {
                                        best = xs[i];
                                        best_i = i;
                                    }
                                }
                        const int64_t o = (int64_t(t) * ho + yy) * wo + xx;
                        ys[o] = best;
                        am[o] = best_i;
                    }
        }
        (void)train;
        return y;
    }

    Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) override {
        Tensor<S> gx(x.shape());
        const int64_t bc = x.dim(0) * x.dim(1);
        const int64_t in_chan = x.numel() / bc;
        const int64_t out_chan = gy.numel() / bc;
        for (int64_t i = 0; i < bc; ++i) {
            const S* g = gy.data() + i * out_chan;
            S* dst = gx.data() + i * in_chan;
            const int64_t* am = argmax_.data() + i * out_chan;
            for (int64_t o = 0; o < out_chan; ++o) dst[am[o]] += g[o];
        }
        return gx;
    }

    int kt() const { return kt_; }

private:
    int kt_, kh_, kw_;
    std::vector<int64_t> argmax_;
};

/// Per-channel batch normalization over (batch, time, height, width).
/// Optionally applies the following ReLU in the same pass (the backward
/// recomputes the pre-activation sign instead of storing a mask).
template <typename S>
class BatchNorm : public Layer<S> {
public:
    BatchNorm(std::string name, int channels, double momentum = 0.1, double eps = 1e-5,
              bool fuse_relu = false)
        : c_(channels), momentum_(momentum), eps_(eps), fuse_relu_(fuse_relu) {
        gamma_.name = name + ".bn_gamma";
        gamma_.init_shape({channels});
        gamma_.value.fill(S(1));
        beta_.name = name + ".bn_beta";
        beta_.init_shape({channels});
        running_mean_.name = name + ".bn_mean";
        running_mean_.init_shape({channels});
        running_mean_.trainable = false;
        running_var_.name = name + ".bn_var";
        running_var_.init_shape({channels});
        running_var_.value.fill(S(1));
        running_var_.trainable = false;
    }

    const char* kind() const override { return "batch_norm"; }

    Tensor<S> forward(const Tensor<S>& x, bool train) override {
        const int64_t b = x.dim(0);
        const int64_t chan = x.numel() / (b * c_);
        Tensor<S> y(x.shape());
        mean_.assign(size_t(c_), S(0));
        inv_std_.assign(size_t(c_), S(0));

        for (int64_t c = 0; c < c_; ++c) {
            double mean, var;
            if (train) {
                const int64_t n = b * chan;
                double sum = 0, sum2 = 0;
                for (int64_t s = 0; s < b; ++s) {
                    const S* xs = x.data() + (s * c_ + c) * chan;
                    for (int64_t i = 0; i < chan; ++i) {
                        sum += double(xs[i]);
                        sum2 += double(xs[i]) * double(xs[i]);
                    }
                }
                mean = sum / double(n);
                var = std::max(0.0, sum2 / double(n) - mean * mean);
                const double unbiased = n > 1 ? var * double(n) / double(n - 1) : var;
                running_mean_.value[size_t(c)] =
                    S((1.0 - momentum_) * double(running_mean_.value[size_t(c)]) +
                      momentum_ * mean);
                running_var_.value[size_t(c)] =
                    S((1.0 - momentum_) * double(running_var_.value[size_t(c)]) +
                      momentum_ * unbiased);
            } else {
                mean = double(running_mean_.value[size_t(c)]);
                var = double(running_var_.value[size_t(c)]);
            }
            const S m = S(mean);
            const S inv = S(1.0 / std::sqrt(var + eps_));
            mean_[size_t(c)] = m;
            inv_std_[size_t(c)] = inv;
            const S gm = gamma_.value[size_t(c)];
            const S bt = beta_.value[size_t(c)];
            for (int64_t s = 0; s < b; ++s) {
                const S* xs = x.data() + (s * c_ + c) * chan;
                S* ys = y.data() + (s * c_ + c) * chan;
                if (fuse_relu_) {
                    for (int64_t i = 0; i < chan; ++i)
                        ys[i] = std::max(S(0), (xs[i] - m) * inv * gm + bt);
                } else {
                    for (int64_t i = 0; i < chan; ++i) ys[i] = (xs[i] - m) * inv * gm + bt;
                }
            }
        }
        train_mode_ = train;
        return y;
    }

    Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) override {
        const int64_t b = x.dim(0);
        const int64_t chan = x.numel() / (b * c_);
        const int64_t n = b * chan;
        Tensor<S> gx(x.shape());
        for (int64_t c = 0; c < c_; ++c) {
            const S m = mean_[size_t(c)];
            const S inv = inv_std_[size_t(c)];
            const S gm = gamma_.value[size_t(c)];
            const S bt = beta_.value[size_t(c)];
            // With the fused ReLU, the incoming gradient is masked by the
            // pre-activation sign, recomputed from x (no stored mask).
            double sum_g = 0, sum_g_xhat = 0;
            for (int64_t s = 0; s < b; ++s) {
                const S* xs = x.data() + (s * c_ + c) * chan;
                const S* gys = gy.data() + (s * c_ + c) * chan;
                for (int64_t i = 0; i < chan; ++i) {
                    const S xh = (xs[i] - m) * inv;
                    const S g = (!fuse_relu_ || xh * gm + bt > S(0)) ? gys[i] : S(0);
                    sum_g += double(g);
                    sum_g_xhat += double(g) * double(xh);
                }
            }
            gamma_.grad[size_t(c)] += S(sum_g_xhat);
            beta_.grad[size_t(c)] += S(sum_g);
            const S mean_g = S(sum_g / double(n));
            const S mean_g_xhat = S(sum_g_xhat / double(n));
            for (int64_t s = 0; s < b; ++s) {
                const S* xs = x.data() + (s * c_ + c) * chan;
                const S* gys = gy.data() + (s * c_ + c) * chan;
                S* gxs = gx.data() + (s * c_ + c) * chan;
                if (train_mode_) {
                    for (int64_t i = 0; i < chan; ++i) {
                        const S xh = (xs[i] - m) * inv;
                        const S g = (!fuse_relu_ || xh * gm + bt > S(0)) ? gys[i] : S(0);
                        gxs[i] = gm * inv * (g - mean_g - xh * mean_g_xhat);
                    }
                } else {
                    for (int64_t i = 0; i < chan; ++i) {
                        const S xh = (xs[i] - m) * inv;
                        const S g = (!fuse_relu_ || xh * gm + bt > S(0)) ? gys[i] : S(0);
                        gxs[i] = gm * inv * g;
                    }
                }
            }
        }
        return gx;
    }

    std::vector<ParamTensor<S>*> params() override {
        return {&gamma_, &beta_, &running_mean_, &running_var_};
    }

private:
    int64_t c_;
    double momentum_, eps_;
    bool fuse_relu_;
    bool train_mode_ = true;
    ParamTensor<S> gamma_, beta_, running_mean_, running_var_;
    std::vector<S> mean_, inv_std_;
};

template <typename S>
class ReLU : public Layer<S> {
public:
    const char* kind() const override { return "relu"; }

    Tensor<S> forward(const Tensor<S>& x, bool) override {
        Tensor<S> y(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i) y[size_t(i)] = std::max(S(0), x[size_t(i)]);
        return y;
    }

    Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) override {
        Tensor<S> gx(x.shape());
        for (int64_t i = 0; i < x.numel(); ++i)
            gx[size_t(i)] = x[size_t(i)] > S(0) ? gy[size_t(i)] : S(0);
        return gx;
    }
};

/// Softmax over the spatial (and residual temporal) extent of each map,
/// independently per batch element and channel, so every output map is a
/// probability distribution.
template <typename S>
class SpatialSoftmax : public Layer<S> {
public:
    const char* kind() const override { return "spatial_softmax"; }

    Tensor<S> forward(const Tensor<S>& x, bool train) override {
        const int64_t bc = x.dim(0) * x.dim(1);
        const int64_t plane = x.numel() / bc;
        Tensor<S> y(x.shape());
        for (int64_t r = 0; r < bc; ++r) {
            const S* xs = x.data() + r * plane;
            S* ys = y.data() + r * plane;
            S mx = xs[0];
            for (int64_t i = 1; i < plane; ++i) mx = std::max(mx, xs[i]);
            double sum = 0;
            for (int64_t i = 0; i < plane; ++i) {
                const S e = std::exp(xs[i] - mx);
                ys[i] = e;
                sum += double(e);
            }
            const S inv = S(1.0 / sum);
            for (int64_t i = 0; i < plane; ++i) ys[i] *= inv;
        }
        if (train) out_ = y;
        return y;
    }

    Tensor<S> backward(const Tensor<S>& x, const Tensor<S>& gy) override {
        const int64_t bc = x.dim(0) * x.dim(1);
        const int64_t plane = x.numel() / bc;
        Tensor<S> gx(x.shape());
        for (int64_t r = 0; r < bc; ++r) {
            const S* p = out_.data() + r * plane;
            const S* g = gy.data() + r * plane;
            S* out = gx.data() + r * plane;
            double dot = 0;
            for (int64_t i = 0; i < plane; ++i) dot += double(g[i]) * double(p[i]);
            const S d = S(dot);
            for (int64_t i = 0; i < plane; ++i) out[i] = p[i] * (g[i] - d);
        }
        return gx;
    }

private:
    Tensor<S> out_;
};

}  // namespace tleap::nn

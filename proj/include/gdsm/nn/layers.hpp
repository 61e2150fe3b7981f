#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "gdsm/errors.hpp"

namespace gdsm::nn {

// Channel-major 3D activation tensor; each channel plane is contiguous.
template <typename S>
struct Tensor3 {
    int c = 0, h = 0, w = 0;
    std::vector<S> v;

    Tensor3() = default;
    Tensor3(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<std::size_t>(c_) * h_ * w_, S(0)) {}

    S& at(int ci, int y, int x) { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    S at(int ci, int y, int x) const { return v[(static_cast<std::size_t>(ci) * h + y) * w + x]; }
    std::size_t size() const { return v.size(); }
};

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// 2D convolution with square kernel, expressed as im2col + GEMM. Weights are
// [cout][cin*k*k] row-major so a single matrix product produces all output
// planes.
template <typename S>
struct Conv2D {
    int cin = 1, cout = 1, k = 3, stride = 1, pad = 1;
    std::vector<S> w;
    std::vector<S> b;

    void init_shape(int cin_, int cout_, int k_, int stride_, int pad_) {
        cin = cin_;
        cout = cout_;
        k = k_;
        stride = stride_;
        pad = pad_;
        w.assign(static_cast<std::size_t>(cout) * cin * k * k, S(0));
        b.assign(static_cast<std::size_t>(cout), S(0));
    }

    int out_dim(int in) const { return (in + 2 * pad - k) / stride + 1; }
    std::size_t param_count() const { return w.size() + b.size(); }
    int fan_in() const { return cin * k * k; }

    void im2col(const Tensor3<S>& in, std::vector<S>& col) const {
        const int oh = out_dim(in.h);
        const int ow = out_dim(in.w);
        const std::size_t n = static_cast<std::size_t>(oh) * ow;
        col.assign(static_cast<std::size_t>(cin) * k * k * n, S(0));
        std::size_t r = 0;
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx, ++r) {
                    S* dst = col.data() + r * n;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= in.h) continue;
                        const S* src = &in.v[(static_cast<std::size_t>(ci) * in.h + iy) * in.w];
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < in.w) dst[oy * ow + ox] = src[ix];
                        }
                    }
                }
    }

    // col must hold im2col(in); out is resized to cout x oh x ow.
    void forward(const Tensor3<S>& in, std::vector<S>& col, Tensor3<S>& out) const {
        const int oh = out_dim(in.h);
        const int ow = out_dim(in.w);
        const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
        im2col(in, col);
        out = Tensor3<S>(cout, oh, ow);
        ConstMatMap<S> W(w.data(), cout, fan_in());
        ConstMatMap<S> C(col.data(), fan_in(), n);
        MatMap<S> O(out.v.data(), cout, n);
        O.noalias() = W * C;
        for (int co = 0; co < cout; ++co) O.row(co).array() += b[co];
    }

    // Accumulates parameter grads into dw/db and writes the input grad.
    void backward(const Tensor3<S>& in, const std::vector<S>& col, const Tensor3<S>& dout,
                  std::span<S> dw, std::span<S> db, Tensor3<S>& din, std::vector<S>& dcol) const {
        const int oh = dout.h;
        const int ow = dout.w;
        const Eigen::Index n = static_cast<Eigen::Index>(oh) * ow;
        ConstMatMap<S> W(w.data(), cout, fan_in());
        ConstMatMap<S> C(col.data(), fan_in(), n);
        ConstMatMap<S> DO(dout.v.data(), cout, n);

        MatMap<S> DW(dw.data(), cout, fan_in());
        DW.noalias() += DO * C.transpose();
        for (int co = 0; co < cout; ++co) db[co] += DO.row(co).sum();

        dcol.assign(static_cast<std::size_t>(fan_in()) * n, S(0));
        MatMap<S> DC(dcol.data(), fan_in(), n);
        DC.noalias() = W.transpose() * DO;

        din = Tensor3<S>(cin, in.h, in.w);
        std::size_t r = 0;
        for (int ci = 0; ci < cin; ++ci)
            for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx, ++r) {
                    const S* src = dcol.data() + r * n;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= in.h) continue;
                        S* dst = &din.v[(static_cast<std::size_t>(ci) * in.h + iy) * in.w];
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride + kx - pad;
                            if (ix >= 0 && ix < in.w) dst[ix] += src[oy * ow + ox];
                        }
                    }
                }
    }
};

// Fully connected layer, weights [out][in] row-major.
template <typename S>
struct Dense {
    int in = 1, out = 1;
    std::vector<S> w;
    std::vector<S> b;

    void init_shape(int in_, int out_) {
        in = in_;
        out = out_;
        w.assign(static_cast<std::size_t>(out) * in, S(0));
        b.assign(static_cast<std::size_t>(out), S(0));
    }

    std::size_t param_count() const { return w.size() + b.size(); }
    int fan_in() const { return in; }

    void forward(std::span<const S> x, std::vector<S>& y) const {
        y.assign(static_cast<std::size_t>(out), S(0));
        ConstMatMap<S> W(w.data(), out, in);
        Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>> X(x.data(), in);
        Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>> Y(y.data(), out);
        Y.noalias() = W * X;
        for (int i = 0; i < out; ++i) y[i] += b[i];
    }

    void backward(std::span<const S> x, std::span<const S> dy, std::span<S> dw, std::span<S> db,
                  std::vector<S>& dx) const {
        ConstMatMap<S> W(w.data(), out, in);
        Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>> X(x.data(), in);
        Eigen::Map<const Eigen::Vector<S, Eigen::Dynamic>> DY(dy.data(), out);
        MatMap<S> DW(dw.data(), out, in);
        DW.noalias() += DY * X.transpose();
        for (int i = 0; i < out; ++i) db[i] += dy[i];
        dx.assign(static_cast<std::size_t>(in), S(0));
        Eigen::Map<Eigen::Vector<S, Eigen::Dynamic>> DX(dx.data(), in);
        DX.noalias() = W.transpose() * DY;
    }
};

template <typename S>
inline void relu_inplace(std::vector<S>& v) {
    for (S& x : v)
        if (x < S(0)) x = S(0);
}

// Grad of ReLU given post-activation values (post > 0 iff pre > 0).
template <typename S>
inline void relu_backward_inplace(std::vector<S>& grad, const std::vector<S>& post) {
    for (std::size_t i = 0; i < grad.size(); ++i)
        if (post[i] <= S(0)) grad[i] = S(0);
}

}  // namespace gdsm::nn

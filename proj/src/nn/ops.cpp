#include "dehaze/nn/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "dehaze/error.hpp"

namespace dehaze::nn {
namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

Tape& tape_of(Var a) {
    if (a.tape == nullptr) throw ContractError("operation on an unbound variable");
    return *a.tape;
}

void same_tape(Var a, Var b) {
    if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

void require_shape(const Shape& a, const Shape& b, const char* op) {
    if (!(a == b))
        throw ContractError(std::string(op) + ": shape mismatch " + to_string(a) + " vs " +
                            to_string(b));
}

void accumulate(Tensor& dst, const Tensor& src) {
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

template <typename F, typename D>
Var unary(Var a, F f, D dfdx) {
    Tape& t = tape_of(a);
    const Tensor& x = a.value();
    Tensor out(x.shape);
    for (std::size_t i = 0; i < x.data.size(); ++i) out.data[i] = f(x.data[i]);
    const int ia = a.id;
    return t.record(std::move(out), t.requires_grad(a), [ia, dfdx](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        const Tensor& x = tp.value(ia);
        const Tensor& y = tp.value(self);
        Tensor& gx = tp.grad_buffer(ia);
        for (std::size_t i = 0; i < g.data.size(); ++i)
            gx.data[i] += g.data[i] * dfdx(x.data[i], y.data[i]);
    });
}

void im2col(const float* x, int cin, int h, int w, int k, int pad, float* col) {
    const int hw = h * w;
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                float* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * hw;
                const float* plane = x + static_cast<std::size_t>(ci) * hw;
                for (int oy = 0; oy < h; ++oy) {
                    const int iy = oy + ky - pad;
                    float* dst = row + static_cast<std::size_t>(oy) * w;
                    if (iy < 0 || iy >= h) {
                        std::fill(dst, dst + w, 0.0f);
                        continue;
                    }
                    const float* src = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < w; ++ox) {
                        const int ix = ox + kx - pad;
                        dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0f;
                    }
                }
            }
}

void col2im(const float* col, int cin, int h, int w, int k, int pad, float* dx) {
    const int hw = h * w;
    for (int ci = 0; ci < cin; ++ci)
        for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
                const float* row = col + static_cast<std::size_t>((ci * k + ky) * k + kx) * hw;
                float* plane = dx + static_cast<std::size_t>(ci) * hw;
                for (int oy = 0; oy < h; ++oy) {
                    const int iy = oy + ky - pad;
                    if (iy < 0 || iy >= h) continue;
                    const float* src = row + static_cast<std::size_t>(oy) * w;
                    float* dst = plane + static_cast<std::size_t>(iy) * w;
                    for (int ox = 0; ox < w; ++ox) {
                        const int ix = ox + kx - pad;
                        if (ix >= 0 && ix < w) dst[ix] += src[ox];
                    }
                }
            }
}

} // namespace

Var add(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    require_shape(a.shape(), b.shape(), "add");
    Tensor out = a.value();
    accumulate(out, b.value());
    const int ia = a.id, ib = b.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                    [ia, ib](Tape& tp, int self) {
                        const Tensor& g = *tp.grad_if_any(self);
                        if (tp.requires_grad(ia)) accumulate(tp.grad_buffer(ia), g);
                        if (tp.requires_grad(ib)) accumulate(tp.grad_buffer(ib), g);
                    });
}

Var sub(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    require_shape(a.shape(), b.shape(), "sub");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= bv.data[i];
    const int ia = a.id, ib = b.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                    [ia, ib](Tape& tp, int self) {
                        const Tensor& g = *tp.grad_if_any(self);
                        if (tp.requires_grad(ia)) accumulate(tp.grad_buffer(ia), g);
                        if (tp.requires_grad(ib)) {
                            Tensor& gb = tp.grad_buffer(ib);
                            for (std::size_t i = 0; i < g.data.size(); ++i) gb.data[i] -= g.data[i];
                        }
                    });
}

Var mul(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    require_shape(a.shape(), b.shape(), "mul");
    Tensor out = a.value();
    const Tensor& bv = b.value();
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= bv.data[i];
    const int ia = a.id, ib = b.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                    [ia, ib](Tape& tp, int self) {
                        const Tensor& g = *tp.grad_if_any(self);
                        const Tensor& av = tp.value(ia);
                        const Tensor& bv = tp.value(ib);
                        if (tp.requires_grad(ia)) {
                            Tensor& ga = tp.grad_buffer(ia);
                            for (std::size_t i = 0; i < g.data.size(); ++i)
                                ga.data[i] += g.data[i] * bv.data[i];
                        }
                        if (tp.requires_grad(ib)) {
                            Tensor& gb = tp.grad_buffer(ib);
                            for (std::size_t i = 0; i < g.data.size(); ++i)
                                gb.data[i] += g.data[i] * av.data[i];
                        }
                    });
}

Var scale(Var a, float s) {
    return unary(a, [s](float x) { return s * x; }, [s](float, float) { return s; });
}

Var add_scalar(Var a, float s) {
    return unary(a, [s](float x) { return x + s; }, [](float, float) { return 1.0f; });
}

Var silu(Var a) {
    return unary(
        a, [](float x) { return x / (1.0f + std::exp(-x)); },
        [](float x, float) {
            const float sg = 1.0f / (1.0f + std::exp(-x));
            return sg * (1.0f + x * (1.0f - sg));
        });
}

Var tanh(Var a) {
    return unary(
        a, [](float x) { return std::tanh(x); }, [](float, float y) { return 1.0f - y * y; });
}

Var affine_per_sample(Var x, std::span<const float> a, std::span<const float> b) {
    Tape& t = tape_of(x);
    const Tensor& xv = x.value();
    const int n = xv.shape.n;
    if (static_cast<int>(a.size()) != n || static_cast<int>(b.size()) != n)
        throw ContractError("affine_per_sample: coefficient count must equal batch size");
    Tensor out(xv.shape);
    const std::size_t per = xv.shape.per_sample();
    for (int s = 0; s < n; ++s)
        for (std::size_t i = 0; i < per; ++i)
            out.sample(s)[i] = a[static_cast<std::size_t>(s)] * xv.sample(s)[i] +
                               b[static_cast<std::size_t>(s)];
    std::vector<float> av(a.begin(), a.end());
    const int ix = x.id;
    return t.record(std::move(out), t.requires_grad(x), [ix, av](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        Tensor& gx = tp.grad_buffer(ix);
        const std::size_t per = g.shape.per_sample();
        for (int s = 0; s < g.shape.n; ++s)
            for (std::size_t i = 0; i < per; ++i)
                gx.sample(s)[i] += av[static_cast<std::size_t>(s)] * g.sample(s)[i];
    });
}

Var axpby_per_sample(Var x, std::span<const float> a, Var y, std::span<const float> b) {
    same_tape(x, y);
    Tape& t = tape_of(x);
    require_shape(x.shape(), y.shape(), "axpby_per_sample");
    const Tensor& xv = x.value();
    const Tensor& yv = y.value();
    const int n = xv.shape.n;
    if (static_cast<int>(a.size()) != n || static_cast<int>(b.size()) != n)
        throw ContractError("axpby_per_sample: coefficient count must equal batch size");
    Tensor out(xv.shape);
    const std::size_t per = xv.shape.per_sample();
    for (int s = 0; s < n; ++s) {
        const float as = a[static_cast<std::size_t>(s)], bs = b[static_cast<std::size_t>(s)];
        for (std::size_t i = 0; i < per; ++i)
            out.sample(s)[i] = as * xv.sample(s)[i] + bs * yv.sample(s)[i];
    }
    std::vector<float> av(a.begin(), a.end()), bv(b.begin(), b.end());
    const int ix = x.id, iy = y.id;
    return t.record(std::move(out), t.requires_grad(x) || t.requires_grad(y),
                    [ix, iy, av, bv](Tape& tp, int self) {
                        const Tensor& g = *tp.grad_if_any(self);
                        const std::size_t per = g.shape.per_sample();
                        for (int id : {ix, iy}) {
                            if (!tp.requires_grad(id)) continue;
                            const auto& coef = id == ix ? av : bv;
                            Tensor& gd = tp.grad_buffer(id);
                            for (int s = 0; s < g.shape.n; ++s)
                                for (std::size_t i = 0; i < per; ++i)
                                    gd.sample(s)[i] +=
                                        coef[static_cast<std::size_t>(s)] * g.sample(s)[i];
                        }
                    });
}

Var conv2d(Var x, Var weight, Var bias, int padding) {
    same_tape(x, weight);
    same_tape(x, bias);
    Tape& t = tape_of(x);
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w)
        throw ContractError("conv2d: weight " + to_string(ws) + " incompatible with input " +
                            to_string(xs));
    if (2 * padding != ws.h - 1) throw ContractError("conv2d: only 'same' padding is supported");
    if (bias.shape().numel() != static_cast<std::size_t>(ws.n))
        throw ContractError("conv2d: bias size must equal output channels");

    const int cout = ws.n, cin = ws.c, k = ws.h, h = xs.h, w = xs.w, hw = h * w;
    const int kk = cin * k * k;
    const bool direct = (k == 1);
    Tensor out(Shape{xs.n, cout, h, w});
    FloatBuffer col(direct ? 0 : static_cast<std::size_t>(kk) * hw);
    ConstMapMat wm(weight.value().data.data(), cout, kk);
    const float* bv = bias.value().data.data();
    for (int s = 0; s < xs.n; ++s) {
        const float* src = x.value().sample(s);
        if (!direct) im2col(src, cin, h, w, k, padding, col.data());
        ConstMapMat cm(direct ? src : col.data(), kk, hw);
        MapMat om(out.sample(s), cout, hw);
        om.noalias() = wm * cm;
        for (int co = 0; co < cout; ++co) om.row(co).array() += bv[co];
    }

    const int ix = x.id, iw = weight.id, ib = bias.id;
    const bool rg = t.requires_grad(x) || t.requires_grad(weight) || t.requires_grad(bias);
    return t.record(std::move(out), rg, [=](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        const Tensor& xv = tp.value(ix);
        const Tensor& wv = tp.value(iw);
        const bool gx = tp.requires_grad(ix), gw = tp.requires_grad(iw), gb = tp.requires_grad(ib);
        FloatBuffer colb(direct ? 0 : static_cast<std::size_t>(kk) * hw);
        ConstMapMat wm(wv.data.data(), cout, kk);
        for (int s = 0; s < g.shape.n; ++s) {
            ConstMapMat gm(g.sample(s), cout, hw);
            if (gw) {
                const float* src = xv.sample(s);
                if (!direct) im2col(src, cin, h, w, k, padding, colb.data());
                ConstMapMat cm(direct ? src : colb.data(), kk, hw);
                MapMat dw(tp.grad_buffer(iw).data.data(), cout, kk);
                dw.noalias() += gm * cm.transpose();
            }
            if (gb) {
                float* db = tp.grad_buffer(ib).data.data();
                for (int co = 0; co < cout; ++co) db[co] += gm.row(co).sum();
            }
            if (gx) {
                float* dx = tp.grad_buffer(ix).sample(s);
                if (direct) {
                    MapMat dxm(dx, kk, hw);
                    dxm.noalias() += wm.transpose() * gm;
                } else {
                    MapMat dcol(colb.data(), kk, hw);
                    dcol.noalias() = wm.transpose() * gm;
                    col2im(colb.data(), cin, h, w, k, padding, dx);
                }
            }
        }
    });
}

Var avg_pool2(Var x) {
    Tape& t = tape_of(x);
    const Shape s = x.shape();
    if (s.h % 2 || s.w % 2) throw ContractError("avg_pool2: extents must be even, got " + to_string(s));
    const Tensor& xv = x.value();
    Shape os{s.n, s.c, s.h / 2, s.w / 2};
    Tensor out(os);
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < os.h; ++i)
                for (int j = 0; j < os.w; ++j)
                    out.at(n, c, i, j) = 0.25f * (xv.at(n, c, 2 * i, 2 * j) + xv.at(n, c, 2 * i, 2 * j + 1) +
                                                  xv.at(n, c, 2 * i + 1, 2 * j) +
                                                  xv.at(n, c, 2 * i + 1, 2 * j + 1));
    const int ix = x.id;
    return t.record(std::move(out), t.requires_grad(x), [ix](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        Tensor& gx = tp.grad_buffer(ix);
        const Shape os = g.shape;
        for (int n = 0; n < os.n; ++n)
            for (int c = 0; c < os.c; ++c)
                for (int i = 0; i < os.h; ++i)
                    for (int j = 0; j < os.w; ++j) {
                        const float v = 0.25f * g.at(n, c, i, j);
                        gx.at(n, c, 2 * i, 2 * j) += v;
                        gx.at(n, c, 2 * i, 2 * j + 1) += v;
                        gx.at(n, c, 2 * i + 1, 2 * j) += v;
                        gx.at(n, c, 2 * i + 1, 2 * j + 1) += v;
                    }
    });
}

Var upsample2(Var x) {
    Tape& t = tape_of(x);
    const Shape s = x.shape();
    const Tensor& xv = x.value();
    Tensor out(Shape{s.n, s.c, s.h * 2, s.w * 2});
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < 2 * s.h; ++i)
                for (int j = 0; j < 2 * s.w; ++j) out.at(n, c, i, j) = xv.at(n, c, i / 2, j / 2);
    const int ix = x.id;
    return t.record(std::move(out), t.requires_grad(x), [ix](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        Tensor& gx = tp.grad_buffer(ix);
        const Shape s = g.shape;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int i = 0; i < s.h; ++i)
                    for (int j = 0; j < s.w; ++j) gx.at(n, c, i / 2, j / 2) += g.at(n, c, i, j);
    });
}

Var concat_channels(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    const Shape sa = a.shape(), sb = b.shape();
    if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w)
        throw ContractError("concat_channels: incompatible " + to_string(sa) + " and " + to_string(sb));
    Tensor out(Shape{sa.n, sa.c + sb.c, sa.h, sa.w});
    const std::size_t pa = sa.per_sample(), pb = sb.per_sample();
    for (int n = 0; n < sa.n; ++n) {
        std::copy_n(a.value().sample(n), pa, out.sample(n));
        std::copy_n(b.value().sample(n), pb, out.sample(n) + pa);
    }
    const int ia = a.id, ib = b.id;
    return t.record(std::move(out), t.requires_grad(a) || t.requires_grad(b),
                    [ia, ib, pa, pb](Tape& tp, int self) {
                        const Tensor& g = *tp.grad_if_any(self);
                        for (int n = 0; n < g.shape.n; ++n) {
                            if (tp.requires_grad(ia)) {
                                float* d = tp.grad_buffer(ia).sample(n);
                                const float* src = g.sample(n);
                                for (std::size_t i = 0; i < pa; ++i) d[i] += src[i];
                            }
                            if (tp.requires_grad(ib)) {
                                float* d = tp.grad_buffer(ib).sample(n);
                                const float* src = g.sample(n) + pa;
                                for (std::size_t i = 0; i < pb; ++i) d[i] += src[i];
                            }
                        }
                    });
}

Var pool_to(Var x, int oh, int ow) {
    Tape& t = tape_of(x);
    const Shape s = x.shape();
    if (oh <= 0 || ow <= 0 || s.h % oh || s.w % ow)
        throw ContractError("pool_to: input " + to_string(s) + " not divisible into " +
                            std::to_string(oh) + "x" + std::to_string(ow));
    const int fh = s.h / oh, fw = s.w / ow;
    const float inv = 1.0f / static_cast<float>(fh * fw);
    Tensor out(Shape{s.n, s.c, oh, ow});
    const Tensor& xv = x.value();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c)
            for (int i = 0; i < s.h; ++i)
                for (int j = 0; j < s.w; ++j) out.at(n, c, i / fh, j / fw) += inv * xv.at(n, c, i, j);
    const int ix = x.id;
    return t.record(std::move(out), t.requires_grad(x), [ix, fh, fw, inv](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        Tensor& gx = tp.grad_buffer(ix);
        const Shape s = gx.shape;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c)
                for (int i = 0; i < s.h; ++i)
                    for (int j = 0; j < s.w; ++j) gx.at(n, c, i, j) += inv * g.at(n, c, i / fh, j / fw);
    });
}

Var flatten(Var x) {
    Tape& t = tape_of(x);
    const Shape s = x.shape();
    Tensor out = x.value();
    out.shape = Shape{s.n, static_cast<int>(s.per_sample()), 1, 1};
    const int ix = x.id;
    return t.record(std::move(out), t.requires_grad(x), [ix](Tape& tp, int self) {
        accumulate(tp.grad_buffer(ix), *tp.grad_if_any(self));
    });
}

Var film(Var x, Var gamma, Var beta) {
    same_tape(x, gamma);
    same_tape(x, beta);
    Tape& t = tape_of(x);
    const Shape s = x.shape();
    const Shape mod{s.n, s.c, 1, 1};
    require_shape(gamma.shape(), mod, "film gamma");
    require_shape(beta.shape(), mod, "film beta");
    const Tensor& xv = x.value();
    const Tensor& gv = gamma.value();
    const Tensor& bv = beta.value();
    Tensor out(s);
    const std::size_t plane = s.plane();
    for (int n = 0; n < s.n; ++n)
        for (int c = 0; c < s.c; ++c) {
            const float a = 1.0f + gv.at(n, c, 0, 0), b = bv.at(n, c, 0, 0);
            const float* src = xv.sample(n) + static_cast<std::size_t>(c) * plane;
            float* dst = out.sample(n) + static_cast<std::size_t>(c) * plane;
            for (std::size_t i = 0; i < plane; ++i) dst[i] = a * src[i] + b;
        }
    const int ix = x.id, ig = gamma.id, ib = beta.id;
    const bool rg = t.requires_grad(x) || t.requires_grad(gamma) || t.requires_grad(beta);
    return t.record(std::move(out), rg, [ix, ig, ib, plane](Tape& tp, int self) {
        const Tensor& g = *tp.grad_if_any(self);
        const Tensor& xv = tp.value(ix);
        const Tensor& gv = tp.value(ig);
        const Shape s = g.shape;
        for (int n = 0; n < s.n; ++n)
            for (int c = 0; c < s.c; ++c) {
                const float* gs = g.sample(n) + static_cast<std::size_t>(c) * plane;
                const float* xs = xv.sample(n) + static_cast<std::size_t>(c) * plane;
                if (tp.requires_grad(ix)) {
                    const float a = 1.0f + gv.at(n, c, 0, 0);
                    float* dx = tp.grad_buffer(ix).sample(n) + static_cast<std::size_t>(c) * plane;
                    for (std::size_t i = 0; i < plane; ++i) dx[i] += a * gs[i];
                }
                if (tp.requires_grad(ig)) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += static_cast<double>(gs[i]) * xs[i];
                    tp.grad_buffer(ig).at(n, c, 0, 0) += static_cast<float>(acc);
                }
                if (tp.requires_grad(ib)) {
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; ++i) acc += gs[i];
                    tp.grad_buffer(ib).at(n, c, 0, 0) += static_cast<float>(acc);
                }
            }
    });
}

Var linear(Var x, Var weight, Var bias) {
    same_tape(x, weight);
    same_tape(x, bias);
    Tape& t = tape_of(x);
    const Shape xs = x.shape(), ws = weight.shape();
    const int n = xs.n, d = static_cast<int>(xs.per_sample()), e = ws.n;
    if (static_cast<int>(ws.per_sample()) != d)
        throw ContractError("linear: weight " + to_string(ws) + " incompatible with input " + to_string(xs));
    if (bias.shape().numel() != static_cast<std::size_t>(e))
        throw ContractError("linear: bias size must equal output features");
    Tensor out(Shape{n, e, 1, 1});
    ConstMapMat xm(x.value().data.data(), n, d);
    ConstMapMat wm(weight.value().data.data(), e, d);
    MapMat om(out.data.data(), n, e);
    om.noalias() = xm * wm.transpose();
    const float* bv = bias.value().data.data();
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < e; ++j) om(i, j) += bv[j];
    const int ix = x.id, iw = weight.id, ib = bias.id;
    const bool rg = t.requires_grad(x) || t.requires_grad(weight) || t.requires_grad(bias);
    return t.record(std::move(out), rg, [=](Tape& tp, int self) {
        ConstMapMat gm(tp.grad_if_any(self)->data.data(), n, e);
        ConstMapMat xm(tp.value(ix).data.data(), n, d);
        ConstMapMat wm(tp.value(iw).data.data(), e, d);
        if (tp.requires_grad(ix)) {
            MapMat dx(tp.grad_buffer(ix).data.data(), n, d);
            dx.noalias() += gm * wm;
        }
        if (tp.requires_grad(iw)) {
            MapMat dw(tp.grad_buffer(iw).data.data(), e, d);
            dw.noalias() += gm.transpose() * xm;
        }
        if (tp.requires_grad(ib)) {
            float* db = tp.grad_buffer(ib).data.data();
            for (int j = 0; j < e; ++j) db[j] += gm.col(j).sum();
        }
    });
}

Var sum(Var a) {
    Tape& t = tape_of(a);
    double acc = 0.0;
    for (float v : a.value().data) acc += v;
    const int ia = a.id;
    return t.record(Tensor(Shape{}, static_cast<float>(acc)), t.requires_grad(a),
                    [ia](Tape& tp, int self) {
                        const float g = tp.grad_if_any(self)->data[0];
                        for (float& v : tp.grad_buffer(ia).data) v += g;
                    });
}

Var squared_error_sum(Var a, Var b) {
    same_tape(a, b);
    Tape& t = tape_of(a);
    require_shape(a.shape(), b.shape(), "squared_error_sum");
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < av.data.size(); ++i) {
        const double d = static_cast<double>(av.data[i]) - bv.data[i];
        acc += d * d;
    }
    const int ia = a.id, ib = b.id;
    return t.record(Tensor(Shape{}, static_cast<float>(acc)),
                    t.requires_grad(a) || t.requires_grad(b), [ia, ib](Tape& tp, int self) {
                        const float g = tp.grad_if_any(self)->data[0];
                        const Tensor& av = tp.value(ia);
                        const Tensor& bv = tp.value(ib);
                        const bool ga = tp.requires_grad(ia), gb = tp.requires_grad(ib);
                        for (std::size_t i = 0; i < av.data.size(); ++i) {
                            const float d = 2.0f * g * (av.data[i] - bv.data[i]);
                            if (ga) tp.grad_buffer(ia).data[i] += d;
                            if (gb) tp.grad_buffer(ib).data[i] -= d;
                        }
                    });
}

Var bce_with_logits_sum(Var logits, const Tensor& targets) {
    Tape& t = tape_of(logits);
    require_shape(logits.shape(), targets.shape, "bce_with_logits_sum");
    const Tensor& z = logits.value();
    double acc = 0.0;
    for (std::size_t i = 0; i < z.data.size(); ++i) {
        const double zi = z.data[i], ti = targets.data[i];
        acc += std::max(zi, 0.0) - zi * ti + std::log1p(std::exp(-std::abs(zi)));
    }
    const int iz = logits.id;
    return t.record(Tensor(Shape{}, static_cast<float>(acc)), t.requires_grad(logits),
                    [iz, targets](Tape& tp, int self) {
                        const float g = tp.grad_if_any(self)->data[0];
                        const Tensor& z = tp.value(iz);
                        Tensor& gz = tp.grad_buffer(iz);
                        for (std::size_t i = 0; i < z.data.size(); ++i) {
                            const float sg = 1.0f / (1.0f + std::exp(-z.data[i]));
                            gz.data[i] += g * (sg - targets.data[i]);
                        }
                    });
}

double mmd2_unbiased_poly3_value(const Tensor& fx, const Tensor& fy) {
    const int m = fx.shape.n, n = fy.shape.n, d = static_cast<int>(fx.shape.per_sample());
    if (static_cast<int>(fy.shape.per_sample()) != d)
        throw ContractError("mmd2: embedding dimensions differ");
    if (m < 2 || n < 2) throw ContractError("mmd2: unbiased estimator needs at least 2 rows per set");

    using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const DMat X = ConstMapMat(fx.data.data(), m, d).cast<double>();
    const DMat Y = ConstMapMat(fy.data.data(), n, d).cast<double>();
    const double inv_d = 1.0 / d;
    auto kernel = [inv_d](const DMat& a, const DMat& b) {
        DMat g = (a * b.transpose()).array() * inv_d + 1.0;
        return DMat(g.array().cube());
    };
    const DMat kxx = kernel(X, X), kyy = kernel(Y, Y), kxy = kernel(X, Y);
    const double sxx = (kxx.sum() - kxx.trace()) / (static_cast<double>(m) * (m - 1));
    const double syy = (kyy.sum() - kyy.trace()) / (static_cast<double>(n) * (n - 1));
    const double sxy = kxy.sum() / (static_cast<double>(m) * n);
    return sxx + syy - 2.0 * sxy;
}

Var mmd2_unbiased_poly3(Var fx, Var fy) {
    same_tape(fx, fy);
    Tape& t = tape_of(fx);
    const Shape sx = fx.shape(), sy = fy.shape();
    const int m = sx.n, n = sy.n, d = static_cast<int>(sx.per_sample());
    const double value = mmd2_unbiased_poly3_value(fx.value(), fy.value());
    using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
    const double inv_d = 1.0 / d;

    const int ix = fx.id, iy = fy.id;
    return t.record(Tensor(Shape{}, static_cast<float>(value)),
                    t.requires_grad(fx) || t.requires_grad(fy), [=](Tape& tp, int self) {
                        const double g = tp.grad_if_any(self)->data[0];
                        const DMat X = ConstMapMat(tp.value(ix).data.data(), m, d).cast<double>();
                        const DMat Y = ConstMapMat(tp.value(iy).data.data(), n, d).cast<double>();
                        // k'(u) = 3 (u/d + 1)^2 / d
                        auto dkernel = [inv_d](const DMat& a, const DMat& b) {
                            DMat g = (a * b.transpose()).array() * inv_d + 1.0;
                            return DMat(g.array().square() * (3.0 * inv_d));
                        };
                        if (tp.requires_grad(ix)) {
                            DMat kxx = dkernel(X, X);
                            kxx.diagonal().setZero();
                            const DMat kxy = dkernel(X, Y);
                            const DMat gx = (2.0 / (static_cast<double>(m) * (m - 1))) * (kxx * X) -
                                            (2.0 / (static_cast<double>(m) * n)) * (kxy * Y);
                            MapMat dst(tp.grad_buffer(ix).data.data(), m, d);
                            dst += (g * gx).cast<float>();
                        }
                        if (tp.requires_grad(iy)) {
                            DMat kyy = dkernel(Y, Y);
                            kyy.diagonal().setZero();
                            const DMat kyx = dkernel(Y, X);
                            const DMat gy = (2.0 / (static_cast<double>(n) * (n - 1))) * (kyy * Y) -
                                            (2.0 / (static_cast<double>(m) * n)) * (kyx * X);
                            MapMat dst(tp.grad_buffer(iy).data.data(), n, d);
                            dst += (g * gy).cast<float>();
                        }
                    });
}

} // namespace dehaze::nn

#include "isd/nn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace isd::nn {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RMat>;
using CMapR = Eigen::Map<const RMat>;

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

void require_rank(const Var& v, std::size_t rank, const char* op) {
    if (v->value.rank() != rank) {
        throw std::invalid_argument(std::string(op) + ": expected rank " + std::to_string(rank) +
                                    " input, got " + shape_string(v->value.shape()));
    }
}

bool wants_grad(const Var& v) { return v && v->requires_grad; }

}  // namespace

// ---------------------------------------------------------------------------
// convolution

Var conv1d(const Var& x, const Var& w, const Var& b, const ConvOptions& opt) {
    require_rank(x, 3, "conv1d");
    require_rank(w, 3, "conv1d weight");
    const std::size_t B = x->value.dim(0), cin = x->value.dim(1), T = x->value.dim(2);
    const std::size_t cout = w->value.dim(0), K = w->value.dim(2);
    const std::size_t s = opt.stride, d = opt.dilation, pl = opt.pad_left;
    if (opt.depthwise) {
        if (w->value.dim(1) != 1 || cout != cin) {
            throw std::invalid_argument("conv1d: depthwise weight must be [C, 1, K] with C = " +
                                        std::to_string(cin));
        }
    } else if (w->value.dim(1) != cin) {
        throw std::invalid_argument("conv1d: weight expects " + std::to_string(w->value.dim(1)) +
                                    " input channels, got " + std::to_string(cin));
    }
    const std::size_t padded = T + pl + opt.pad_right;
    const std::size_t span = d * (K - 1) + 1;
    if (padded < span) throw std::invalid_argument("conv1d: input shorter than the receptive field");
    const std::size_t To = (padded - span) / s + 1;
    if (b && b->value.size() != cout) throw std::invalid_argument("conv1d: bias size mismatch");

    Tensor out({B, cout, To}, 0.0);
    const double* xv = x->value.data();
    const double* wv = w->value.data();

    auto src_index = [&](std::size_t t, std::size_t k) -> std::ptrdiff_t {
        return static_cast<std::ptrdiff_t>(t * s + k * d) - static_cast<std::ptrdiff_t>(pl);
    };

    if (opt.depthwise) {
        for (std::size_t bi = 0; bi < B; ++bi) {
            for (std::size_t c = 0; c < cin; ++c) {
                const double* xr = xv + (bi * cin + c) * T;
                double* orow = out.data() + (bi * cout + c) * To;
                for (std::size_t k = 0; k < K; ++k) {
                    const double wk = wv[c * K + k];
                    for (std::size_t t = 0; t < To; ++t) {
                        const auto j = src_index(t, k);
                        if (j >= 0 && j < static_cast<std::ptrdiff_t>(T)) orow[t] += wk * xr[j];
                    }
                }
            }
        }
    } else {
        const std::size_t rows = cin * K;
        RMat col(rows, To);
        CMapR wm(wv, cout, rows);
        for (std::size_t bi = 0; bi < B; ++bi) {
            col.setZero();
            for (std::size_t c = 0; c < cin; ++c) {
                const double* xr = xv + (bi * cin + c) * T;
                for (std::size_t k = 0; k < K; ++k) {
                    double* cr = col.data() + (c * K + k) * To;
                    for (std::size_t t = 0; t < To; ++t) {
                        const auto j = src_index(t, k);
                        if (j >= 0 && j < static_cast<std::ptrdiff_t>(T)) cr[t] = xr[j];
                    }
                }
            }
            MapR ob(out.data() + bi * cout * To, cout, To);
            ob.noalias() = wm * col;
        }
    }
    if (b) {
        for (std::size_t bi = 0; bi < B; ++bi)
            for (std::size_t c = 0; c < cout; ++c) {
                double* orow = out.data() + (bi * cout + c) * To;
                const double bc = b->value[c];
                for (std::size_t t = 0; t < To; ++t) orow[t] += bc;
            }
    }

    return make_result(std::move(out), {x, w, b}, [x, w, b, opt, B, cin, T, cout, K, To](Node& self) {
        const std::size_t s = opt.stride, d = opt.dilation, pl = opt.pad_left;
        const double* g = self.grad.data();
        const double* xv = x->value.data();
        const double* wv = w->value.data();
        auto src_index = [&](std::size_t t, std::size_t k) -> std::ptrdiff_t {
            return static_cast<std::ptrdiff_t>(t * s + k * d) - static_cast<std::ptrdiff_t>(pl);
        };
        if (wants_grad(b)) {
            double* gb = b->grad_buffer().data();
            for (std::size_t bi = 0; bi < B; ++bi)
                for (std::size_t c = 0; c < cout; ++c) {
                    const double* gr = g + (bi * cout + c) * To;
                    double acc = 0.0;
                    for (std::size_t t = 0; t < To; ++t) acc += gr[t];
                    gb[c] += acc;
                }
        }
        const bool gx = wants_grad(x), gw = wants_grad(w);
        if (opt.depthwise) {
            double* dx = gx ? x->grad_buffer().data() : nullptr;
            double* dw = gw ? w->grad_buffer().data() : nullptr;
            for (std::size_t bi = 0; bi < B; ++bi)
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* xr = xv + (bi * cin + c) * T;
                    const double* gr = g + (bi * cout + c) * To;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double wk = wv[c * K + k];
                        double acc = 0.0;
                        for (std::size_t t = 0; t < To; ++t) {
                            const auto j = src_index(t, k);
                            if (j < 0 || j >= static_cast<std::ptrdiff_t>(T)) continue;
                            acc += gr[t] * xr[j];
                            if (dx) dx[(bi * cin + c) * T + j] += gr[t] * wk;
                        }
                        if (dw) dw[c * K + k] += acc;
                    }
                }
            return;
        }
        const std::size_t rows = cin * K;
        RMat col(rows, To);
        RMat dcol(rows, To);
        CMapR wm(wv, cout, rows);
        for (std::size_t bi = 0; bi < B; ++bi) {
            CMapR gb(g + bi * cout * To, cout, To);
            if (gw) {
                col.setZero();
                for (std::size_t c = 0; c < cin; ++c) {
                    const double* xr = xv + (bi * cin + c) * T;
                    for (std::size_t k = 0; k < K; ++k) {
                        double* cr = col.data() + (c * K + k) * To;
                        for (std::size_t t = 0; t < To; ++t) {
                            const auto j = src_index(t, k);
                            if (j >= 0 && j < static_cast<std::ptrdiff_t>(T)) cr[t] = xr[j];
                        }
                    }
                }
                MapR dwm(w->grad_buffer().data(), cout, rows);
                dwm.noalias() += gb * col.transpose();
            }
            if (gx) {
                dcol.noalias() = wm.transpose() * gb;
                double* dx = x->grad_buffer().data();
                for (std::size_t c = 0; c < cin; ++c) {
                    double* dxr = dx + (bi * cin + c) * T;
                    for (std::size_t k = 0; k < K; ++k) {
                        const double* dr = dcol.data() + (c * K + k) * To;
                        for (std::size_t t = 0; t < To; ++t) {
                            const auto j = src_index(t, k);
                            if (j >= 0 && j < static_cast<std::ptrdiff_t>(T)) dxr[j] += dr[t];
                        }
                    }
                }
            }
        }
    });
}

Var conv_transpose1d(const Var& x, const Var& w, const Var& b, std::size_t stride) {
    require_rank(x, 3, "conv_transpose1d");
    require_rank(w, 3, "conv_transpose1d weight");
    const std::size_t B = x->value.dim(0), cin = x->value.dim(1), T = x->value.dim(2);
    require(w->value.dim(0) == cin, "conv_transpose1d: weight input channels mismatch");
    const std::size_t cout = w->value.dim(1), K = w->value.dim(2);
    const std::size_t To = (T - 1) * stride + K;
    Tensor out({B, cout, To}, 0.0);
    CMapR wm(w->value.data(), cin, cout * K);
    RMat tmp(cout * K, T);
    for (std::size_t bi = 0; bi < B; ++bi) {
        CMapR xb(x->value.data() + bi * cin * T, cin, T);
        tmp.noalias() = wm.transpose() * xb;
        double* ob = out.data() + bi * cout * To;
        for (std::size_t c = 0; c < cout; ++c)
            for (std::size_t k = 0; k < K; ++k) {
                const double* tr = tmp.data() + (c * K + k) * T;
                double* orow = ob + c * To;
                for (std::size_t t = 0; t < T; ++t) orow[t * stride + k] += tr[t];
            }
        if (b) {
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t t = 0; t < To; ++t) ob[c * To + t] += b->value[c];
        }
    }
    return make_result(std::move(out), {x, w, b}, [x, w, b, B, cin, T, cout, K, To, stride](Node& self) {
        const double* g = self.grad.data();
        CMapR wm(w->value.data(), cin, cout * K);
        RMat dtmp(cout * K, T);
        for (std::size_t bi = 0; bi < B; ++bi) {
            const double* gb = g + bi * cout * To;
            for (std::size_t c = 0; c < cout; ++c)
                for (std::size_t k = 0; k < K; ++k) {
                    double* dr = dtmp.data() + (c * K + k) * T;
                    for (std::size_t t = 0; t < T; ++t) dr[t] = gb[c * To + t * stride + k];
                }
            if (wants_grad(x)) {
                MapR dx(x->grad_buffer().data() + bi * cin * T, cin, T);
                dx.noalias() += wm * dtmp;
            }
            if (wants_grad(w)) {
                CMapR xb(x->value.data() + bi * cin * T, cin, T);
                MapR dw(w->grad_buffer().data(), cin, cout * K);
                dw.noalias() += xb * dtmp.transpose();
            }
            if (wants_grad(b)) {
                double* db = b->grad_buffer().data();
                for (std::size_t c = 0; c < cout; ++c)
                    for (std::size_t t = 0; t < To; ++t) db[c] += gb[c * To + t];
            }
        }
    });
}

// ---------------------------------------------------------------------------
// normalisation

Var batch_norm(const Var& x, const Var& gamma, const Var& beta, BatchNormState& state, bool training) {
    const auto& shp = x->value.shape();
    require(shp.size() == 2 || shp.size() == 3, "batch_norm: expected [N, C] or [B, C, T]");
    const std::size_t N = shp[0], C = shp[1], T = shp.size() == 3 ? shp[2] : 1;
    const std::size_t count = N * T;
    if (state.running_mean.size() != C) {
        state.running_mean = Tensor({C}, 0.0);
        state.running_var = Tensor({C}, 1.0);
    }
    std::vector<double> mean(C, 0.0), invstd(C, 0.0);
    const double* xv = x->value.data();
    if (training) {
        require(count > 1, "batch_norm: training needs more than one value per channel");
        for (std::size_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t t = 0; t < T; ++t) m += xv[(n * C + c) * T + t];
            m /= static_cast<double>(count);
            double v = 0.0;
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t t = 0; t < T; ++t) {
                    const double dv = xv[(n * C + c) * T + t] - m;
                    v += dv * dv;
                }
            v /= static_cast<double>(count);
            mean[c] = m;
            invstd[c] = 1.0 / std::sqrt(v + state.eps);
            const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
            state.running_mean[c] = (1.0 - state.momentum) * state.running_mean[c] + state.momentum * m;
            state.running_var[c] = (1.0 - state.momentum) * state.running_var[c] + state.momentum * unbiased;
        }
    } else {
        for (std::size_t c = 0; c < C; ++c) {
            mean[c] = state.running_mean[c];
            invstd[c] = 1.0 / std::sqrt(state.running_var[c] + state.eps);
        }
    }
    Tensor xhat(x->value.shape());
    Tensor out(x->value.shape());
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t t = 0; t < T; ++t) {
                const std::size_t i = (n * C + c) * T + t;
                xhat[i] = (xv[i] - mean[c]) * invstd[c];
                out[i] = gamma->value[c] * xhat[i] + beta->value[c];
            }
    return make_result(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat = std::move(xhat), invstd, N, C, T, count, training](Node& self) {
        const double* g = self.grad.data();
        std::vector<double> sum_g(C, 0.0), sum_gx(C, 0.0);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t i = (n * C + c) * T + t;
                    sum_g[c] += g[i];
                    sum_gx[c] += g[i] * xhat[i];
                }
        if (wants_grad(gamma))
            for (std::size_t c = 0; c < C; ++c) gamma->grad_buffer()[c] += sum_gx[c];
        if (wants_grad(beta))
            for (std::size_t c = 0; c < C; ++c) beta->grad_buffer()[c] += sum_g[c];
        if (!wants_grad(x)) return;
        double* dx = x->grad_buffer().data();
        const double inv_count = 1.0 / static_cast<double>(count);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t c = 0; c < C; ++c) {
                const double gc = gamma->value[c];
                for (std::size_t t = 0; t < T; ++t) {
                    const std::size_t i = (n * C + c) * T + t;
                    if (training) {
                        dx[i] += gc * invstd[c] *
                                 (g[i] - sum_g[c] * inv_count - xhat[i] * sum_gx[c] * inv_count);
                    } else {
                        dx[i] += gc * invstd[c] * g[i];
                    }
                }
            }
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const std::size_t D = x->value.shape().back();
    require(gamma->value.size() == D && beta->value.size() == D, "layer_norm: parameter size mismatch");
    const std::size_t rows = x->value.size() / D;
    Tensor xhat(x->value.shape());
    Tensor out(x->value.shape());
    std::vector<double> invstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x->value.data() + r * D;
        double m = 0.0;
        for (std::size_t j = 0; j < D; ++j) m += xr[j];
        m /= static_cast<double>(D);
        double v = 0.0;
        for (std::size_t j = 0; j < D; ++j) v += (xr[j] - m) * (xr[j] - m);
        v /= static_cast<double>(D);
        invstd[r] = 1.0 / std::sqrt(v + eps);
        for (std::size_t j = 0; j < D; ++j) {
            xhat[r * D + j] = (xr[j] - m) * invstd[r];
            out[r * D + j] = gamma->value[j] * xhat[r * D + j] + beta->value[j];
        }
    }
    return make_result(std::move(out), {x, gamma, beta},
                       [x, gamma, beta, xhat = std::move(xhat), invstd = std::move(invstd), rows, D](Node& self) {
        const double* g = self.grad.data();
        const bool gg = wants_grad(gamma), gb = wants_grad(beta), gx = wants_grad(x);
        for (std::size_t r = 0; r < rows; ++r) {
            double sum_dxh = 0.0, sum_dxh_xh = 0.0;
            for (std::size_t j = 0; j < D; ++j) {
                const std::size_t i = r * D + j;
                if (gg) gamma->grad_buffer()[j] += g[i] * xhat[i];
                if (gb) beta->grad_buffer()[j] += g[i];
                const double dxh = g[i] * gamma->value[j];
                sum_dxh += dxh;
                sum_dxh_xh += dxh * xhat[i];
            }
            if (!gx) continue;
            double* dx = x->grad_buffer().data() + r * D;
            const double invD = 1.0 / static_cast<double>(D);
            for (std::size_t j = 0; j < D; ++j) {
                const std::size_t i = r * D + j;
                const double dxh = g[i] * gamma->value[j];
                dx[j] += invstd[r] * (dxh - sum_dxh * invD - xhat[i] * sum_dxh_xh * invD);
            }
        }
    });
}

// ---------------------------------------------------------------------------
// pointwise

Var gelu(const Var& x) {
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x->value[i];
        out[i] = 0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
    }
    return make_result(std::move(out), {x}, [x](Node& self) {
        double* dx = x->grad_buffer().data();
        const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double v = x->value[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
            const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
            dx[i] += self.grad[i] * (cdf + v * pdf);
        }
    });
}

Var dropout(const Var& x, double p, const Context& ctx) {
    if (!ctx.training || p <= 0.0) return x;
    if (!ctx.rng) throw std::invalid_argument("dropout: training context has no random stream");
    if (p >= 1.0) throw std::invalid_argument("dropout: rate must be below 1");
    const double keep = 1.0 - p;
    std::vector<double> mask(x->value.size());
    Tensor out(x->value.shape());
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = ctx.rng->uniform() < keep ? 1.0 / keep : 0.0;
        out[i] = x->value[i] * mask[i];
    }
    return make_result(std::move(out), {x}, [x, mask = std::move(mask)](Node& self) {
        double* dx = x->grad_buffer().data();
        for (std::size_t i = 0; i < mask.size(); ++i) dx[i] += self.grad[i] * mask[i];
    });
}

Var add(const Var& a, const Var& b) {
    if (a->value.shape() != b->value.shape()) {
        throw std::invalid_argument("add: shape mismatch " + shape_string(a->value.shape()) + " vs " +
                                    shape_string(b->value.shape()));
    }
    Tensor out = a->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b->value[i];
    return make_result(std::move(out), {a, b}, [a, b](Node& self) {
        for (const auto& p : {a, b}) {
            if (!wants_grad(p)) continue;
            double* d = p->grad_buffer().data();
            for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
        }
    });
}

Var add_constant(const Var& x, const Tensor& c) {
    require(c.size() > 0 && x->value.size() % c.size() == 0, "add_constant: shapes do not broadcast");
    Tensor out = x->value;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c[i % c.size()];
    return make_result(std::move(out), {x}, [x](Node& self) {
        double* d = x->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    });
}

Var reshape(const Var& x, std::vector<std::size_t> shape) {
    Tensor out = x->value.reshaped(std::move(shape));
    return make_result(std::move(out), {x}, [x](Node& self) {
        double* d = x->grad_buffer().data();
        for (std::size_t i = 0; i < self.grad.size(); ++i) d[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// shape ops

Var concat_channels(const Var& a, const Var& b) {
    require_rank(a, 3, "concat_channels");
    require_rank(b, 3, "concat_channels");
    const std::size_t B = a->value.dim(0), C1 = a->value.dim(1), C2 = b->value.dim(1), T = a->value.dim(2);
    require(b->value.dim(0) == B && b->value.dim(2) == T, "concat_channels: batch/time mismatch");
    Tensor out({B, C1 + C2, T});
    for (std::size_t bi = 0; bi < B; ++bi) {
        std::copy_n(a->value.data() + bi * C1 * T, C1 * T, out.data() + bi * (C1 + C2) * T);
        std::copy_n(b->value.data() + bi * C2 * T, C2 * T, out.data() + (bi * (C1 + C2) + C1) * T);
    }
    return make_result(std::move(out), {a, b}, [a, b, B, C1, C2, T](Node& self) {
        for (std::size_t bi = 0; bi < B; ++bi) {
            const double* g = self.grad.data() + bi * (C1 + C2) * T;
            if (wants_grad(a)) {
                double* d = a->grad_buffer().data() + bi * C1 * T;
                for (std::size_t i = 0; i < C1 * T; ++i) d[i] += g[i];
            }
            if (wants_grad(b)) {
                double* d = b->grad_buffer().data() + bi * C2 * T;
                for (std::size_t i = 0; i < C2 * T; ++i) d[i] += g[C1 * T + i];
            }
        }
    });
}

Var resize_time(const Var& x, std::size_t length) {
    require_rank(x, 3, "resize_time");
    const std::size_t rows = x->value.dim(0) * x->value.dim(1), T = x->value.dim(2);
    if (length == T) return x;
    const std::size_t keep = std::min(length, T);
    Tensor out({x->value.dim(0), x->value.dim(1), length}, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        std::copy_n(x->value.data() + r * T, keep, out.data() + r * length);
    return make_result(std::move(out), {x}, [x, rows, T, length, keep](Node& self) {
        double* d = x->grad_buffer().data();
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t t = 0; t < keep; ++t) d[r * T + t] += self.grad[r * length + t];
    });
}

Var mean_time(const Var& x) {
    require_rank(x, 3, "mean_time");
    const std::size_t B = x->value.dim(0), C = x->value.dim(1), T = x->value.dim(2);
    Tensor out({B, C}, 0.0);
    for (std::size_t r = 0; r < B * C; ++r) {
        double acc = 0.0;
        for (std::size_t t = 0; t < T; ++t) acc += x->value[r * T + t];
        out[r] = acc / static_cast<double>(T);
    }
    return make_result(std::move(out), {x}, [x, B, C, T](Node& self) {
        double* d = x->grad_buffer().data();
        const double inv = 1.0 / static_cast<double>(T);
        for (std::size_t r = 0; r < B * C; ++r)
            for (std::size_t t = 0; t < T; ++t) d[r * T + t] += self.grad[r] * inv;
    });
}

Var transpose_last2(const Var& x) {
    require_rank(x, 3, "transpose_last2");
    const std::size_t B = x->value.dim(0), A = x->value.dim(1), C = x->value.dim(2);
    Tensor out({B, C, A});
    for (std::size_t bi = 0; bi < B; ++bi) {
        CMapR src(x->value.data() + bi * A * C, A, C);
        MapR dst(out.data() + bi * A * C, C, A);
        dst = src.transpose();
    }
    return make_result(std::move(out), {x}, [x, B, A, C](Node& self) {
        for (std::size_t bi = 0; bi < B; ++bi) {
            CMapR g(self.grad.data() + bi * A * C, C, A);
            MapR d(x->grad_buffer().data() + bi * A * C, A, C);
            d += g.transpose();
        }
    });
}

// ---------------------------------------------------------------------------
// dense layers

Var linear(const Var& x, const Var& w, const Var& b) {
    require_rank(w, 2, "linear weight");
    const std::size_t in = w->value.dim(1), outdim = w->value.dim(0);
    if (x->value.shape().back() != in) {
        throw std::invalid_argument("linear: input feature size " +
                                    std::to_string(x->value.shape().back()) + " != " + std::to_string(in));
    }
    const std::size_t rows = x->value.size() / in;
    auto shp = x->value.shape();
    shp.back() = outdim;
    Tensor out(shp);
    CMapR xm(x->value.data(), rows, in);
    CMapR wm(w->value.data(), outdim, in);
    MapR om(out.data(), rows, outdim);
    om.noalias() = xm * wm.transpose();
    if (b) {
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < outdim; ++j) om(r, j) += b->value[j];
    }
    return make_result(std::move(out), {x, w, b}, [x, w, b, rows, in, outdim](Node& self) {
        CMapR g(self.grad.data(), rows, outdim);
        if (wants_grad(x)) {
            MapR dx(x->grad_buffer().data(), rows, in);
            CMapR wm(w->value.data(), outdim, in);
            dx.noalias() += g * wm;
        }
        if (wants_grad(w)) {
            MapR dw(w->grad_buffer().data(), outdim, in);
            CMapR xm(x->value.data(), rows, in);
            dw.noalias() += g.transpose() * xm;
        }
        if (wants_grad(b)) {
            double* db = b->grad_buffer().data();
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t j = 0; j < outdim; ++j) db[j] += g(r, j);
        }
    });
}

Var multi_head_attention(const Var& x, const Var& w_qkv, const Var& b_qkv, const Var& w_out,
                         const Var& b_out, std::size_t heads) {
    require_rank(x, 3, "multi_head_attention");
    const std::size_t B = x->value.dim(0), T = x->value.dim(1), D = x->value.dim(2);
    require(D % heads == 0, "multi_head_attention: model width not divisible by head count");
    require(w_qkv->value.dim(0) == 3 * D && w_qkv->value.dim(1) == D, "multi_head_attention: w_qkv shape");
    const std::size_t dh = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    CMapR wq(w_qkv->value.data(), 3 * D, D);
    CMapR wo(w_out->value.data(), D, D);
    // Saved per batch item: qkv [T, 3D], attention [H, T, T], context [T, D].
    auto qkv = std::make_shared<std::vector<RMat>>(B);
    auto attn = std::make_shared<std::vector<RMat>>(B * heads);
    auto ctx = std::make_shared<std::vector<RMat>>(B);
    Tensor out({B, T, D});
    for (std::size_t bi = 0; bi < B; ++bi) {
        CMapR xb(x->value.data() + bi * T * D, T, D);
        RMat& q = (*qkv)[bi];
        q.noalias() = xb * wq.transpose();
        for (std::size_t j = 0; j < 3 * D; ++j) q.col(j).array() += b_qkv->value[j];
        RMat& c = (*ctx)[bi];
        c.setZero(T, D);
        for (std::size_t h = 0; h < heads; ++h) {
            RMat& p = (*attn)[bi * heads + h];
            p.noalias() = q.middleCols(h * dh, dh) * q.middleCols(D + h * dh, dh).transpose();
            p *= scale;
            for (std::size_t r = 0; r < T; ++r) {
                const double mx = p.row(r).maxCoeff();
                p.row(r) = (p.row(r).array() - mx).exp();
                p.row(r) /= p.row(r).sum();
            }
            c.middleCols(h * dh, dh).noalias() = p * q.middleCols(2 * D + h * dh, dh);
        }
        MapR ob(out.data() + bi * T * D, T, D);
        ob.noalias() = c * wo.transpose();
        for (std::size_t j = 0; j < D; ++j) ob.col(j).array() += b_out->value[j];
    }
    return make_result(std::move(out), {x, w_qkv, b_qkv, w_out, b_out},
                       [=](Node& self) {
        CMapR wq(w_qkv->value.data(), 3 * D, D);
        CMapR wo(w_out->value.data(), D, D);
        RMat dqkv(T, 3 * D);
        RMat dctx(T, D);
        RMat dp(T, T);
        for (std::size_t bi = 0; bi < B; ++bi) {
            CMapR g(self.grad.data() + bi * T * D, T, D);
            const RMat& q = (*qkv)[bi];
            const RMat& c = (*ctx)[bi];
            if (wants_grad(w_out)) {
                MapR dwo(w_out->grad_buffer().data(), D, D);
                dwo.noalias() += g.transpose() * c;
            }
            if (wants_grad(b_out)) {
                double* db = b_out->grad_buffer().data();
                for (std::size_t j = 0; j < D; ++j) db[j] += g.col(j).sum();
            }
            dctx.noalias() = g * wo;
            for (std::size_t h = 0; h < heads; ++h) {
                const RMat& p = (*attn)[bi * heads + h];
                auto dO = dctx.middleCols(h * dh, dh);
                dp.noalias() = dO * q.middleCols(2 * D + h * dh, dh).transpose();
                dqkv.middleCols(2 * D + h * dh, dh).noalias() = p.transpose() * dO;
                for (std::size_t r = 0; r < T; ++r) {
                    const double dot = (dp.row(r).array() * p.row(r).array()).sum();
                    dp.row(r) = p.row(r).array() * (dp.row(r).array() - dot);
                }
                dp *= scale;
                dqkv.middleCols(h * dh, dh).noalias() = dp * q.middleCols(D + h * dh, dh);
                dqkv.middleCols(D + h * dh, dh).noalias() = dp.transpose() * q.middleCols(h * dh, dh);
            }
            if (wants_grad(w_qkv)) {
                CMapR xb(x->value.data() + bi * T * D, T, D);
                MapR dwq(w_qkv->grad_buffer().data(), 3 * D, D);
                dwq.noalias() += dqkv.transpose() * xb;
            }
            if (wants_grad(b_qkv)) {
                double* db = b_qkv->grad_buffer().data();
                for (std::size_t j = 0; j < 3 * D; ++j) db[j] += dqkv.col(j).sum();
            }
            if (wants_grad(x)) {
                MapR dx(x->grad_buffer().data() + bi * T * D, T, D);
                dx.noalias() += dqkv * wq;
            }
        }
    });
}

// ---------------------------------------------------------------------------
// recurrent

Var gru(const Var& x, const Var& w_ih, const Var& w_hh, const Var& b_ih, const Var& b_hh, bool reverse) {
    require_rank(x, 3, "gru");
    const std::size_t B = x->value.dim(0), in = x->value.dim(1), T = x->value.dim(2);
    const std::size_t H = w_hh->value.dim(1);
    require(w_ih->value.dim(0) == 3 * H && w_ih->value.dim(1) == in, "gru: w_ih shape");
    require(w_hh->value.dim(0) == 3 * H, "gru: w_hh shape");

    // Column t * B + b holds time step t of batch item b.
    auto xall = std::make_shared<RMat>(in, T * B);
    for (std::size_t bi = 0; bi < B; ++bi)
        for (std::size_t i = 0; i < in; ++i)
            for (std::size_t t = 0; t < T; ++t) (*xall)(i, t * B + bi) = x->value[(bi * in + i) * T + t];

    CMapR wih(w_ih->value.data(), 3 * H, in);
    CMapR whh(w_hh->value.data(), 3 * H, H);
    Eigen::Map<const Eigen::VectorXd> bih(b_ih->value.data(), 3 * H);
    Eigen::Map<const Eigen::VectorXd> bhh(b_hh->value.data(), 3 * H);

    RMat gi = wih * (*xall);
    gi.colwise() += bih;

    auto r_s = std::make_shared<RMat>(H, T * B);
    auto z_s = std::make_shared<RMat>(H, T * B);
    auto n_s = std::make_shared<RMat>(H, T * B);
    auto hn_s = std::make_shared<RMat>(H, T * B);
    auto hprev_s = std::make_shared<RMat>(H, T * B);

    RMat h = RMat::Zero(H, B);
    RMat gh(3 * H, B);
    Tensor out({B, H, T});
    for (std::size_t step = 0; step < T; ++step) {
        const std::size_t t = reverse ? T - 1 - step : step;
        gh.noalias() = whh * h;
        gh.colwise() += bhh;
        for (std::size_t bi = 0; bi < B; ++bi) {
            const std::size_t col = t * B + bi;
            for (std::size_t k = 0; k < H; ++k) {
                const double r = 1.0 / (1.0 + std::exp(-(gi(k, col) + gh(k, bi))));
                const double z = 1.0 / (1.0 + std::exp(-(gi(H + k, col) + gh(H + k, bi))));
                const double hn = gh(2 * H + k, bi);
                const double n = std::tanh(gi(2 * H + k, col) + r * hn);
                const double hp = h(k, bi);
                (*r_s)(k, col) = r;
                (*z_s)(k, col) = z;
                (*n_s)(k, col) = n;
                (*hn_s)(k, col) = hn;
                (*hprev_s)(k, col) = hp;
                h(k, bi) = (1.0 - z) * n + z * hp;
                out[(bi * H + k) * T + t] = h(k, bi);
            }
        }
    }
    return make_result(std::move(out), {x, w_ih, w_hh, b_ih, b_hh}, [=](Node& self) {
        CMapR wih(w_ih->value.data(), 3 * H, in);
        CMapR whh(w_hh->value.data(), 3 * H, H);
        RMat dgi(3 * H, T * B);
        RMat dgh(3 * H, B);
        RMat dh = RMat::Zero(H, B);
        RMat dwhh = RMat::Zero(3 * H, H);
        Eigen::VectorXd dbhh = Eigen::VectorXd::Zero(3 * H);
        RMat hp_block(H, B);
        for (std::size_t step = 0; step < T; ++step) {
            const std::size_t t = reverse ? step : T - 1 - step;
            for (std::size_t bi = 0; bi < B; ++bi) {
                const std::size_t col = t * B + bi;
                for (std::size_t k = 0; k < H; ++k) {
                    const double dht = dh(k, bi) + self.grad[(bi * H + k) * T + t];
                    const double r = (*r_s)(k, col), z = (*z_s)(k, col), n = (*n_s)(k, col);
                    const double hn = (*hn_s)(k, col), hp = (*hprev_s)(k, col);
                    const double dn = dht * (1.0 - z);
                    const double dz = dht * (hp - n);
                    const double dn_pre = dn * (1.0 - n * n);
                    const double dr = dn_pre * hn;
                    const double dr_pre = dr * r * (1.0 - r);
                    const double dz_pre = dz * z * (1.0 - z);
                    dgi(k, col) = dr_pre;
                    dgi(H + k, col) = dz_pre;
                    dgi(2 * H + k, col) = dn_pre;
                    dgh(k, bi) = dr_pre;
                    dgh(H + k, bi) = dz_pre;
                    dgh(2 * H + k, bi) = dn_pre * r;
                    dh(k, bi) = dht * z;
                    hp_block(k, bi) = hp;
                }
            }
            dwhh.noalias() += dgh * hp_block.transpose();
            dbhh += dgh.rowwise().sum();
            dh.noalias() += whh.transpose() * dgh;
        }
        if (wants_grad(w_hh)) {
            MapR d(w_hh->grad_buffer().data(), 3 * H, H);
            d += dwhh;
        }
        if (wants_grad(b_hh)) {
            Eigen::Map<Eigen::VectorXd> d(b_hh->grad_buffer().data(), 3 * H);
            d += dbhh;
        }
        if (wants_grad(w_ih)) {
            MapR d(w_ih->grad_buffer().data(), 3 * H, in);
            d.noalias() += dgi * xall->transpose();
        }
        if (wants_grad(b_ih)) {
            Eigen::Map<Eigen::VectorXd> d(b_ih->grad_buffer().data(), 3 * H);
            d += dgi.rowwise().sum();
        }
        if (wants_grad(x)) {
            RMat dx = wih.transpose() * dgi;
            double* dxv = x->grad_buffer().data();
            for (std::size_t bi = 0; bi < B; ++bi)
                for (std::size_t i = 0; i < in; ++i)
                    for (std::size_t t = 0; t < T; ++t) dxv[(bi * in + i) * T + t] += dx(i, t * B + bi);
        }
    });
}

// ---------------------------------------------------------------------------
// embeddings and losses

Var l2_normalize(const Var& x) {
    require_rank(x, 2, "l2_normalize");
    const std::size_t N = x->value.dim(0), D = x->value.dim(1);
    Tensor out(x->value.shape());
    std::vector<double> norms(N);
    for (std::size_t r = 0; r < N; ++r) {
        double ss = 0.0;
        for (std::size_t j = 0; j < D; ++j) ss += x->value[r * D + j] * x->value[r * D + j];
        norms[r] = std::max(std::sqrt(ss), 1e-12);
        for (std::size_t j = 0; j < D; ++j) out[r * D + j] = x->value[r * D + j] / norms[r];
    }
    Tensor saved = out;
    return make_result(std::move(out), {x}, [x, saved = std::move(saved), norms = std::move(norms), N, D](Node& self) {
        double* dx = x->grad_buffer().data();
        for (std::size_t r = 0; r < N; ++r) {
            double dot = 0.0;
            for (std::size_t j = 0; j < D; ++j) dot += saved[r * D + j] * self.grad[r * D + j];
            for (std::size_t j = 0; j < D; ++j) {
                dx[r * D + j] += (self.grad[r * D + j] - saved[r * D + j] * dot) / norms[r];
            }
        }
    });
}

namespace kernels {

double pearson(const double* a, const double* b, std::size_t n) {
    if (n < 2) return 0.0;
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= static_cast<double>(n);
    mb /= static_cast<double>(n);
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - ma, db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa <= 0.0 || sbb <= 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

CombinedLossValue combined_loss(const double* prediction, const double* target, std::size_t rows,
                                std::size_t samples, double lambda, double* grad) {
    if (samples < 2) throw std::invalid_argument("combined_loss: need at least two samples per channel");
    const std::size_t total = rows * samples;
    CombinedLossValue v;
    double se = 0.0;
    for (std::size_t i = 0; i < total; ++i) {
        const double d = prediction[i] - target[i];
        se += d * d;
    }
    v.mse = se / static_cast<double>(total);
    if (grad) {
        for (std::size_t i = 0; i < total; ++i) grad[i] = 2.0 * (prediction[i] - target[i]) / static_cast<double>(total);
    }
    double rsum = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* a = prediction + r * samples;
        const double* y = target + r * samples;
        double ma = 0.0, my = 0.0;
        for (std::size_t t = 0; t < samples; ++t) {
            ma += a[t];
            my += y[t];
        }
        ma /= static_cast<double>(samples);
        my /= static_cast<double>(samples);
        double say = 0.0, saa = 0.0, syy = 0.0;
        for (std::size_t t = 0; t < samples; ++t) {
            const double da = a[t] - ma, dy = y[t] - my;
            say += da * dy;
            saa += da * da;
            syy += dy * dy;
        }
        if (saa <= 0.0 || syy <= 0.0) continue;
        const double norm_a = std::sqrt(saa), norm_y = std::sqrt(syy);
        const double r_val = say / (norm_a * norm_y);
        rsum += r_val;
        if (grad && lambda != 0.0) {
            const double coef = -lambda / static_cast<double>(rows);
            double* g = grad + r * samples;
            for (std::size_t t = 0; t < samples; ++t) {
                const double da = a[t] - ma, dy = y[t] - my;
                g[t] += coef * (dy / (norm_a * norm_y) - r_val * da / saa);
            }
        }
    }
    v.mean_r = rsum / static_cast<double>(rows);
    v.loss = v.mse + lambda * (1.0 - v.mean_r);
    return v;
}

double nt_xent(const double* meg, const double* word, std::size_t batch, std::size_t dim,
               double temperature, double* grad_meg, double* grad_word) {
    if (!(temperature > 0.0)) throw std::invalid_argument("nt_xent: temperature must be positive");
    CMapR zm(meg, batch, dim);
    CMapR zw(word, batch, dim);
    RMat s = (zm * zw.transpose()) / temperature;
    RMat prow(batch, batch), pcol(batch, batch);
    double loss_rows = 0.0, loss_cols = 0.0;
    for (std::size_t i = 0; i < batch; ++i) {
        const double mx = s.row(i).maxCoeff();
        prow.row(i) = (s.row(i).array() - mx).exp();
        const double z = prow.row(i).sum();
        prow.row(i) /= z;
        loss_rows += -(s(i, i) - mx - std::log(z));
    }
    for (std::size_t j = 0; j < batch; ++j) {
        const double mx = s.col(j).maxCoeff();
        pcol.col(j) = (s.col(j).array() - mx).exp();
        const double z = pcol.col(j).sum();
        pcol.col(j) /= z;
        loss_cols += -(s(j, j) - mx - std::log(z));
    }
    const double nb = static_cast<double>(batch);
    const double loss = 0.5 * (loss_rows / nb + loss_cols / nb);
    if (grad_meg || grad_word) {
        RMat ds = (prow + pcol) * (0.5 / nb);
        ds.diagonal().array() -= 1.0 / nb;
        if (grad_meg) {
            MapR gm(grad_meg, batch, dim);
            gm.noalias() = ds * zw / temperature;
        }
        if (grad_word) {
            MapR gw(grad_word, batch, dim);
            gw.noalias() = ds.transpose() * zm / temperature;
        }
    }
    return loss;
}

}  // namespace kernels

Var combined_loss(const Var& prediction, const Tensor& target, double lambda) {
    if (prediction->value.shape() != target.shape()) {
        throw std::invalid_argument("combined_loss: prediction " + shape_string(prediction->value.shape()) +
                                    " vs target " + shape_string(target.shape()));
    }
    const std::size_t samples = target.shape().back();
    const std::size_t rows = target.size() / samples;
    Tensor grad(target.shape());
    const auto v = kernels::combined_loss(prediction->value.data(), target.data(), rows, samples, lambda,
                                          grad.data());
    return make_result(Tensor({1}, {v.loss}), {prediction}, [prediction, grad = std::move(grad)](Node& self) {
        double* d = prediction->grad_buffer().data();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < grad.size(); ++i) d[i] += g * grad[i];
    });
}

Var nt_xent(const Var& meg, const Var& word, double temperature) {
    require_rank(meg, 2, "nt_xent");
    require(meg->value.shape() == word->value.shape(), "nt_xent: batch shapes differ");
    const std::size_t B = meg->value.dim(0), D = meg->value.dim(1);
    Tensor gm({B, D}), gw({B, D});
    const double loss = kernels::nt_xent(meg->value.data(), word->value.data(), B, D, temperature,
                                         gm.data(), gw.data());
    return make_result(Tensor({1}, {loss}), {meg, word},
                       [meg, word, gm = std::move(gm), gw = std::move(gw)](Node& self) {
        const double g = self.grad[0];
        if (wants_grad(meg)) {
            double* d = meg->grad_buffer().data();
            for (std::size_t i = 0; i < gm.size(); ++i) d[i] += g * gm[i];
        }
        if (wants_grad(word)) {
            double* d = word->grad_buffer().data();
            for (std::size_t i = 0; i < gw.size(); ++i) d[i] += g * gw[i];
        }
    });
}

Var weighted_sum(const Var& x, const Tensor& weights) {
    require(weights.size() == x->value.size(), "weighted_sum: weight count mismatch");
    double acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) acc += x->value[i] * weights[i];
    return make_result(Tensor({1}, {acc}), {x}, [x, weights](Node& self) {
        double* d = x->grad_buffer().data();
        for (std::size_t i = 0; i < weights.size(); ++i) d[i] += self.grad[0] * weights[i];
    });
}

}  // namespace isd::nn

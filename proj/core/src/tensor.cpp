#include "aria/tensor.hpp"

#include <cmath>
#include <sstream>

namespace aria {

std::string shape_str(const std::vector<int>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

bool all_finite(const Tensor& t) {
    for (float v : t.data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

void check_image(const ImageTensor& img, int expect_h, int expect_w) {
    if (img.rank() != 3 || img.dim(0) != 3) {
        throw std::invalid_argument("image: expected shape [3,H,W], got " + shape_str(img.shape));
    }
    if (expect_h > 0 && (img.dim(1) != expect_h || img.dim(2) != expect_w)) {
        throw std::invalid_argument("image: expected [3," + std::to_string(expect_h) + "," +
                                    std::to_string(expect_w) + "], got " + shape_str(img.shape));
    }
    for (float v : img.data) {
        if (!(v >= 0.0f && v <= 1.0f)) {
            throw std::invalid_argument("image: pixel value outside [0,1]");
        }
    }
}

namespace kernels {

template <typename T>
TensorT<T> conv2d(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b, int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4 || b.rank() != 1) {
        throw std::invalid_argument("conv2d: expected x[Ci,H,W], w[Co,Ci,k,k], b[Co]");
    }
    const int ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    if (w.dim(1) != ci || w.dim(3) != k || b.dim(0) != co) {
        throw std::invalid_argument("conv2d: kernel/bias shape mismatch, x=" + shape_str(x.shape) +
                                    " w=" + shape_str(w.shape));
    }
    if (stride < 1 || k > h + 2 * pad || k > ww + 2 * pad) {
        throw std::invalid_argument("conv2d: kernel larger than padded input or stride < 1");
    }
    const int oh = (h + 2 * pad - k) / stride + 1;
    const int ow = (ww + 2 * pad - k) / stride + 1;
    TensorT<T> y({co, oh, ow});
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = static_cast<double>(b[static_cast<size_t>(o)]);
                const int iy0 = oy * stride - pad;
                const int ix0 = ox * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const size_t xrow = (static_cast<size_t>(c) * h + iy) * ww;
                        const size_t wrow = ((static_cast<size_t>(o) * ci + c) * k + ky) * k;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= ww) continue;
                            acc += static_cast<double>(x.data[xrow + ix]) *
                                   static_cast<double>(w.data[wrow + kx]);
                        }
                    }
                }
                y.at3(o, oy, ox) = static_cast<T>(acc);
            }
        }
    }
    return y;
}

void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& gy, int stride, int pad,
                     Tensor* gx, Tensor* gw, Tensor* gb) {
    const int ci = x.dim(0), h = x.dim(1), ww = x.dim(2);
    const int co = w.dim(0), k = w.dim(2);
    const int oh = gy.dim(1), ow = gy.dim(2);
    std::vector<double> ax(x.numel(), 0.0), aw(w.numel(), 0.0), ab(static_cast<size_t>(co), 0.0);
    for (int o = 0; o < co; ++o) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const double g = gy.at3(o, oy, ox);
                ab[static_cast<size_t>(o)] += g;
                const int iy0 = oy * stride - pad;
                const int ix0 = ox * stride - pad;
                for (int c = 0; c < ci; ++c) {
                    for (int ky = 0; ky < k; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const size_t xrow = (static_cast<size_t>(c) * h + iy) * ww;
                        const size_t wrow = ((static_cast<size_t>(o) * ci + c) * k + ky) * k;
                        for (int kx = 0; kx < k; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= ww) continue;
                            ax[xrow + ix] += g * w.data[wrow + kx];
                            aw[wrow + kx] += g * x.data[xrow + ix];
                        }
                    }
                }
            }
        }
    }
    if (gx) for (size_t i = 0; i < ax.size(); ++i) gx->data[i] += static_cast<float>(ax[i]);
    if (gw) for (size_t i = 0; i < aw.size(); ++i) gw->data[i] += static_cast<float>(aw[i]);
    if (gb) for (size_t i = 0; i < ab.size(); ++i) gb->data[i] += static_cast<float>(ab[i]);
}

template <typename T>
TensorT<T> dense(const TensorT<T>& x, const TensorT<T>& w, const TensorT<T>& b) {
    if (x.rank() != 1 || w.rank() != 2 || b.rank() != 1) {
        throw std::invalid_argument("dense: expected x[n], w[m,n], b[m]");
    }
    const int n = x.dim(0), m = w.dim(0);
    if (w.dim(1) != n || b.dim(0) != m) {
        throw std::invalid_argument("dense: shape mismatch, x=" + shape_str(x.shape) +
                                    " w=" + shape_str(w.shape));
    }
    TensorT<T> y({m});
    for (int i = 0; i < m; ++i) {
        double acc = static_cast<double>(b[static_cast<size_t>(i)]);
        const size_t row = static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            acc += static_cast<double>(w.data[row + j]) * static_cast<double>(x.data[static_cast<size_t>(j)]);
        }
        y[static_cast<size_t>(i)] = static_cast<T>(acc);
    }
    return y;
}

void dense_backward(const Tensor& x, const Tensor& w, const Tensor& gy,
                    Tensor* gx, Tensor* gw, Tensor* gb) {
    const int n = x.dim(0), m = w.dim(0);
    if (gx) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int i = 0; i < m; ++i) {
                acc += static_cast<double>(gy[static_cast<size_t>(i)]) *
                       static_cast<double>(w.data[static_cast<size_t>(i) * n + j]);
            }
            gx->data[static_cast<size_t>(j)] += static_cast<float>(acc);
        }
    }
    if (gw) {
        for (int i = 0; i < m; ++i) {
            const float g = gy[static_cast<size_t>(i)];
            for (int j = 0; j < n; ++j) {
                gw->data[static_cast<size_t>(i) * n + j] += g * x[static_cast<size_t>(j)];
            }
        }
    }
    if (gb) {
        for (int i = 0; i < m; ++i) gb->data[static_cast<size_t>(i)] += gy[static_cast<size_t>(i)];
    }
}

template <typename T>
TensorT<T> avgpool2d(const TensorT<T>& x, int window) {
    if (x.rank() != 3) throw std::invalid_argument("avgpool2d: expected rank-3 input");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    if (window < 1 || h % window != 0 || w % window != 0) {
        throw std::invalid_argument("avgpool2d: H and W must be divisible by the window");
    }
    const int oh = h / window, ow = w / window;
    const double inv = 1.0 / (static_cast<double>(window) * window);
    TensorT<T> y({c, oh, ow});
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int dy = 0; dy < window; ++dy) {
                    for (int dx = 0; dx < window; ++dx) {
                        acc += static_cast<double>(x.at3(ch, oy * window + dy, ox * window + dx));
                    }
                }
                y.at3(ch, oy, ox) = static_cast<T>(acc * inv);
            }
        }
    }
    return y;
}

void avgpool2d_backward(const Tensor& gy, int window, Tensor* gx) {
    const int c = gy.dim(0), oh = gy.dim(1), ow = gy.dim(2);
    const float inv = 1.0f / (static_cast<float>(window) * window);
    for (int ch = 0; ch < c; ++ch) {
        for (int oy = 0; oy < oh; ++oy) {
            for (int ox = 0; ox < ow; ++ox) {
                const float g = gy.at3(ch, oy, ox) * inv;
                for (int dy = 0; dy < window; ++dy) {
                    for (int dx = 0; dx < window; ++dx) {
                        gx->at3(ch, oy * window + dy, ox * window + dx) += g;
                    }
                }
            }
        }
    }
}

template <typename T>
TensorT<T> global_avgpool(const TensorT<T>& x) {
    if (x.rank() != 3) throw std::invalid_argument("global_avgpool: expected rank-3 input");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    const double inv = 1.0 / (static_cast<double>(h) * w);
    TensorT<T> y({c});
    for (int ch = 0; ch < c; ++ch) {
        double acc = 0.0;
        const size_t base = static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) acc += static_cast<double>(x.data[base + i]);
        y[static_cast<size_t>(ch)] = static_cast<T>(acc * inv);
    }
    return y;
}

void global_avgpool_backward(const Tensor& gy, const std::vector<int>& x_shape, Tensor* gx) {
    const int c = x_shape[0], h = x_shape[1], w = x_shape[2];
    const float inv = 1.0f / (static_cast<float>(h) * w);
    for (int ch = 0; ch < c; ++ch) {
        const float g = gy[static_cast<size_t>(ch)] * inv;
        const size_t base = static_cast<size_t>(ch) * h * w;
        for (int i = 0; i < h * w; ++i) gx->data[base + i] += g;
    }
}

template <typename T>
static double l2_norm_acc(const TensorT<T>& v) {
    double acc = 0.0;
    for (T x : v.data) acc += static_cast<double>(x) * static_cast<double>(x);
    return std::sqrt(acc);
}

template <typename T>
TensorT<T> l2_normalize(const TensorT<T>& v) {
    const double n = std::max(l2_norm_acc(v), 1e-12);
    TensorT<T> y(v.shape);
    for (size_t i = 0; i < v.data.size(); ++i) {
        y.data[i] = static_cast<T>(static_cast<double>(v.data[i]) / n);
    }
    return y;
}

void l2_normalize_backward(const Tensor& v, const Tensor& gy, Tensor* gv) {
    const double n = std::max(l2_norm_acc(v), 1e-12);
    double vdotg = 0.0;
    for (size_t i = 0; i < v.data.size(); ++i) {
        vdotg += static_cast<double>(v.data[i]) * static_cast<double>(gy.data[i]);
    }
    const bool guarded = l2_norm_acc(v) < 1e-12;
    const double n3 = n * n * n;
    for (size_t i = 0; i < v.data.size(); ++i) {
        double g = static_cast<double>(gy.data[i]) / n;
        if (!guarded) g -= static_cast<double>(v.data[i]) * vdotg / n3;
        gv->data[i] += static_cast<float>(g);
    }
}

// Half-pixel-center source coordinate for output index i.
static inline double src_coord(int i, int in_size, int out_size) {
    return (static_cast<double>(i) + 0.5) * static_cast<double>(in_size) / out_size - 0.5;
}

template <typename T>
TensorT<T> resize_bilinear(const TensorT<T>& x, int out_h, int out_w) {
    if (x.rank() != 3) throw std::invalid_argument("resize_bilinear: expected rank-3 input");
    if (out_h < 1 || out_w < 1) throw std::invalid_argument("resize_bilinear: output dims must be >= 1");
    const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
    TensorT<T> y({c, out_h, out_w});
    for (int oy = 0; oy < out_h; ++oy) {
        const double sy = src_coord(oy, h, out_h);
        int y0 = static_cast<int>(std::floor(sy));
        const double fy = sy - y0;
        int y1 = y0 + 1;
        y0 = std::min(std::max(y0, 0), h - 1);
        y1 = std::min(std::max(y1, 0), h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const double sx = src_coord(ox, w, out_w);
            int x0 = static_cast<int>(std::floor(sx));
            const double fx = sx - x0;
            int x1 = x0 + 1;
            x0 = std::min(std::max(x0, 0), w - 1);
            x1 = std::min(std::max(x1, 0), w - 1);
            for (int ch = 0; ch < c; ++ch) {
                const double v00 = x.at3(ch, y0, x0), v01 = x.at3(ch, y0, x1);
                const double v10 = x.at3(ch, y1, x0), v11 = x.at3(ch, y1, x1);
                const double top = v00 * (1.0 - fx) + v01 * fx;
                const double bot = v10 * (1.0 - fx) + v11 * fx;
                y.at3(ch, oy, ox) = static_cast<T>(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    return y;
}

void resize_bilinear_backward(const Tensor& gy, int in_h, int in_w, Tensor* gx) {
    const int c = gy.dim(0), out_h = gy.dim(1), out_w = gy.dim(2);
    for (int oy = 0; oy < out_h; ++oy) {
        const double sy = src_coord(oy, in_h, out_h);
        int y0 = static_cast<int>(std::floor(sy));
        const double fy = sy - y0;
        int y1 = y0 + 1;
        y0 = std::min(std::max(y0, 0), in_h - 1);
        y1 = std::min(std::max(y1, 0), in_h - 1);
        for (int ox = 0; ox < out_w; ++ox) {
            const double sx = src_coord(ox, in_w, out_w);
            int x0 = static_cast<int>(std::floor(sx));
            const double fx = sx - x0;
            int x1 = x0 + 1;
            x0 = std::min(std::max(x0, 0), in_w - 1);
            x1 = std::min(std::max(x1, 0), in_w - 1);
            for (int ch = 0; ch < c; ++ch) {
                const double g = gy.at3(ch, oy, ox);
                gx->at3(ch, y0, x0) += static_cast<float>(g * (1.0 - fx) * (1.0 - fy));
                gx->at3(ch, y0, x1) += static_cast<float>(g * fx * (1.0 - fy));
                gx->at3(ch, y1, x0) += static_cast<float>(g * (1.0 - fx) * fy);
                gx->at3(ch, y1, x1) += static_cast<float>(g * fx * fy);
            }
        }
    }
}

template <typename T>
T cosine_similarity(const TensorT<T>& u, const TensorT<T>& v) {
    if (u.numel() != v.numel()) {
        throw std::invalid_argument("cosine_similarity: length mismatch");
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.data.size(); ++i) {
        const double a = u.data[i], b = v.data[i];
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    const double denom = std::max(std::sqrt(nu), 1e-12) * std::max(std::sqrt(nv), 1e-12);
    return static_cast<T>(dot / denom);
}

void cosine_similarity_backward(const Tensor& u, const Tensor& v, float gout, Tensor* gu, Tensor* gv) {
    double dot = 0.0, nu2 = 0.0, nv2 = 0.0;
    for (size_t i = 0; i < u.data.size(); ++i) {
        const double a = u.data[i], b = v.data[i];
        dot += a * b;
        nu2 += a * a;
        nv2 += b * b;
    }
    const double nu = std::max(std::sqrt(nu2), 1e-12);
    const double nv = std::max(std::sqrt(nv2), 1e-12);
    const double c = dot / (nu * nv);
    for (size_t i = 0; i < u.data.size(); ++i) {
        const double a = u.data[i], b = v.data[i];
        if (gu) gu->data[i] += static_cast<float>(gout * (b / (nu * nv) - c * a / (nu * nu)));
        if (gv) gv->data[i] += static_cast<float>(gout * (a / (nu * nv) - c * b / (nv * nv)));
    }
}

// Pairwise-cosine temperature-scaled batch loss over 2N stacked rows, where
// row i and row N+i form a positive pair. Log-sum-exp uses a max shift.
template <typename T>
T nt_xent(const TensorT<T>& z, T tau) {
    if (z.rank() != 2) throw std::invalid_argument("nt_xent: expected [2N,D] embeddings");
    const int rows = z.dim(0), d = z.dim(1);
    if (rows < 2 || rows % 2 != 0) throw std::invalid_argument("nt_xent: need an even number >= 2 of rows");
    if (!(tau > T(0))) throw std::invalid_argument("nt_xent: temperature must be positive");
    const int n = rows / 2;
    std::vector<double> norms(static_cast<size_t>(rows));
    for (int a = 0; a < rows; ++a) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            const double x = z.data[static_cast<size_t>(a) * d + j];
            acc += x * x;
        }
        norms[static_cast<size_t>(a)] = std::max(std::sqrt(acc), 1e-12);
    }
    std::vector<double> sims(static_cast<size_t>(rows) * rows, 0.0);
    for (int a = 0; a < rows; ++a) {
        for (int k = a + 1; k < rows; ++k) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) {
                dot += static_cast<double>(z.data[static_cast<size_t>(a) * d + j]) *
                       static_cast<double>(z.data[static_cast<size_t>(k) * d + j]);
            }
            const double c = dot / (norms[static_cast<size_t>(a)] * norms[static_cast<size_t>(k)]);
            sims[static_cast<size_t>(a) * rows + k] = c;
            sims[static_cast<size_t>(k) * rows + a] = c;
        }
    }
    const double inv_tau = 1.0 / static_cast<double>(tau);
    double loss = 0.0;
    for (int a = 0; a < rows; ++a) {
        const int pos = (a + n) % rows;
        double mx = -1e300;
        for (int k = 0; k < rows; ++k) {
            if (k == a) continue;
            mx = std::max(mx, sims[static_cast<size_t>(a) * rows + k] * inv_tau);
        }
        double denom = 0.0;
        for (int k = 0; k < rows; ++k) {
            if (k == a) continue;
            denom += std::exp(sims[static_cast<size_t>(a) * rows + k] * inv_tau - mx);
        }
        const double lse = mx + std::log(denom);
        loss += -(sims[static_cast<size_t>(a) * rows + pos] * inv_tau) + lse;
    }
    return static_cast<T>(loss / rows);
}

void nt_xent_backward(const Tensor& z, float tau, float gout, Tensor* gz) {
    const int rows = z.dim(0), d = z.dim(1);
    const int n = rows / 2;
    std::vector<double> norms(static_cast<size_t>(rows));
    for (int a = 0; a < rows; ++a) {
        double acc = 0.0;
        for (int j = 0; j < d; ++j) {
            const double x = z.data[static_cast<size_t>(a) * d + j];
            acc += x * x;
        }
        norms[static_cast<size_t>(a)] = std::max(std::sqrt(acc), 1e-12);
    }
    std::vector<double> sims(static_cast<size_t>(rows) * rows, 0.0);
    for (int a = 0; a < rows; ++a) {
        for (int k = a + 1; k < rows; ++k) {
            double dot = 0.0;
            for (int j = 0; j < d; ++j) {
                dot += static_cast<double>(z.data[static_cast<size_t>(a) * d + j]) *
                       static_cast<double>(z.data[static_cast<size_t>(k) * d + j]);
            }
            const double c = dot / (norms[static_cast<size_t>(a)] * norms[static_cast<size_t>(k)]);
            sims[static_cast<size_t>(a) * rows + k] = c;
            sims[static_cast<size_t>(k) * rows + a] = c;
        }
    }
    const double inv_tau = 1.0 / static_cast<double>(tau);
    // dL/ds[a][k] for k != a: (softmax over the anchor's row minus the
    // positive indicator) / (2N * tau)
    std::vector<double> ws(static_cast<size_t>(rows) * rows, 0.0);
    for (int a = 0; a < rows; ++a) {
        const int pos = (a + n) % rows;
        double mx = -1e300;
        for (int k = 0; k < rows; ++k) {
            if (k == a) continue;
            mx = std::max(mx, sims[static_cast<size_t>(a) * rows + k] * inv_tau);
        }
        double denom = 0.0;
        for (int k = 0; k < rows; ++k) {
            if (k == a) continue;
            denom += std::exp(sims[static_cast<size_t>(a) * rows + k] * inv_tau - mx);
        }
        for (int k = 0; k < rows; ++k) {
            if (k == a) continue;
            const double p = std::exp(sims[static_cast<size_t>(a) * rows + k] * inv_tau - mx) / denom;
            ws[static_cast<size_t>(a) * rows + k] =
                (p - (k == pos ? 1.0 : 0.0)) * inv_tau / rows;
        }
    }
    std::vector<double> acc(z.numel(), 0.0);
    for (int a = 0; a < rows; ++a) {
        for (int k = 0; k < rows; ++k) {
            if (k == a) continue;
            const double wgt = ws[static_cast<size_t>(a) * rows + k];
            if (wgt == 0.0) continue;
            const double na = norms[static_cast<size_t>(a)], nk = norms[static_cast<size_t>(k)];
            const double c = sims[static_cast<size_t>(a) * rows + k];
            for (int j = 0; j < d; ++j) {
                const double za = z.data[static_cast<size_t>(a) * d + j];
                const double zk = z.data[static_cast<size_t>(k) * d + j];
                acc[static_cast<size_t>(a) * d + j] += wgt * (zk / (na * nk) - c * za / (na * na));
                acc[static_cast<size_t>(k) * d + j] += wgt * (za / (na * nk) - c * zk / (nk * nk));
            }
        }
    }
    for (size_t i = 0; i < acc.size(); ++i) {
        gz->data[i] += static_cast<float>(acc[i] * gout);
    }
}

template TensorT<float> conv2d<float>(const TensorT<float>&, const TensorT<float>&, const TensorT<float>&, int, int);
template TensorT<double> conv2d<double>(const TensorT<double>&, const TensorT<double>&, const TensorT<double>&, int, int);
template TensorT<float> dense<float>(const TensorT<float>&, const TensorT<float>&, const TensorT<float>&);
template TensorT<double> dense<double>(const TensorT<double>&, const TensorT<double>&, const TensorT<double>&);
template TensorT<float> avgpool2d<float>(const TensorT<float>&, int);
template TensorT<double> avgpool2d<double>(const TensorT<double>&, int);
template TensorT<float> global_avgpool<float>(const TensorT<float>&);
template TensorT<double> global_avgpool<double>(const TensorT<double>&);
template TensorT<float> l2_normalize<float>(const TensorT<float>&);
template TensorT<double> l2_normalize<double>(const TensorT<double>&);
template TensorT<float> resize_bilinear<float>(const TensorT<float>&, int, int);
template TensorT<double> resize_bilinear<double>(const TensorT<double>&, int, int);
template float cosine_similarity<float>(const TensorT<float>&, const TensorT<float>&);
template double cosine_similarity<double>(const TensorT<double>&, const TensorT<double>&);
template float nt_xent<float>(const TensorT<float>&, float);
template double nt_xent<double>(const TensorT<double>&, double);

}  // namespace kernels
}  // namespace aria

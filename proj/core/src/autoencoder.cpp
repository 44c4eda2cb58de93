#include <algorithm>
#include <cmath>
#include <numeric>

#include "rpom/io.hpp"
#include "rpom/neural.hpp"

namespace rpom::neural {

namespace {

struct Ctx {
    bool training = false;
    bool bn_frozen = false;
    Rng* rng = nullptr;
};

class Layer {
public:
    virtual ~Layer() = default;
    virtual Tensor forward(const Tensor& x, const Ctx& ctx) = 0;
    virtual Tensor backward(const Tensor& gy) = 0;
    virtual void param_views(std::vector<std::span<double>>& out) { (void)out; }
    virtual void grad_views(std::vector<std::span<double>>& out) { (void)out; }
    /// Persisted tensors: learnables plus any running statistics.
    virtual void state_views(std::vector<std::span<double>>& out) { param_views(out); }
    virtual std::unique_ptr<Layer> clone() const = 0;
};

double glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    return rng.uniform(-a, a);
}

class Conv2d : public Layer {
public:
    Conv2d(int cin, int cout, Rng& rng) : cin_(cin), cout_(cout) {
        w_.resize(static_cast<std::size_t>(cout) * cin * 9);
        b_.assign(cout, 0.0);
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        std::size_t fan_in = static_cast<std::size_t>(cin) * 9;
        std::size_t fan_out = static_cast<std::size_t>(cout) * 9;
        for (double& v : w_) v = glorot(fan_in, fan_out, rng);
    }

    Tensor forward(const Tensor& x, const Ctx&) override {
        require(x.c == cin_, Errc::ShapeMismatch, "conv: channel mismatch");
        x_ = x;
        const int h = x.h, w = x.w, n = x.n;
        Tensor y(n, cout_, h, w);
        for (int in = 0; in < n; ++in) {
            const double* xi = x.item(in);
            double* yi = y.item(in);
            for (int co = 0; co < cout_; ++co) {
                double* ymap = yi + static_cast<std::size_t>(co) * h * w;
                double bias = b_[co];
                for (int p = 0; p < h * w; ++p) ymap[p] = bias;
                for (int ci = 0; ci < cin_; ++ci) {
                    const double* xmap = xi + static_cast<std::size_t>(ci) * h * w;
                    const double* k = &w_[(static_cast<std::size_t>(co) * cin_ + ci) * 9];
                    for (int ki = -1; ki <= 1; ++ki) {
                        const double k0 = k[(ki + 1) * 3 + 0];
                        const double k1 = k[(ki + 1) * 3 + 1];
                        const double k2 = k[(ki + 1) * 3 + 2];
                        int i0 = std::max(0, -ki), i1 = std::min(h, h - ki);
                        for (int i = i0; i < i1; ++i) {
                            const double* xrow = xmap + static_cast<std::size_t>(i + ki) * w;
                            double* yrow = ymap + static_cast<std::size_t>(i) * w;
                            if (w == 1) {
                                yrow[0] += k1 * xrow[0];
                                continue;
                            }
                            // all three kernel columns in one pass over the row
                            yrow[0] += k1 * xrow[0] + k2 * xrow[1];
                            for (int j = 1; j < w - 1; ++j)
                                yrow[j] += k0 * xrow[j - 1] + k1 * xrow[j] + k2 * xrow[j + 1];
                            yrow[w - 1] += k0 * xrow[w - 2] + k1 * xrow[w - 1];
                        }
                    }
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const int h = x_.h, w = x_.w, n = x_.n;
        Tensor gx(n, cin_, h, w);
        for (int in = 0; in < n; ++in) {
            const double* xi = x_.item(in);
            const double* gyi = gy.item(in);
            double* gxi = gx.item(in);
            for (int co = 0; co < cout_; ++co) {
                const double* gmap = gyi + static_cast<std::size_t>(co) * h * w;
                double gbsum = 0.0;
                for (int p = 0; p < h * w; ++p) gbsum += gmap[p];
                gb_[co] += gbsum;
                for (int ci = 0; ci < cin_; ++ci) {
                    const double* xmap = xi + static_cast<std::size_t>(ci) * h * w;
                    double* gxmap = gxi + static_cast<std::size_t>(ci) * h * w;
                    const double* k = &w_[(static_cast<std::size_t>(co) * cin_ + ci) * 9];
                    double* gk = &gw_[(static_cast<std::size_t>(co) * cin_ + ci) * 9];
                    for (int ki = -1; ki <= 1; ++ki) {
                        const double k0 = k[(ki + 1) * 3 + 0];
                        const double k1 = k[(ki + 1) * 3 + 1];
                        const double k2 = k[(ki + 1) * 3 + 2];
                        double g0 = 0.0, g1 = 0.0, g2 = 0.0;
                        int i0 = std::max(0, -ki), i1 = std::min(h, h - ki);
                        for (int i = i0; i < i1; ++i) {
                            const double* xrow = xmap + static_cast<std::size_t>(i + ki) * w;
                            double* gxrow = gxmap + static_cast<std::size_t>(i + ki) * w;
                            const double* grow = gmap + static_cast<std::size_t>(i) * w;
                            if (w == 1) {
                                g1 += xrow[0] * grow[0];
                                gxrow[0] += k1 * grow[0];
                                continue;
                            }
                            // kernel-weight dots and the flipped-kernel
                            // input gradient, one pass per row
                            g1 += xrow[0] * grow[0];
                            g2 += xrow[1] * grow[0];
                            gxrow[0] += k1 * grow[0] + k0 * grow[1];
                            for (int j = 1; j < w - 1; ++j) {
                                double g = grow[j];
                                g0 += xrow[j - 1] * g;
                                g1 += xrow[j] * g;
                                g2 += xrow[j + 1] * g;
                                gxrow[j] += k2 * grow[j - 1] + k1 * g + k0 * grow[j + 1];
                            }
                            double gl = grow[w - 1];
                            g0 += xrow[w - 2] * gl;
                            g1 += xrow[w - 1] * gl;
                            gxrow[w - 1] += k2 * grow[w - 2] + k1 * gl;
                        }
                        gk[(ki + 1) * 3 + 0] += g0;
                        gk[(ki + 1) * 3 + 1] += g1;
                        gk[(ki + 1) * 3 + 2] += g2;
                    }
                }
            }
        }
        return gx;
    }

    void param_views(std::vector<std::span<double>>& out) override {
        out.emplace_back(w_);
        out.emplace_back(b_);
    }
    void grad_views(std::vector<std::span<double>>& out) override {
        out.emplace_back(gw_);
        out.emplace_back(gb_);
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2d>(*this); }

private:
    int cin_, cout_;
    std::vector<double> w_, b_, gw_, gb_;
    Tensor x_;
};

class BatchNorm2d : public Layer {
public:
    explicit BatchNorm2d(int c) : c_(c) {
        gamma_.assign(c, 1.0);
        beta_.assign(c, 0.0);
        running_mean_.assign(c, 0.0);
        running_var_.assign(c, 1.0);
        ggamma_.assign(c, 0.0);
        gbeta_.assign(c, 0.0);
    }

    Tensor forward(const Tensor& x, const Ctx& ctx) override {
        require(x.c == c_, Errc::ShapeMismatch, "batchnorm: channel mismatch");
        bool use_batch_stats = ctx.training && !ctx.bn_frozen;
        batch_mode_ = use_batch_stats;
        const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
        const double count = static_cast<double>(x.n) * plane;
        Tensor y = x;
        xhat_ = x;
        mean_.assign(c_, 0.0);
        var_.assign(c_, 0.0);

        for (int ch = 0; ch < c_; ++ch) {
            double mu, var;
            if (use_batch_stats) {
                double s = 0.0;
                for (int in = 0; in < x.n; ++in) {
                    const double* map = x.item(in) + plane * ch;
                    for (std::size_t p = 0; p < plane; ++p) s += map[p];
                }
                mu = s / count;
                double q = 0.0;
                for (int in = 0; in < x.n; ++in) {
                    const double* map = x.item(in) + plane * ch;
                    for (std::size_t p = 0; p < plane; ++p) q += (map[p] - mu) * (map[p] - mu);
                }
                var = q / count;
                running_mean_[ch] = (1.0 - momentum_) * running_mean_[ch] + momentum_ * mu;
                running_var_[ch] = (1.0 - momentum_) * running_var_[ch] + momentum_ * var;
            } else {
                mu = running_mean_[ch];
                var = running_var_[ch];
            }
            mean_[ch] = mu;
            var_[ch] = var;
            double inv = 1.0 / std::sqrt(var + eps_);
            for (int in = 0; in < x.n; ++in) {
                const double* map = x.item(in) + plane * ch;
                double* xh = xhat_.item(in) + plane * ch;
                double* ym = y.item(in) + plane * ch;
                for (std::size_t p = 0; p < plane; ++p) {
                    xh[p] = (map[p] - mu) * inv;
                    ym[p] = gamma_[ch] * xh[p] + beta_[ch];
                }
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        const std::size_t plane = static_cast<std::size_t>(gy.h) * gy.w;
        const double count = static_cast<double>(gy.n) * plane;
        Tensor gx(gy.n, gy.c, gy.h, gy.w);

        for (int ch = 0; ch < c_; ++ch) {
            double inv = 1.0 / std::sqrt(var_[ch] + eps_);
            double sum_gy = 0.0, sum_gy_xhat = 0.0;
            for (int in = 0; in < gy.n; ++in) {
                const double* g = gy.item(in) + plane * ch;
                const double* xh = xhat_.item(in) + plane * ch;
                for (std::size_t p = 0; p < plane; ++p) {
                    sum_gy += g[p];
                    sum_gy_xhat += g[p] * xh[p];
                }
            }
            ggamma_[ch] += sum_gy_xhat;
            gbeta_[ch] += sum_gy;

            if (batch_mode_) {
                // d/dx through the batch statistics.
                for (int in = 0; in < gy.n; ++in) {
                    const double* g = gy.item(in) + plane * ch;
                    const double* xh = xhat_.item(in) + plane * ch;
                    double* gxm = gx.item(in) + plane * ch;
                    for (std::size_t p = 0; p < plane; ++p) {
                        gxm[p] = gamma_[ch] * inv *
                                 (g[p] - sum_gy / count - xh[p] * sum_gy_xhat / count);
                    }
                }
            } else {
                for (int in = 0; in < gy.n; ++in) {
                    const double* g = gy.item(in) + plane * ch;
                    double* gxm = gx.item(in) + plane * ch;
                    for (std::size_t p = 0; p < plane; ++p) gxm[p] = gamma_[ch] * inv * g[p];
                }
            }
        }
        return gx;
    }

    void param_views(std::vector<std::span<double>>& out) override {
        out.emplace_back(gamma_);
        out.emplace_back(beta_);
    }
    void grad_views(std::vector<std::span<double>>& out) override {
        out.emplace_back(ggamma_);
        out.emplace_back(gbeta_);
    }
    void state_views(std::vector<std::span<double>>& out) override {
        param_views(out);
        out.emplace_back(running_mean_);
        out.emplace_back(running_var_);
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNorm2d>(*this); }

private:
    int c_;
    double momentum_ = 0.1;
    double eps_ = 1e-5;
    bool batch_mode_ = false;
    std::vector<double> gamma_, beta_, running_mean_, running_var_, ggamma_, gbeta_;
    std::vector<double> mean_, var_;
    Tensor xhat_;
};

class LeakyRelu : public Layer {
public:
    explicit LeakyRelu(double slope) : slope_(slope) {}
    Tensor forward(const Tensor& x, const Ctx&) override {
        x_ = x;
        Tensor y = x;
        for (double& v : y.v) v = v > 0.0 ? v : slope_ * v;
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.v.size(); ++i)
            gx.v[i] *= x_.v[i] > 0.0 ? 1.0 : slope_;
        return gx;
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<LeakyRelu>(*this); }

private:
    double slope_;
    Tensor x_;
};

class Tanh : public Layer {
public:
    Tensor forward(const Tensor& x, const Ctx&) override {
        y_ = x;
        for (double& v : y_.v) v = std::tanh(v);
        return y_;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= 1.0 - y_.v[i] * y_.v[i];
        return gx;
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Tanh>(*this); }

private:
    Tensor y_;
};

class Sigmoid : public Layer {
public:
    Tensor forward(const Tensor& x, const Ctx&) override {
        y_ = x;
        for (double& v : y_.v) v = 1.0 / (1.0 + std::exp(-v));
        return y_;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.v.size(); ++i)
            gx.v[i] *= y_.v[i] * (1.0 - y_.v[i]);
        return gx;
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Sigmoid>(*this); }

private:
    Tensor y_;
};

class MaxPool2 : public Layer {
public:
    Tensor forward(const Tensor& x, const Ctx&) override {
        require(x.h % 2 == 0 && x.w % 2 == 0, Errc::ShapeMismatch, "maxpool: odd spatial size");
        in_n_ = x.n; in_c_ = x.c; in_h_ = x.h; in_w_ = x.w;
        Tensor y(x.n, x.c, x.h / 2, x.w / 2);
        argmax_.assign(y.v.size(), 0);
        std::size_t o = 0;
        for (int in = 0; in < x.n; ++in) {
            for (int c = 0; c < x.c; ++c) {
                const double* map =
                    x.item(in) + static_cast<std::size_t>(c) * x.h * x.w;
                for (int i = 0; i < x.h; i += 2) {
                    for (int j = 0; j < x.w; j += 2, ++o) {
                        std::size_t base = static_cast<std::size_t>(i) * x.w + j;
                        std::size_t best = base;
                        double bv = map[base];
                        for (auto off : {std::size_t(1), std::size_t(x.w), std::size_t(x.w + 1)}) {
                            if (map[base + off] > bv) {
                                bv = map[base + off];
                                best = base + off;
                            }
                        }
                        y.v[o] = bv;
                        argmax_[o] = (static_cast<std::size_t>(in) * x.c + c) *
                                         static_cast<std::size_t>(x.h) * x.w + best;
                    }
                }
            }
        }
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(in_n_, in_c_, in_h_, in_w_);
        for (std::size_t o = 0; o < gy.v.size(); ++o) gx.v[argmax_[o]] += gy.v[o];
        return gx;
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<MaxPool2>(*this); }

private:
    int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
    std::vector<std::size_t> argmax_;
};

class UpsampleNearest2 : public Layer {
public:
    Tensor forward(const Tensor& x, const Ctx&) override {
        in_h_ = x.h;
        in_w_ = x.w;
        Tensor y(x.n, x.c, x.h * 2, x.w * 2);
        for (int in = 0; in < x.n; ++in)
            for (int c = 0; c < x.c; ++c) {
                const double* xm = x.item(in) + static_cast<std::size_t>(c) * x.h * x.w;
                double* ym = y.item(in) + static_cast<std::size_t>(c) * y.h * y.w;
                for (int i = 0; i < x.h; ++i)
                    for (int j = 0; j < x.w; ++j) {
                        double v = xm[static_cast<std::size_t>(i) * x.w + j];
                        std::size_t b = static_cast<std::size_t>(2 * i) * y.w + 2 * j;
                        ym[b] = v;
                        ym[b + 1] = v;
                        ym[b + y.w] = v;
                        ym[b + y.w + 1] = v;
                    }
            }
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx(gy.n, gy.c, in_h_, in_w_);
        for (int in = 0; in < gy.n; ++in)
            for (int c = 0; c < gy.c; ++c) {
                const double* gm = gy.item(in) + static_cast<std::size_t>(c) * gy.h * gy.w;
                double* xm = gx.item(in) + static_cast<std::size_t>(c) * in_h_ * in_w_;
                for (int i = 0; i < in_h_; ++i)
                    for (int j = 0; j < in_w_; ++j) {
                        std::size_t b = static_cast<std::size_t>(2 * i) * gy.w + 2 * j;
                        xm[static_cast<std::size_t>(i) * in_w_ + j] =
                            gm[b] + gm[b + 1] + gm[b + gy.w] + gm[b + gy.w + 1];
                    }
            }
        return gx;
    }
    std::unique_ptr<Layer> clone() const override {
        return std::make_unique<UpsampleNearest2>(*this);
    }

private:
    int in_h_ = 0, in_w_ = 0;
};

class Dropout : public Layer {
public:
    explicit Dropout(double p) : p_(p) {}
    Tensor forward(const Tensor& x, const Ctx& ctx) override {
        if (!ctx.training || p_ <= 0.0) {
            active_ = false;
            return x;
        }
        require(ctx.rng != nullptr, Errc::ConfigError, "dropout: training needs an rng");
        active_ = true;
        mask_.resize(x.v.size());
        Tensor y = x;
        double keep = 1.0 / (1.0 - p_);
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            mask_[i] = (ctx.rng->uniform() >= p_) ? keep : 0.0;
            y.v[i] *= mask_[i];
        }
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        if (!active_) return gy;
        Tensor gx = gy;
        for (std::size_t i = 0; i < gx.v.size(); ++i) gx.v[i] *= mask_[i];
        return gx;
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Dropout>(*this); }

private:
    double p_;
    bool active_ = false;
    std::vector<double> mask_;
};

/// Fully connected layer over the flattened per-item features.
class Linear : public Layer {
public:
    Linear(int in, int out, Rng& rng) : in_(in), out_(out) {
        w_.resize(static_cast<std::size_t>(out) * in);
        b_.assign(out, 0.0);
        gw_.assign(w_.size(), 0.0);
        gb_.assign(b_.size(), 0.0);
        for (double& v : w_) v = glorot(in, out, rng);
    }

    Tensor forward(const Tensor& x, const Ctx&) override {
        require(static_cast<int>(x.per_item()) == in_, Errc::ShapeMismatch,
                "linear: feature count mismatch");
        x_ = x;
        Tensor y(x.n, out_, 1, 1);
        for (int in = 0; in < x.n; ++in) {
            const double* xi = x.item(in);
            double* yi = y.item(in);
            for (int o = 0; o < out_; ++o) {
                const double* row = &w_[static_cast<std::size_t>(o) * in_];
                double s = b_[o];
                for (int f = 0; f < in_; ++f) s += row[f] * xi[f];
                yi[o] = s;
            }
        }
        return y;
    }

    Tensor backward(const Tensor& gy) override {
        Tensor gx(x_.n, x_.c, x_.h, x_.w);
        for (int in = 0; in < gy.n; ++in) {
            const double* gyi = gy.item(in);
            const double* xi = x_.item(in);
            double* gxi = gx.item(in);
            for (int o = 0; o < out_; ++o) {
                double g = gyi[o];
                gb_[o] += g;
                double* grow = &gw_[static_cast<std::size_t>(o) * in_];
                const double* wrow = &w_[static_cast<std::size_t>(o) * in_];
                for (int f = 0; f < in_; ++f) {
                    grow[f] += g * xi[f];
                    gxi[f] += g * wrow[f];
                }
            }
        }
        return gx;
    }

    void param_views(std::vector<std::span<double>>& out) override {
        out.emplace_back(w_);
        out.emplace_back(b_);
    }
    void grad_views(std::vector<std::span<double>>& out) override {
        out.emplace_back(gw_);
        out.emplace_back(gb_);
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Linear>(*this); }

private:
    int in_, out_;
    std::vector<double> w_, b_, gw_, gb_;
    Tensor x_;
};

class Reshape : public Layer {
public:
    Reshape(int c, int h, int w) : c_(c), h_(h), w_(w) {}
    Tensor forward(const Tensor& x, const Ctx&) override {
        require(static_cast<std::size_t>(c_) * h_ * w_ == x.per_item(), Errc::ShapeMismatch,
                "reshape: element count mismatch");
        in_c_ = x.c; in_h_ = x.h; in_w_ = x.w;
        Tensor y = x;
        y.c = c_; y.h = h_; y.w = w_;
        return y;
    }
    Tensor backward(const Tensor& gy) override {
        Tensor gx = gy;
        gx.c = in_c_; gx.h = in_h_; gx.w = in_w_;
        return gx;
    }
    std::unique_ptr<Layer> clone() const override { return std::make_unique<Reshape>(*this); }

private:
    int c_, h_, w_;
    int in_c_ = 0, in_h_ = 0, in_w_ = 0;
};

// ---- shared stack plumbing ----

using Stack = std::vector<std::unique_ptr<Layer>>;

Stack clone_stack(const Stack& s) {
    Stack out;
    out.reserve(s.size());
    for (const auto& l : s) out.push_back(l->clone());
    return out;
}

Tensor run_stack(Stack& s, Tensor x, const Ctx& ctx) {
    for (auto& l : s) x = l->forward(x, ctx);
    return x;
}

Tensor backward_stack(Stack& s, Tensor g) {
    for (auto it = s.rbegin(); it != s.rend(); ++it) g = (*it)->backward(g);
    return g;
}

void collect_views(Stack& s, std::vector<std::span<double>>& params,
                   std::vector<std::span<double>>& grads) {
    for (auto& l : s) {
        l->param_views(params);
        l->grad_views(grads);
    }
}

void collect_state(Stack& s, std::vector<std::span<double>>& state) {
    for (auto& l : s) l->state_views(state);
}

struct StackPair {
    Stack encoder;
    Stack decoder;
    bool bn_frozen = false;

    std::vector<std::span<double>> params() {
        std::vector<std::span<double>> p, g;
        collect_views(encoder, p, g);
        collect_views(decoder, p, g);
        return p;
    }
    std::vector<std::span<double>> grads() {
        std::vector<std::span<double>> p, g;
        collect_views(encoder, p, g);
        collect_views(decoder, p, g);
        return g;
    }
    std::vector<std::span<double>> state() {
        std::vector<std::span<double>> st;
        collect_state(encoder, st);
        collect_state(decoder, st);
        return st;
    }

    void zero_grads() {
        for (auto g : grads()) std::fill(g.begin(), g.end(), 0.0);
    }

    double loss_and_grad(const Tensor& input, const Tensor& target, bool training, Rng* rng) {
        require(input.v.size() == target.v.size(), Errc::ShapeMismatch,
                "autoencoder: input/target size mismatch");
        zero_grads();
        Ctx ctx{training, bn_frozen, rng};
        Tensor z = run_stack(encoder, input, ctx);
        Tensor y = run_stack(decoder, std::move(z), ctx);

        double denom = static_cast<double>(y.v.size());
        double loss = 0.0;
        Tensor gy = y;
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            double err = y.v[i] - target.v[i];
            loss += err * err / denom;
            gy.v[i] = 2.0 * err / denom;
        }
        require(std::isfinite(loss), Errc::NonFinite, "autoencoder: non-finite loss");
        Tensor g = backward_stack(decoder, std::move(gy));
        backward_stack(encoder, std::move(g));
        return loss;
    }

    std::size_t parameter_count() {
        std::size_t n = 0;
        for (auto p : params()) n += p.size();
        return n;
    }

    double parameter(std::size_t i) {
        for (auto p : params()) {
            if (i < p.size()) return p[i];
            i -= p.size();
        }
        fail(Errc::ShapeMismatch, "autoencoder: parameter index out of range");
    }
    void set_parameter(std::size_t i, double v) {
        for (auto p : params()) {
            if (i < p.size()) {
                p[i] = v;
                return;
            }
            i -= p.size();
        }
        fail(Errc::ShapeMismatch, "autoencoder: parameter index out of range");
    }
    double gradient(std::size_t i) {
        for (auto g : grads()) {
            if (i < g.size()) return g[i];
            i -= g.size();
        }
        fail(Errc::ShapeMismatch, "autoencoder: gradient index out of range");
    }

    void adam_update(AdamState& st, double eta) {
        if (st.m.size() != parameter_count()) st.init(parameter_count());
        st.step += 1;
        double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
        double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
        auto ps = params();
        auto gs = grads();
        std::size_t off = 0;
        for (std::size_t t = 0; t < ps.size(); ++t) {
            auto p = ps[t];
            auto g = gs[t];
            for (std::size_t i = 0; i < p.size(); ++i) {
                require(std::isfinite(g[i]), Errc::NonFinite, "autoencoder: non-finite gradient");
                std::size_t k = off + i;
                st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g[i];
                st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g[i] * g[i];
                p[i] -= eta * (st.m[k] / bc1) / (std::sqrt(st.v[k] / bc2) + st.eps);
            }
            off += p.size();
        }
    }

    void serialize_state(io::Writer& w) {
        for (auto st : state()) w.f64_array(st);
    }
    void deserialize_state(io::Reader& r) {
        for (auto st : state()) {
            auto vals = r.f64_array(st.size());
            std::copy(vals.begin(), vals.end(), st.begin());
        }
    }
};

} // namespace

// ---- ConvAe ----

int ConvAeSpec::resolved_levels() const {
    if (levels > 0) return levels;
    int l = 0, s = side;
    while (s > 1) {
        s /= 2;
        ++l;
    }
    return l;
}

int ConvAeSpec::channels_at(int block) const {
    if (block == 0) return hidden;
    if (block == resolved_levels() && deepest_channels > 0) return deepest_channels;
    return hidden << block;
}

ConvAeSpec ConvAeSpec::published_scale(int latent) {
    ConvAeSpec spec;
    spec.side = 128;
    spec.hidden = 32;
    spec.latent = latent;
    spec.levels = 7;
    spec.dropout_blocks = 3;
    spec.deepest_channels = 4196;
    return spec;
}

void ConvAeSpec::validate() const {
    require(side >= 2 && (side & (side - 1)) == 0, Errc::ConfigError,
            "conv ae: side must be a power of two");
    require(hidden >= 1 && latent >= 1, Errc::ConfigError, "conv ae: bad channel/latent sizes");
    int l = resolved_levels();
    require(l >= 1 && (side >> l) == 1, Errc::ConfigError,
            "conv ae: levels must reduce the spatial size to 1x1");
    require(dropout_blocks >= 0 && dropout_p >= 0.0 && dropout_p < 1.0, Errc::ConfigError,
            "conv ae: bad dropout settings");
}

std::vector<ShapeRow> shape_ladder(const ConvAeSpec& spec) {
    spec.validate();
    const int levels = spec.resolved_levels();
    std::vector<ShapeRow> rows;
    rows.push_back({"first_conv", spec.channels_at(0), spec.side, spec.side, false, false});
    for (int l = 1; l <= levels; ++l) {
        rows.push_back({"contracting_" + std::to_string(l), spec.channels_at(l),
                        spec.side >> l, spec.side >> l, spec.batchnorm,
                        l <= spec.dropout_blocks});
    }
    rows.push_back({"bottleneck_1", spec.latent, 1, 1, false, false});
    rows.push_back({"bottleneck_2", spec.channels_at(levels), 1, 1, false, false});
    for (int l = levels; l >= 1; --l) {
        rows.push_back({"expanding_" + std::to_string(levels - l + 1), spec.channels_at(l - 1),
                        spec.side >> (l - 1), spec.side >> (l - 1), spec.batchnorm, false});
    }
    rows.push_back({"last_conv", 1, spec.side, spec.side, false, false});
    return rows;
}

struct ConvAe::Impl : StackPair {
    ConvAeSpec spec;
};

ConvAe::ConvAe() : impl_(std::make_unique<Impl>()) {}
ConvAe::~ConvAe() = default;
ConvAe::ConvAe(ConvAe&&) noexcept = default;
ConvAe& ConvAe::operator=(ConvAe&&) noexcept = default;

ConvAe::ConvAe(const ConvAe& o) : impl_(std::make_unique<Impl>()) {
    impl_->spec = o.impl_->spec;
    impl_->bn_frozen = o.impl_->bn_frozen;
    impl_->encoder = clone_stack(o.impl_->encoder);
    impl_->decoder = clone_stack(o.impl_->decoder);
}

ConvAe& ConvAe::operator=(const ConvAe& o) {
    if (this != &o) *this = ConvAe(o);
    return *this;
}

ConvAe ConvAe::create(const ConvAeSpec& spec, Rng& rng) {
    spec.validate();
    const int levels = spec.resolved_levels();

    ConvAe ae;
    ae.impl_->spec = spec;
    Stack& enc = ae.impl_->encoder;
    Stack& dec = ae.impl_->decoder;

    enc.push_back(std::make_unique<Conv2d>(1, spec.hidden, rng));  // no activation
    for (int l = 1; l <= levels; ++l) {
        int cin = spec.channels_at(l - 1);
        int cout = spec.channels_at(l);
        enc.push_back(std::make_unique<Conv2d>(cin, cout, rng));
        if (spec.batchnorm) enc.push_back(std::make_unique<BatchNorm2d>(cout));
        enc.push_back(std::make_unique<LeakyRelu>(0.2));
        enc.push_back(std::make_unique<Conv2d>(cout, cout, rng));
        if (spec.batchnorm) enc.push_back(std::make_unique<BatchNorm2d>(cout));
        enc.push_back(std::make_unique<LeakyRelu>(0.2));
        enc.push_back(std::make_unique<MaxPool2>());
        if (l <= spec.dropout_blocks) enc.push_back(std::make_unique<Dropout>(spec.dropout_p));
    }
    int deepest = spec.channels_at(levels);
    enc.push_back(std::make_unique<Linear>(deepest, spec.latent, rng));

    dec.push_back(std::make_unique<Linear>(spec.latent, deepest, rng));
    dec.push_back(std::make_unique<Reshape>(deepest, 1, 1));
    for (int l = levels; l >= 1; --l) {
        int cin = spec.channels_at(l);
        int cout = spec.channels_at(l - 1);
        dec.push_back(std::make_unique<UpsampleNearest2>());
        dec.push_back(std::make_unique<Conv2d>(cin, cout, rng));
        if (spec.batchnorm) dec.push_back(std::make_unique<BatchNorm2d>(cout));
        dec.push_back(std::make_unique<LeakyRelu>(0.0));  // plain ReLU
    }
    dec.push_back(std::make_unique<Conv2d>(spec.hidden, 1, rng));
    dec.push_back(std::make_unique<Sigmoid>());
    return ae;
}

const ConvAeSpec& ConvAe::spec() const { return impl_->spec; }

Tensor ConvAe::encode(const Tensor& x) const {
    require(x.c == 1 && x.h == impl_->spec.side && x.w == impl_->spec.side, Errc::ShapeMismatch,
            "encode: expected [n,1,S,S] input");
    for (double v : x.v) require(std::isfinite(v), Errc::NonFinite, "encode: non-finite input");
    Ctx ctx{};
    return run_stack(impl_->encoder, x, ctx);
}

Tensor ConvAe::decode(const Tensor& z) const {
    require(static_cast<int>(z.per_item()) == impl_->spec.latent, Errc::ShapeMismatch,
            "decode: latent size mismatch");
    Ctx ctx{};
    return run_stack(impl_->decoder, z, ctx);
}

std::vector<double> ConvAe::encode_one(std::span<const double> field) const {
    const int s = impl_->spec.side;
    require(static_cast<int>(field.size()) == s * s, Errc::ShapeMismatch,
            "encode_one: field size mismatch");
    Tensor x(1, 1, s, s);
    std::copy(field.begin(), field.end(), x.v.begin());
    return encode(x).v;
}

std::vector<double> ConvAe::decode_one(std::span<const double> z) const {
    Tensor t(1, impl_->spec.latent, 1, 1);
    require(z.size() == t.v.size(), Errc::ShapeMismatch, "decode_one: latent size mismatch");
    std::copy(z.begin(), z.end(), t.v.begin());
    return decode(t).v;
}

double ConvAe::loss_and_grad(const Tensor& input, const Tensor& target, bool training, Rng* rng) {
    return impl_->loss_and_grad(input, target, training, rng);
}
void ConvAe::adam_update(AdamState& state, double eta) { impl_->adam_update(state, eta); }
std::size_t ConvAe::parameter_count() const { return impl_->parameter_count(); }
double ConvAe::parameter(std::size_t i) const { return impl_->parameter(i); }
void ConvAe::set_parameter(std::size_t i, double v) { impl_->set_parameter(i, v); }
double ConvAe::gradient(std::size_t i) const { return impl_->gradient(i); }
void ConvAe::set_batchnorm_frozen(bool frozen) { impl_->bn_frozen = frozen; }

void ConvAe::serialize(io::Writer& w) const {
    const ConvAeSpec& s = impl_->spec;
    w.u32(static_cast<std::uint32_t>(s.side));
    w.u32(static_cast<std::uint32_t>(s.hidden));
    w.u32(static_cast<std::uint32_t>(s.latent));
    w.u32(static_cast<std::uint32_t>(s.resolved_levels()));
    w.u32(static_cast<std::uint32_t>(s.dropout_blocks));
    w.f64(s.dropout_p);
    w.u32(s.batchnorm ? 1u : 0u);
    w.u32(static_cast<std::uint32_t>(s.deepest_channels));
    impl_->serialize_state(w);
}

ConvAe ConvAe::deserialize(io::Reader& r) {
    ConvAeSpec s;
    s.side = static_cast<int>(r.u32());
    s.hidden = static_cast<int>(r.u32());
    s.latent = static_cast<int>(r.u32());
    s.levels = static_cast<int>(r.u32());
    s.dropout_blocks = static_cast<int>(r.u32());
    s.dropout_p = r.f64();
    s.batchnorm = r.u32() != 0;
    s.deepest_channels = static_cast<int>(r.u32());
    Rng dummy(0);
    ConvAe ae = create(s, dummy);
    ae.impl_->deserialize_state(r);
    return ae;
}

void ConvAe::save(const std::filesystem::path& path) const {
    io::Writer w(io::Kind::conv_ae);
    serialize(w);
    w.commit(path);
}

ConvAe ConvAe::load(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_kind(io::Kind::conv_ae);
    return deserialize(r);
}

// ---- MlpAe ----

std::vector<int> MlpAeSpec::encoder_widths() const {
    const double in = static_cast<double>(side) * side;
    const double out = static_cast<double>(latent);
    std::vector<int> widths;
    for (int k = 1; k <= hidden_layers; ++k) {
        double f = static_cast<double>(k) / (hidden_layers + 1);
        double w = std::exp(std::log(in) + f * (std::log(out) - std::log(in)));
        widths.push_back(std::max(latent, static_cast<int>(std::llround(w))));
    }
    return widths;
}

void MlpAeSpec::validate() const {
    require(side >= 2 && latent >= 1 && hidden_layers >= 1, Errc::ConfigError,
            "mlp ae: bad dimensions");
}

struct MlpAe::Impl : StackPair {
    MlpAeSpec spec;
};

MlpAe::MlpAe() : impl_(std::make_unique<Impl>()) {}
MlpAe::~MlpAe() = default;
MlpAe::MlpAe(MlpAe&&) noexcept = default;
MlpAe& MlpAe::operator=(MlpAe&&) noexcept = default;

MlpAe::MlpAe(const MlpAe& o) : impl_(std::make_unique<Impl>()) {
    impl_->spec = o.impl_->spec;
    impl_->bn_frozen = o.impl_->bn_frozen;
    impl_->encoder = clone_stack(o.impl_->encoder);
    impl_->decoder = clone_stack(o.impl_->decoder);
}

MlpAe& MlpAe::operator=(const MlpAe& o) {
    if (this != &o) *this = MlpAe(o);
    return *this;
}

MlpAe MlpAe::create(const MlpAeSpec& spec, Rng& rng) {
    spec.validate();
    MlpAe ae;
    ae.impl_->spec = spec;
    Stack& enc = ae.impl_->encoder;
    Stack& dec = ae.impl_->decoder;

    const int in = spec.side * spec.side;
    auto widths = spec.encoder_widths();

    int prev = in;
    for (int w : widths) {
        enc.push_back(std::make_unique<Linear>(prev, w, rng));
        enc.push_back(std::make_unique<Tanh>());
        prev = w;
    }
    enc.push_back(std::make_unique<Linear>(prev, spec.latent, rng));

    prev = spec.latent;
    for (auto it = widths.rbegin(); it != widths.rend(); ++it) {
        dec.push_back(std::make_unique<Linear>(prev, *it, rng));
        dec.push_back(std::make_unique<Tanh>());
        prev = *it;
    }
    dec.push_back(std::make_unique<Linear>(prev, in, rng));
    dec.push_back(std::make_unique<Sigmoid>());
    dec.push_back(std::make_unique<Reshape>(1, spec.side, spec.side));
    return ae;
}

const MlpAeSpec& MlpAe::spec() const { return impl_->spec; }

Tensor MlpAe::encode(const Tensor& x) const {
    require(static_cast<int>(x.per_item()) == impl_->spec.side * impl_->spec.side,
            Errc::ShapeMismatch, "encode: field size mismatch");
    Ctx ctx{};
    return run_stack(impl_->encoder, x, ctx);
}

Tensor MlpAe::decode(const Tensor& z) const {
    require(static_cast<int>(z.per_item()) == impl_->spec.latent, Errc::ShapeMismatch,
            "decode: latent size mismatch");
    Ctx ctx{};
    return run_stack(impl_->decoder, z, ctx);
}

std::vector<double> MlpAe::encode_one(std::span<const double> field) const {
    const int s = impl_->spec.side;
    require(static_cast<int>(field.size()) == s * s, Errc::ShapeMismatch,
            "encode_one: field size mismatch");
    Tensor x(1, 1, s, s);
    std::copy(field.begin(), field.end(), x.v.begin());
    return encode(x).v;
}

std::vector<double> MlpAe::decode_one(std::span<const double> z) const {
    Tensor t(1, impl_->spec.latent, 1, 1);
    require(z.size() == t.v.size(), Errc::ShapeMismatch, "decode_one: latent size mismatch");
    std::copy(z.begin(), z.end(), t.v.begin());
    return decode(t).v;
}

double MlpAe::loss_and_grad(const Tensor& input, const Tensor& target, bool training, Rng* rng) {
    return impl_->loss_and_grad(input, target, training, rng);
}
void MlpAe::adam_update(AdamState& state, double eta) { impl_->adam_update(state, eta); }
std::size_t MlpAe::parameter_count() const { return impl_->parameter_count(); }
double MlpAe::parameter(std::size_t i) const { return impl_->parameter(i); }
void MlpAe::set_parameter(std::size_t i, double v) { impl_->set_parameter(i, v); }
double MlpAe::gradient(std::size_t i) const { return impl_->gradient(i); }

void MlpAe::serialize(io::Writer& w) const {
    const MlpAeSpec& s = impl_->spec;
    w.u32(static_cast<std::uint32_t>(s.side));
    w.u32(static_cast<std::uint32_t>(s.latent));
    w.u32(static_cast<std::uint32_t>(s.hidden_layers));
    impl_->serialize_state(w);
}

MlpAe MlpAe::deserialize(io::Reader& r) {
    MlpAeSpec s;
    s.side = static_cast<int>(r.u32());
    s.latent = static_cast<int>(r.u32());
    s.hidden_layers = static_cast<int>(r.u32());
    Rng dummy(0);
    MlpAe ae = create(s, dummy);
    ae.impl_->deserialize_state(r);
    return ae;
}

void MlpAe::save(const std::filesystem::path& path) const {
    io::Writer w(io::Kind::mlp_ae);
    serialize(w);
    w.commit(path);
}

MlpAe MlpAe::load(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_kind(io::Kind::mlp_ae);
    return deserialize(r);
}

// ---- shared reconstruction training loop ----

namespace {

template <typename Model>
double reconstruction_loss(const Model& model, const std::vector<std::vector<double>>& fields,
                           int side, int batch_size) {
    double total = 0.0;
    std::size_t done = 0;
    while (done < fields.size()) {
        std::size_t bs = std::min<std::size_t>(batch_size, fields.size() - done);
        Tensor x(static_cast<int>(bs), 1, side, side);
        for (std::size_t k = 0; k < bs; ++k)
            std::copy(fields[done + k].begin(), fields[done + k].end(), x.item(static_cast<int>(k)));
        Tensor y = model.decode(model.encode(x));
        double loss = 0.0;
        for (std::size_t i = 0; i < y.v.size(); ++i) {
            double err = y.v[i] - x.v[i];
            loss += err * err;
        }
        total += loss / static_cast<double>(x.per_item());
        done += bs;
    }
    return total / static_cast<double>(fields.size());
}

template <typename Model, typename Spec>
std::pair<Model, TrainHistory> train_ae_impl(const std::vector<std::vector<double>>& train_fields,
                                             const std::vector<std::vector<double>>& val_fields,
                                             const Spec& spec, const TrainConfig& cfg, int side) {
    cfg.validate();
    require(!train_fields.empty(), Errc::EmptyData, "train_autoencoder: empty training set");
    require(!val_fields.empty(), Errc::EmptyData, "train_autoencoder: empty validation set");
    const std::size_t pixels = static_cast<std::size_t>(side) * side;
    for (const auto& f : train_fields)
        require(f.size() == pixels, Errc::ShapeMismatch, "train_autoencoder: field size mismatch");
    for (const auto& f : val_fields)
        require(f.size() == pixels, Errc::ShapeMismatch, "train_autoencoder: field size mismatch");

    Rng rng(cfg.seed);
    Model model = Model::create(spec, rng);
    AdamState adam;
    adam.init(model.parameter_count());

    const std::size_t n = train_fields.size();
    const long batches_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
    const double step_f = static_cast<double>(cfg.epochs * batches_per_epoch);

    TrainHistory hist;
    Model best = model;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    long step_c = 0;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        double eta = cfg.eta_max;
        for (long b = 0; b < batches_per_epoch; ++b) {
            std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
            std::size_t hi = std::min(n, lo + cfg.batch_size);
            Tensor x(static_cast<int>(hi - lo), 1, side, side);
            for (std::size_t k = lo; k < hi; ++k)
                std::copy(train_fields[order[k]].begin(), train_fields[order[k]].end(),
                          x.item(static_cast<int>(k - lo)));

            double loss = model.loss_and_grad(x, x, true, &rng);
            if (!std::isfinite(loss))
                fail(Errc::NonFinite,
                     "train_autoencoder: non-finite loss at epoch " + std::to_string(epoch));
            eta = (cfg.schedule == LrSchedule::cosine)
                      ? cosine_lr(static_cast<double>(step_c), step_f, cfg.eta_min, cfg.eta_max)
                      : cfg.eta_max;
            model.adam_update(adam, eta);
            ++step_c;
            epoch_loss += loss * static_cast<double>(hi - lo);
        }
        epoch_loss /= static_cast<double>(n);

        double val_loss = reconstruction_loss(model, val_fields, side, cfg.batch_size);
        hist.train_loss.push_back(epoch_loss);
        hist.validation_loss.push_back(val_loss);
        hist.learning_rate.push_back(eta);
        if (val_loss < hist.best_validation_loss) {
            hist.best_validation_loss = val_loss;
            hist.best_epoch = epoch;
            if (cfg.early_stopping) best = model;
        }
    }
    if (!cfg.early_stopping) best = model;
    return {std::move(best), std::move(hist)};
}

} // namespace

ConvAeTrainResult train_autoencoder(const std::vector<std::vector<double>>& train_fields,
                                    const std::vector<std::vector<double>>& validation_fields,
                                    const ConvAeSpec& spec, const TrainConfig& cfg) {
    spec.validate();
    auto [model, hist] =
        train_ae_impl<ConvAe>(train_fields, validation_fields, spec, cfg, spec.side);
    return {std::move(model), std::move(hist)};
}

MlpAeTrainResult train_mlp_autoencoder(const std::vector<std::vector<double>>& train_fields,
                                       const std::vector<std::vector<double>>& validation_fields,
                                       const MlpAeSpec& spec, const TrainConfig& cfg) {
    spec.validate();
    auto [model, hist] =
        train_ae_impl<MlpAe>(train_fields, validation_fields, spec, cfg, spec.side);
    return {std::move(model), std::move(hist)};
}

} // namespace rpom::neural

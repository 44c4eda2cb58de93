#include "rpom/neural.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "rpom/io.hpp"

namespace rpom::neural {

double cosine_lr(double step_c, double step_f, double eta_min, double eta_max) {
    require(step_f > 0.0 && step_c >= 0.0 && step_c <= step_f, Errc::ConfigError,
            "cosine_lr: need 0 <= step_c <= step_f, step_f > 0");
    return eta_min + 0.5 * (eta_max - eta_min) *
                         (1.0 + std::cos(3.14159265358979323846 * step_c / step_f));
}

void AdamState::init(std::size_t n) {
    step = 0;
    m.assign(n, 0.0);
    v.assign(n, 0.0);
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double eta) {
    require(params.size() == grads.size() && params.size() == state.m.size(),
            Errc::ShapeMismatch, "adam_step: parameter/gradient/state size mismatch");
    for (double g : grads)
        require(std::isfinite(g), Errc::NonFinite, "adam_step: non-finite gradient");

    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * grads[i];
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * grads[i] * grads[i];
        double mhat = state.m[i] / bc1;
        double vhat = state.v[i] / bc2;
        params[i] -= eta * mhat / (std::sqrt(vhat) + state.eps);
    }
}

void TrainConfig::validate() const {
    require(batch_size >= 1, Errc::ConfigError, "train config: batch size must be >= 1");
    require(epochs >= 1, Errc::ConfigError, "train config: epochs must be >= 1");
    require(eta_max >= eta_min && eta_min > 0.0, Errc::ConfigError,
            "train config: need eta_max >= eta_min > 0");
}

std::string TrainHistory::csv() const {
    std::ostringstream out;
    out << "epoch,train_loss,validation_loss,learning_rate\n";
    for (std::size_t e = 0; e < train_loss.size(); ++e)
        out << e << "," << store::format_double(train_loss[e]) << ","
            << store::format_double(validation_loss[e]) << ","
            << store::format_double(learning_rate[e]) << "\n";
    return out.str();
}

namespace {

double glorot_limit(std::size_t fan_in, std::size_t fan_out) {
    return std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
}

} // namespace

Mlp Mlp::create(int in_dim, int out_dim, int hidden_layers, int width, Rng& rng) {
    require(in_dim >= 1 && out_dim >= 1 && hidden_layers >= 0 && width >= 1, Errc::ConfigError,
            "mlp: bad dimensions");
    Mlp m;
    m.in_dim_ = in_dim;
    m.out_dim_ = out_dim;
    m.hidden_layers_ = hidden_layers;
    m.width_ = width;

    std::vector<int> dims;
    dims.push_back(in_dim);
    for (int l = 0; l < hidden_layers; ++l) dims.push_back(width);
    dims.push_back(out_dim);

    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        linalg::DenseMatrix w(dims[l + 1], dims[l]);
        double a = glorot_limit(dims[l], dims[l + 1]);
        for (double& x : w.a) x = rng.uniform(-a, a);
        m.w_.push_back(std::move(w));
        m.b_.emplace_back(dims[l + 1], 0.0);
        m.gw_.emplace_back(dims[l + 1], dims[l]);
        m.gb_.emplace_back(dims[l + 1], 0.0);
    }
    return m;
}

std::vector<double> Mlp::forward(std::span<const double> x) const {
    require(static_cast<int>(x.size()) == in_dim_, Errc::ShapeMismatch, "mlp: input dim mismatch");
    std::vector<double> a(x.begin(), x.end());
    for (std::size_t l = 0; l < w_.size(); ++l) {
        std::vector<double> z = linalg::matvec(w_[l], a);
        for (std::size_t i = 0; i < z.size(); ++i) z[i] += b_[l][i];
        if (l + 1 < w_.size())
            for (double& v : z) v = std::tanh(v);
        a = std::move(z);
    }
    return a;
}

void Mlp::zero_grad() {
    for (auto& g : gw_) std::fill(g.a.begin(), g.a.end(), 0.0);
    for (auto& g : gb_) std::fill(g.begin(), g.end(), 0.0);
}

double Mlp::loss_and_grad(const std::vector<store::TrainingPair>& batch) {
    require(!batch.empty(), Errc::EmptyData, "mlp: empty batch");
    zero_grad();

    const std::size_t layers = w_.size();
    double loss = 0.0;
    const double denom = static_cast<double>(batch.size()) * out_dim_;

    std::vector<std::vector<double>> act(layers + 1);
    for (const auto& pair : batch) {
        require(static_cast<int>(pair.input.size()) == in_dim_, Errc::ShapeMismatch,
                "mlp: input dim mismatch");
        require(static_cast<int>(pair.target.size()) == out_dim_, Errc::ShapeMismatch,
                "mlp: target dim mismatch");
        act[0] = pair.input;
        for (std::size_t l = 0; l < layers; ++l) {
            std::vector<double> z = linalg::matvec(w_[l], act[l]);
            for (std::size_t i = 0; i < z.size(); ++i) z[i] += b_[l][i];
            if (l + 1 < layers)
                for (double& v : z) v = std::tanh(v);
            act[l + 1] = std::move(z);
        }

        std::vector<double> delta(out_dim_);
        for (int i = 0; i < out_dim_; ++i) {
            double err = act[layers][i] - pair.target[i];
            loss += err * err / denom;
            delta[i] = 2.0 * err / denom;
        }

        for (std::size_t l = layers; l-- > 0;) {
            auto& gw = gw_[l];
            auto& gb = gb_[l];
            const auto& a_in = act[l];
            for (std::size_t i = 0; i < gw.rows; ++i) {
                double d = delta[i];
                gb[i] += d;
                double* grow = &gw.a[i * gw.cols];
                for (std::size_t j = 0; j < gw.cols; ++j) grow[j] += d * a_in[j];
            }
            if (l == 0) break;
            std::vector<double> prev(w_[l].cols, 0.0);
            for (std::size_t i = 0; i < w_[l].rows; ++i) {
                double d = delta[i];
                const double* wrow = &w_[l].a[i * w_[l].cols];
                for (std::size_t j = 0; j < w_[l].cols; ++j) prev[j] += d * wrow[j];
            }
            // through tanh: act[l] already holds tanh(z)
            for (std::size_t j = 0; j < prev.size(); ++j)
                prev[j] *= 1.0 - act[l][j] * act[l][j];
            delta = std::move(prev);
        }
    }
    require(std::isfinite(loss), Errc::NonFinite, "mlp: non-finite loss");
    return loss;
}

std::size_t Mlp::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < w_.size(); ++l) n += w_[l].a.size() + b_[l].size();
    return n;
}

namespace {

// Flat indexing across (w0, b0, w1, b1, ...).
template <typename Wm, typename Bm, typename Fn>
decltype(auto) with_param(Wm& w, Bm& b, std::size_t idx, Fn&& fn) {
    for (std::size_t l = 0; l < w.size(); ++l) {
        if (idx < w[l].a.size()) return fn(w[l].a[idx]);
        idx -= w[l].a.size();
        if (idx < b[l].size()) return fn(b[l][idx]);
        idx -= b[l].size();
    }
    fail(Errc::ShapeMismatch, "mlp: parameter index out of range");
}

} // namespace

double Mlp::parameter(std::size_t i) const {
    return with_param(w_, b_, i, [](const double& v) { return v; });
}
void Mlp::set_parameter(std::size_t i, double v) {
    with_param(w_, b_, i, [&](double& p) { p = v; });
}
double Mlp::gradient(std::size_t i) const {
    return with_param(gw_, gb_, i, [](const double& v) { return v; });
}

void Mlp::adam_update(AdamState& state, double eta) {
    if (state.m.size() != parameter_count()) state.init(parameter_count());
    state.step += 1;
    double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    std::size_t off = 0;
    auto update = [&](std::span<double> p, std::span<const double> g) {
        for (std::size_t i = 0; i < p.size(); ++i) {
            require(std::isfinite(g[i]), Errc::NonFinite, "mlp: non-finite gradient");
            std::size_t k = off + i;
            state.m[k] = state.beta1 * state.m[k] + (1.0 - state.beta1) * g[i];
            state.v[k] = state.beta2 * state.v[k] + (1.0 - state.beta2) * g[i] * g[i];
            double mhat = state.m[k] / bc1;
            double vhat = state.v[k] / bc2;
            p[i] -= eta * mhat / (std::sqrt(vhat) + state.eps);
        }
        off += p.size();
    };
    for (std::size_t l = 0; l < w_.size(); ++l) {
        update(w_[l].a, gw_[l].a);
        update(b_[l], gb_[l]);
    }
}

void Mlp::serialize(io::Writer& w) const {
    w.u32(static_cast<std::uint32_t>(in_dim_));
    w.u32(static_cast<std::uint32_t>(out_dim_));
    w.u32(static_cast<std::uint32_t>(hidden_layers_));
    w.u32(static_cast<std::uint32_t>(width_));
    for (std::size_t l = 0; l < w_.size(); ++l) {
        w.f64_array(w_[l].a);
        w.f64_array(b_[l]);
    }
}

Mlp Mlp::deserialize(io::Reader& r) {
    int in = static_cast<int>(r.u32());
    int out = static_cast<int>(r.u32());
    int hidden = static_cast<int>(r.u32());
    int width = static_cast<int>(r.u32());
    Rng dummy(0);
    Mlp m = create(in, out, hidden, width, dummy);
    for (std::size_t l = 0; l < m.w_.size(); ++l) {
        m.w_[l].a = r.f64_array(m.w_[l].a.size());
        m.b_[l] = r.f64_array(m.b_[l].size());
    }
    return m;
}

void Mlp::save(const std::filesystem::path& path) const {
    io::Writer w(io::Kind::mlp);
    serialize(w);
    w.commit(path);
}

Mlp Mlp::load(const std::filesystem::path& path) {
    io::Reader r(path);
    r.expect_kind(io::Kind::mlp);
    return deserialize(r);
}

namespace {

double eval_mlp_loss(const Mlp& m, const std::vector<store::TrainingPair>& pairs) {
    double loss = 0.0;
    const double denom = static_cast<double>(pairs.size()) * m.out_dim();
    for (const auto& pair : pairs) {
        std::vector<double> y = m.forward(pair.input);
        for (std::size_t i = 0; i < y.size(); ++i) {
            double err = y[i] - pair.target[i];
            loss += err * err / denom;
        }
    }
    return loss;
}

} // namespace

RegressorResult train_regressor(const std::vector<store::TrainingPair>& train,
                                const std::vector<store::TrainingPair>& validation,
                                int in_dim, int out_dim, const TrainConfig& cfg,
                                int hidden_layers, int width) {
    cfg.validate();
    require(!train.empty(), Errc::EmptyData, "train_regressor: empty training set");
    require(!validation.empty(), Errc::EmptyData, "train_regressor: empty validation set");

    Rng rng(cfg.seed);
    Mlp model = Mlp::create(in_dim, out_dim, hidden_layers, width, rng);
    AdamState adam;
    adam.init(model.parameter_count());

    const std::size_t n = train.size();
    const long batches_per_epoch =
        static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
    const double step_f = static_cast<double>(cfg.epochs * batches_per_epoch);

    RegressorResult result;
    result.model = model;
    TrainHistory& hist = result.history;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    long step_c = 0;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng.shuffle(order);
        double epoch_loss = 0.0;
        double eta = cfg.eta_max;
        for (long b = 0; b < batches_per_epoch; ++b) {
            std::vector<store::TrainingPair> batch;
            std::size_t lo = static_cast<std::size_t>(b) * cfg.batch_size;
            std::size_t hi = std::min(n, lo + cfg.batch_size);
            for (std::size_t k = lo; k < hi; ++k) batch.push_back(train[order[k]]);

            double loss = model.loss_and_grad(batch);
            if (!std::isfinite(loss))
                fail(Errc::NonFinite, "train_regressor: non-finite loss at epoch " +
                                          std::to_string(epoch));
            eta = (cfg.schedule == LrSchedule::cosine)
                      ? cosine_lr(static_cast<double>(step_c), step_f, cfg.eta_min, cfg.eta_max)
                      : cfg.eta_max;
            model.adam_update(adam, eta);
            ++step_c;
            epoch_loss += loss * static_cast<double>(hi - lo);
        }
        epoch_loss /= static_cast<double>(n);

        double val_loss = eval_mlp_loss(model, validation);
        hist.train_loss.push_back(epoch_loss);
        hist.validation_loss.push_back(val_loss);
        hist.learning_rate.push_back(eta);
        if (val_loss < hist.best_validation_loss) {
            hist.best_validation_loss = val_loss;
            hist.best_epoch = epoch;
            if (cfg.early_stopping) result.model = model;
        }
    }
    if (!cfg.early_stopping) result.model = model;
    return result;
}

} // namespace rpom::neural

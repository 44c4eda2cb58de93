#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "rpom/io.hpp"
#include "rpom/linalg.hpp"
#include "rpom/rng.hpp"
#include "rpom/store.hpp"

namespace rpom::neural {

/// Cosine-annealed learning rate:
/// eta = eta_min + (eta_max - eta_min)/2 * (1 + cos(pi * step_c / step_f)).
double cosine_lr(double step_c, double step_f, double eta_min, double eta_max);

struct AdamState {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    long step = 0;
    std::vector<double> m;
    std::vector<double> v;

    void init(std::size_t n);
};

/// Bias-corrected Adam update in place; state accumulators must match the
/// parameter count.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state,
               double eta);

enum class LrSchedule { constant, cosine };

struct TrainConfig {
    int batch_size = 32;
    long epochs = 100;
    LrSchedule schedule = LrSchedule::constant;
    double eta_max = 1e-3;  // constant schedule runs at eta_max throughout
    double eta_min = 1e-16;
    std::uint64_t seed = 0;
    bool early_stopping = true;

    void validate() const;
};

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> validation_loss;
    std::vector<double> learning_rate;
    long best_epoch = -1;
    double best_validation_loss = std::numeric_limits<double>::infinity();

    /// CSV with columns epoch,train_loss,validation_loss,learning_rate.
    std::string csv() const;
};

/// Fully connected tanh network (hidden layers all the same width, linear
/// output layer).
class Mlp {
public:
    Mlp() = default;

    static Mlp create(int in_dim, int out_dim, int hidden_layers, int width, Rng& rng);

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    int hidden_layers() const { return hidden_layers_; }
    int width() const { return width_; }

    std::vector<double> forward(std::span<const double> x) const;

    /// Mean-squared-error over the batch; accumulates parameter gradients.
    double loss_and_grad(const std::vector<store::TrainingPair>& batch);

    std::size_t parameter_count() const;
    double parameter(std::size_t i) const;
    void set_parameter(std::size_t i, double v);
    double gradient(std::size_t i) const;

    void adam_update(AdamState& state, double eta);

    void save(const std::filesystem::path& path) const;
    static Mlp load(const std::filesystem::path& path);
    void serialize(io::Writer& w) const;
    static Mlp deserialize(io::Reader& r);

private:
    int in_dim_ = 0, out_dim_ = 0, hidden_layers_ = 0, width_ = 0;
    std::vector<linalg::DenseMatrix> w_;
    std::vector<std::vector<double>> b_;
    std::vector<linalg::DenseMatrix> gw_;
    std::vector<std::vector<double>> gb_;

    void zero_grad();
    friend struct MlpAccess;
};

struct RegressorResult {
    Mlp model;
    TrainHistory history;
};

/// Mini-batch Adam on MSE; returns the checkpoint with the lowest validation
/// loss seen (early-stopping-by-checkpoint) plus the full loss history.
RegressorResult train_regressor(const std::vector<store::TrainingPair>& train,
                                const std::vector<store::TrainingPair>& validation,
                                int in_dim, int out_dim, const TrainConfig& cfg,
                                int hidden_layers = 5, int width = 7);

/// NCHW tensor of doubles.
struct Tensor {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<double> v;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          v(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0) {}

    std::size_t per_item() const { return static_cast<std::size_t>(c) * h * w; }
    double* item(int i) { return v.data() + per_item() * i; }
    const double* item(int i) const { return v.data() + per_item() * i; }
};

struct ConvAeSpec {
    int side = 32;            // S, must be a power of two
    int hidden = 4;           // H, channels after the first convolution
    int latent = 4;           // Q
    int levels = 0;           // contracting/expanding blocks, 0 = log2(side)
    int dropout_blocks = 3;   // leading contracting blocks carrying dropout
    double dropout_p = 0.5;
    bool batchnorm = true;
    int deepest_channels = 0; // 0 = hidden << levels; Table-3 scale pins 4196

    int resolved_levels() const;
    int channels_at(int block) const;  // block 0 = after first conv
    void validate() const;

    /// Published full-scale architecture (128^2 fields, 32 base channels,
    /// seven blocks, 4196-channel deepest block, dropout on the first
    /// three). Too large to train here; used for shape checks.
    static ConvAeSpec published_scale(int latent);
};

struct ShapeRow {
    std::string block;
    int channels = 0, height = 0, width = 0;
    bool batchnorm = false, dropout = false;
};

/// Output shapes per block, pure arithmetic (nothing is allocated); lets the
/// full published architecture be checked without constructing it.
std::vector<ShapeRow> shape_ladder(const ConvAeSpec& spec);

/// Deep convolutional autoencoder. Contracting blocks: two 3x3 convolutions
/// (LeakyReLU 0.2) then a 2x2 max-pool; expanding blocks: nearest-neighbor
/// upsample then one convolution (ReLU); two linear bottleneck layers;
/// sigmoid output.
class ConvAe {
public:
    ConvAe();
    ~ConvAe();
    ConvAe(const ConvAe&);
    ConvAe& operator=(const ConvAe&);
    ConvAe(ConvAe&&) noexcept;
    ConvAe& operator=(ConvAe&&) noexcept;

    static ConvAe create(const ConvAeSpec& spec, Rng& rng);

    const ConvAeSpec& spec() const;

    /// Inference-mode (deterministic) encode/decode.
    Tensor encode(const Tensor& x) const;
    Tensor decode(const Tensor& z) const;
    std::vector<double> encode_one(std::span<const double> field) const;
    std::vector<double> decode_one(std::span<const double> z) const;

    double loss_and_grad(const Tensor& input, const Tensor& target, bool training, Rng* rng);
    void adam_update(AdamState& state, double eta);

    std::size_t parameter_count() const;
    double parameter(std::size_t i) const;
    void set_parameter(std::size_t i, double v);
    double gradient(std::size_t i) const;

    /// Freeze batch-norm onto its running statistics even in training mode
    /// (used by the finite-difference gradient checks).
    void set_batchnorm_frozen(bool frozen);

    void save(const std::filesystem::path& path) const;
    static ConvAe load(const std::filesystem::path& path);
    void serialize(io::Writer& w) const;
    static ConvAe deserialize(io::Reader& r);

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

struct MlpAeSpec {
    int side = 32;
    int latent = 4;
    int hidden_layers = 7;  // per coder, tanh activations

    std::vector<int> encoder_widths() const;  // geometric taper side^2 -> latent
    void validate() const;
};

/// Fully connected autoencoder variant (no convolutions), same contracts.
class MlpAe {
public:
    MlpAe();
    ~MlpAe();
    MlpAe(const MlpAe&);
    MlpAe& operator=(const MlpAe&);
    MlpAe(MlpAe&&) noexcept;
    MlpAe& operator=(MlpAe&&) noexcept;

    static MlpAe create(const MlpAeSpec& spec, Rng& rng);

    const MlpAeSpec& spec() const;

    Tensor encode(const Tensor& x) const;
    Tensor decode(const Tensor& z) const;
    std::vector<double> encode_one(std::span<const double> field) const;
    std::vector<double> decode_one(std::span<const double> z) const;

    double loss_and_grad(const Tensor& input, const Tensor& target, bool training, Rng* rng);
    void adam_update(AdamState& state, double eta);

    std::size_t parameter_count() const;
    double parameter(std::size_t i) const;
    void set_parameter(std::size_t i, double v);
    double gradient(std::size_t i) const;

    void save(const std::filesystem::path& path) const;
    static MlpAe load(const std::filesystem::path& path);
    void serialize(io::Writer& w) const;
    static MlpAe deserialize(io::Reader& r);

    struct Impl;

private:
    std::unique_ptr<Impl> impl_;
};

struct ConvAeTrainResult {
    ConvAe model;
    TrainHistory history;
};
struct MlpAeTrainResult {
    MlpAe model;
    TrainHistory history;
};

/// Reconstruction training on normalized side x side fields with the cosine
/// schedule stepped per back-propagation; per-epoch validation loss recorded
/// and the best-validation checkpoint returned.
ConvAeTrainResult train_autoencoder(const std::vector<std::vector<double>>& train_fields,
                                    const std::vector<std::vector<double>>& validation_fields,
                                    const ConvAeSpec& spec, const TrainConfig& cfg);

MlpAeTrainResult train_mlp_autoencoder(const std::vector<std::vector<double>>& train_fields,
                                       const std::vector<std::vector<double>>& validation_fields,
                                       const MlpAeSpec& spec, const TrainConfig& cfg);

} // namespace rpom::neural

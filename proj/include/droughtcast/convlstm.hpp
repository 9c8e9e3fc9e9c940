#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "droughtcast/forecast.hpp"
#include "droughtcast/labeler.hpp"
#include "droughtcast/pdsi_cube.hpp"

namespace droughtcast {

struct ConvLstmHyper {
    std::size_t in_channels = 1;
    std::size_t embed_channels = 16;
    std::size_t hidden_channels = 16;
    std::size_t kernel = 3;
    std::size_t n_classes = 2;
    std::size_t history_len = 6;
    std::size_t horizon = 1;
    double step_size = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t batch_size = 4;
    std::size_t max_epochs = 100;
    std::size_t patience = 10;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
    /// Head width: one logit for binary, one per class otherwise.
    std::size_t out_channels() const { return n_classes == 2 ? 1 : n_classes; }
    std::size_t first_target() const { return history_len + horizon - 1; }
};

template <typename Scalar>
using FieldMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using BiasVector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/**
 * Encoder conv (embed x in*k^2), gate conv over [embedding, hidden] (4h x (embed+h)*k^2, gate
 * blocks ordered input, forget, cell, output), 1x1 head (out x h). Conv weights use
 * [out][in_channel][ky][kx] order. Also used as the gradient record.
 */
template <typename Scalar>
struct ConvLstmParams {
    FieldMatrix<Scalar> enc_w;
    BiasVector<Scalar> enc_b;
    FieldMatrix<Scalar> gate_w;
    BiasVector<Scalar> gate_b;
    FieldMatrix<Scalar> head_w;
    BiasVector<Scalar> head_b;

    static ConvLstmParams zeros(const ConvLstmHyper& hyper);
    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases except forget gate = 1.
    static ConvLstmParams initialize(const ConvLstmHyper& hyper, std::uint64_t seed);

    /// Tensors in checkpoint order: enc_w, enc_b, gate_w, gate_b, head_w, head_b.
    std::array<std::span<Scalar>, 6> tensors();
    std::array<std::span<const Scalar>, 6> tensors() const;
    static constexpr std::array<const char*, 6> kTensorNames{"enc_w", "enc_b", "gate_w", "gate_b", "head_w", "head_b"};

    std::size_t count() const;
    void set_zero();
    bool all_finite() const;

    template <typename Other>
    ConvLstmParams<Other> cast() const {
        return {enc_w.template cast<Other>(),  enc_b.template cast<Other>(),  gate_w.template cast<Other>(),
                gate_b.template cast<Other>(), head_w.template cast<Other>(), head_b.template cast<Other>()};
    }

    bool operator==(const ConvLstmParams& o) const {
        return enc_w == o.enc_w && enc_b == o.enc_b && gate_w == o.gate_w && gate_b == o.gate_b &&
               head_w == o.head_w && head_b == o.head_b;
    }
};

/// Hidden (short-term) and cell (long-term) fields, channels x (rows*cols).
template <typename Scalar>
struct ConvLstmState {
    FieldMatrix<Scalar> hidden;
    FieldMatrix<Scalar> cell;

    static ConvLstmState zeros(std::size_t channels, std::size_t cells) {
        return {FieldMatrix<Scalar>::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(cells)),
                FieldMatrix<Scalar>::Zero(static_cast<Eigen::Index>(channels), static_cast<Eigen::Index>(cells))};
    }
};

struct GridShape {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::size_t cells() const { return rows * cols; }
};

/// Same-padded 2-D correlation as a matrix: rows (channel, ky, kx), columns are cells.
template <typename Scalar>
FieldMatrix<Scalar> im2col(const FieldMatrix<Scalar>& field, GridShape grid, std::size_t kernel);

/// Adjoint of im2col: scatters column gradients back onto a channels x cells field.
template <typename Scalar>
FieldMatrix<Scalar> col2im(const FieldMatrix<Scalar>& cols, std::size_t channels, GridShape grid, std::size_t kernel);

/**
 * One recurrence step: gates = W * [x, h] + b through same-padded convolution;
 * c' = f*c + i*g, h' = o*tanh(c'). No peepholes.
 */
template <typename Scalar>
ConvLstmState<Scalar> cell_forward(const FieldMatrix<Scalar>& x_embed, const ConvLstmState<Scalar>& state,
                                   const ConvLstmParams<Scalar>& params, GridShape grid, std::size_t kernel);

/**
 * Encoder per month, recurrence over the window, head on the last hidden state. `window` holds
 * history_len months of rows*cols values, missing entries already 0. Returns class
 * probabilities n_classes x cells (binary row 1 is drought).
 */
template <typename Scalar>
FieldMatrix<Scalar> forward(std::span<const float> window, GridShape grid, const ConvLstmParams<Scalar>& params,
                            const ConvLstmHyper& hyper);

/// One training example: inputs history_len x cells, targets per cell (-1 = masked).
struct WindowItem {
    std::span<const float> inputs;
    std::span<const std::int8_t> targets;
};

template <typename Scalar>
struct LossAndGrad {
    double loss = 0.0;
    std::size_t n_valid = 0;
    ConvLstmParams<Scalar> grad;
};

/**
 * Mean cross-entropy over valid cells of all items and its gradient by reverse-mode through
 * head, recurrence and encoder. No valid cell gives loss 0 and a zero gradient. Items are
 * differentiated independently and reduced in order, so the result is independent of
 * hyper.threads. Throws DivergenceError on a non-finite loss.
 */
template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const ConvLstmParams<Scalar>& params, std::span<const WindowItem> batch,
                                  GridShape grid, const ConvLstmHyper& hyper);

/// Zero-imputed inputs and labels of one cube, addressed by target month.
class WindowSet {
public:
    WindowSet(const PdsiCube& cube, const LabelCube* labels, const ConvLstmHyper& hyper);

    GridShape grid() const { return grid_; }
    std::size_t t_len() const { return t_len_; }
    /// Target months with a full history, ascending.
    const std::vector<std::size_t>& targets() const { return target_months_; }
    WindowItem item(std::size_t target_month) const;
    std::span<const float> window(std::size_t target_month) const;

private:
    GridShape grid_;
    std::size_t t_len_ = 0;
    std::size_t history_len_ = 0;
    std::size_t horizon_ = 0;
    std::vector<float> inputs_;
    std::vector<std::int8_t> labels_;
    std::vector<std::size_t> target_months_;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_score = 0.0;
    bool improved = false;
};

struct ConvLstmFit {
    ConvLstmParams<float> params;
    std::vector<EpochRecord> log;
    std::size_t best_epoch = 0;
    /// "roc_auc", "accuracy" or "neg_loss": what val_score measures.
    std::string score_kind;
};

/**
 * Adaptive-moment training on the train windows in seeded shuffled batches. After each epoch the
 * validation score (median per-cell ROC AUC for binary, median accuracy otherwise; negative
 * validation loss when that median is undefined) is logged. Training stops once the score has
 * not improved for more than `patience` epochs; the best epoch's parameters are returned.
 */
ConvLstmFit fit_convlstm(const PdsiCube& train, const LabelCube& train_labels, const PdsiCube& val,
                         const LabelCube& val_labels, const ConvLstmHyper& hyper);

/// Probability fields for every target month with a full history.
ForecastCube predict_convlstm(const ConvLstmParams<float>& params, const PdsiCube& cube, const ConvLstmHyper& hyper);

/// Line-delimited plain-text training log.
std::string format_training_log(const ConvLstmFit& fit);

/**
 * CLSP v1 little-endian: "CLSP", u32 version, hyper block (u32 in_channels, embed, hidden,
 * kernel, n_classes, history_len, horizon, batch_size, max_epochs, patience; f64 step_size,
 * beta1, beta2, eps; u64 seed), then each tensor as u32 element count and f32 values.
 */
std::vector<std::uint8_t> encode_checkpoint(const ConvLstmParams<float>& params, const ConvLstmHyper& hyper);
void save_checkpoint(const ConvLstmParams<float>& params, const ConvLstmHyper& hyper,
                     const std::filesystem::path& path);
std::pair<ConvLstmParams<float>, ConvLstmHyper> load_checkpoint(const std::filesystem::path& path);
std::pair<ConvLstmParams<float>, ConvLstmHyper> decode_checkpoint(std::span<const std::uint8_t> bytes);

} // namespace droughtcast

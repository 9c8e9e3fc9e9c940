#include "droughtcast/convlstm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <utility>

#include "droughtcast/errors.hpp"
#include "droughtcast/metrics.hpp"
#include "droughtcast/parallel.hpp"
#include "droughtcast/rng.hpp"
#include "binary_io.hpp"
#include "text_records.hpp"

namespace droughtcast {

void ConvLstmHyper::validate() const {
    if (in_channels != 1) {
        throw ArgumentError("ConvLSTM takes a single PDSI input channel");
    }
    if (kernel < 1 || kernel % 2 == 0) {
        throw ArgumentError("ConvLSTM kernel must be odd");
    }
    if (embed_channels < 1 || hidden_channels < 1 || history_len < 1 || horizon < 1 || n_classes < 2) {
        throw ArgumentError("ConvLSTM channel counts, history and horizon must be positive");
    }
    if (batch_size < 1 || !(step_size > 0.0) || !(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0) ||
        !(eps > 0.0)) {
        throw ArgumentError("invalid ConvLSTM optimizer settings");
    }
}

namespace {

using Index = Eigen::Index;

template <typename S>
S sigmoid(S z) {
    return z >= S(0) ? S(1) / (S(1) + std::exp(-z)) : std::exp(z) / (S(1) + std::exp(z));
}

void check_grid(GridShape grid, std::size_t kernel) {
    if (grid.rows == 0 || grid.cols == 0 || kernel % 2 == 0) {
        throw ArgumentError("invalid ConvLSTM grid");
    }
}

} // namespace

template <typename Scalar>
ConvLstmParams<Scalar> ConvLstmParams<Scalar>::zeros(const ConvLstmHyper& hyper) {
    hyper.validate();
    const auto k2 = static_cast<Index>(hyper.kernel * hyper.kernel);
    const auto e = static_cast<Index>(hyper.embed_channels);
    const auto h = static_cast<Index>(hyper.hidden_channels);
    const auto in = static_cast<Index>(hyper.in_channels);
    const auto out = static_cast<Index>(hyper.out_channels());
    ConvLstmParams p;
    p.enc_w = FieldMatrix<Scalar>::Zero(e, in * k2);
    p.enc_b = BiasVector<Scalar>::Zero(e);
    p.gate_w = FieldMatrix<Scalar>::Zero(4 * h, (e + h) * k2);
    p.gate_b = BiasVector<Scalar>::Zero(4 * h);
    p.head_w = FieldMatrix<Scalar>::Zero(out, h);
    p.head_b = BiasVector<Scalar>::Zero(out);
    return p;
}

template <typename Scalar>
ConvLstmParams<Scalar> ConvLstmParams<Scalar>::initialize(const ConvLstmHyper& hyper, std::uint64_t seed) {
    auto p = zeros(hyper);
    SplitMix64 rng(seed);
    auto fill = [&](FieldMatrix<Scalar>& w) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(w.cols()));
        for (Index i = 0; i < w.size(); ++i) {
            w.data()[i] = static_cast<Scalar>(rng.uniform(-bound, bound));
        }
    };
    fill(p.enc_w);
    fill(p.gate_w);
    fill(p.head_w);
    const auto h = static_cast<Index>(hyper.hidden_channels);
    p.gate_b.segment(h, h).setConstant(Scalar(1));
    return p;
}

template <typename Scalar>
std::array<std::span<Scalar>, 6> ConvLstmParams<Scalar>::tensors() {
    auto s = [](auto& m) { return std::span<Scalar>(m.data(), static_cast<std::size_t>(m.size())); };
    return {s(enc_w), s(enc_b), s(gate_w), s(gate_b), s(head_w), s(head_b)};
}

template <typename Scalar>
std::array<std::span<const Scalar>, 6> ConvLstmParams<Scalar>::tensors() const {
    auto s = [](const auto& m) { return std::span<const Scalar>(m.data(), static_cast<std::size_t>(m.size())); };
    return {s(enc_w), s(enc_b), s(gate_w), s(gate_b), s(head_w), s(head_b)};
}

template <typename Scalar>
std::size_t ConvLstmParams<Scalar>::count() const {
    std::size_t n = 0;
    for (auto t : tensors()) {
        n += t.size();
    }
    return n;
}

template <typename Scalar>
void ConvLstmParams<Scalar>::set_zero() {
    for (auto t : tensors()) {
        std::fill(t.begin(), t.end(), Scalar(0));
    }
}

template <typename Scalar>
bool ConvLstmParams<Scalar>::all_finite() const {
    for (auto t : tensors()) {
        for (Scalar v : t) {
            if (!std::isfinite(v)) {
                return false;
            }
        }
    }
    return true;
}

template <typename Scalar>
FieldMatrix<Scalar> im2col(const FieldMatrix<Scalar>& field, GridShape grid, std::size_t kernel) {
    const auto rows = static_cast<long>(grid.rows);
    const auto cols = static_cast<long>(grid.cols);
    const auto k = static_cast<long>(kernel);
    const long pad = k / 2;
    const Index channels = field.rows();
    FieldMatrix<Scalar> out = FieldMatrix<Scalar>::Zero(channels * k * k, field.cols());
    for (Index ch = 0; ch < channels; ++ch) {
        const Scalar* src = field.data() + ch * field.cols();
        for (long ky = 0; ky < k; ++ky) {
            for (long kx = 0; kx < k; ++kx) {
                Scalar* dst = out.data() + ((ch * k + ky) * k + kx) * field.cols();
                const long dy = ky - pad;
                const long dx = kx - pad;
                const long c_lo = std::max(0L, -dx);
                const long c_hi = std::min(cols, cols - dx);
                for (long r = 0; r < rows; ++r) {
                    const long rr = r + dy;
                    if (rr < 0 || rr >= rows) {
                        continue;
                    }
                    for (long c = c_lo; c < c_hi; ++c) {
                        dst[r * cols + c] = src[rr * cols + c + dx];
                    }
                }
            }
        }
    }
    return out;
}

template <typename Scalar>
FieldMatrix<Scalar> col2im(const FieldMatrix<Scalar>& colmat, std::size_t channels, GridShape grid,
                           std::size_t kernel) {
    const auto rows = static_cast<long>(grid.rows);
    const auto cols = static_cast<long>(grid.cols);
    const auto k = static_cast<long>(kernel);
    const long pad = k / 2;
    FieldMatrix<Scalar> out = FieldMatrix<Scalar>::Zero(static_cast<Index>(channels), colmat.cols());
    for (Index ch = 0; ch < static_cast<Index>(channels); ++ch) {
        Scalar* dst = out.data() + ch * out.cols();
        for (long ky = 0; ky < k; ++ky) {
            for (long kx = 0; kx < k; ++kx) {
                const Scalar* src = colmat.data() + ((ch * k + ky) * k + kx) * colmat.cols();
                const long dy = ky - pad;
                const long dx = kx - pad;
                const long c_lo = std::max(0L, -dx);
                const long c_hi = std::min(cols, cols - dx);
                for (long r = 0; r < rows; ++r) {
                    const long rr = r + dy;
                    if (rr < 0 || rr >= rows) {
                        continue;
                    }
                    for (long c = c_lo; c < c_hi; ++c) {
                        dst[rr * cols + c + dx] += src[r * cols + c];
                    }
                }
            }
        }
    }
    return out;
}

namespace {

template <typename S>
FieldMatrix<S> add_bias(FieldMatrix<S> m, const BiasVector<S>& b) {
    m.colwise() += b;
    return m;
}

/// Everything one recurrence step needs for the backward pass.
template <typename S>
struct StepCache {
    FieldMatrix<S> cols_x;
    FieldMatrix<S> emb;
    FieldMatrix<S> cols_z;
    FieldMatrix<S> i, f, g, o;
    FieldMatrix<S> c_prev;
    FieldMatrix<S> tanh_c;
};

template <typename S>
FieldMatrix<S> input_field(std::span<const float> window, std::size_t month, std::size_t cells) {
    FieldMatrix<S> x(1, static_cast<Index>(cells));
    const float* src = window.data() + month * cells;
    for (std::size_t j = 0; j < cells; ++j) {
        x(0, static_cast<Index>(j)) = static_cast<S>(src[j]);
    }
    return x;
}

template <typename S>
FieldMatrix<S> embed(const FieldMatrix<S>& cols_x, const ConvLstmParams<S>& p) {
    return add_bias<S>(p.enc_w * cols_x, p.enc_b).array().tanh().matrix();
}

/// Gate activations for one step; returns (i, f, g, o) blocks.
template <typename S>
std::array<FieldMatrix<S>, 4> gates(const FieldMatrix<S>& cols_z, const ConvLstmParams<S>& p, Index h) {
    const FieldMatrix<S> pre = add_bias<S>(p.gate_w * cols_z, p.gate_b);
    auto sig = [](const auto& block) { return block.unaryExpr([](S v) { return sigmoid(v); }).eval(); };
    return {sig(pre.topRows(h)), sig(pre.middleRows(h, h)), pre.middleRows(2 * h, h).array().tanh().matrix().eval(),
            sig(pre.bottomRows(h))};
}

template <typename S>
FieldMatrix<S> stack(const FieldMatrix<S>& a, const FieldMatrix<S>& b) {
    FieldMatrix<S> z(a.rows() + b.rows(), a.cols());
    z.topRows(a.rows()) = a;
    z.bottomRows(b.rows()) = b;
    return z;
}

template <typename S>
FieldMatrix<S> head_probs(const FieldMatrix<S>& logits, std::size_t n_classes) {
    const Index cells = logits.cols();
    FieldMatrix<S> probs(static_cast<Index>(n_classes), cells);
    if (n_classes == 2) {
        for (Index j = 0; j < cells; ++j) {
            const S p = sigmoid(logits(0, j));
            probs(1, j) = p;
            probs(0, j) = S(1) - p;
        }
        return probs;
    }
    for (Index j = 0; j < cells; ++j) {
        const S mx = logits.col(j).maxCoeff();
        S sum = 0;
        for (Index k = 0; k < logits.rows(); ++k) {
            probs(k, j) = std::exp(logits(k, j) - mx);
            sum += probs(k, j);
        }
        probs.col(j) /= sum;
    }
    return probs;
}

/// Forward with caches, then backward; accumulates un-normalized gradients into `grad`.
template <typename S>
std::pair<double, std::size_t> item_loss_and_grad(const ConvLstmParams<S>& p, const WindowItem& item, GridShape grid,
                                                  const ConvLstmHyper& hp, ConvLstmParams<S>& grad) {
    const std::size_t cells = grid.cells();
    const auto h = static_cast<Index>(hp.hidden_channels);
    const auto e = static_cast<Index>(hp.embed_channels);
    const std::size_t steps = hp.history_len;
    std::vector<StepCache<S>> cache(steps);
    auto state = ConvLstmState<S>::zeros(hp.hidden_channels, cells);
    for (std::size_t t = 0; t < steps; ++t) {
        auto& sc = cache[t];
        sc.cols_x = im2col<S>(input_field<S>(item.inputs, t, cells), grid, hp.kernel);
        sc.emb = embed(sc.cols_x, p);
        sc.cols_z = im2col<S>(stack<S>(sc.emb, state.hidden), grid, hp.kernel);
        auto [gi, gf, gg, go] = gates(sc.cols_z, p, h);
        sc.c_prev = state.cell;
        state.cell = (gf.array() * state.cell.array() + gi.array() * gg.array()).matrix();
        sc.tanh_c = state.cell.array().tanh().matrix();
        state.hidden = (go.array() * sc.tanh_c.array()).matrix();
        sc.i = std::move(gi);
        sc.f = std::move(gf);
        sc.g = std::move(gg);
        sc.o = std::move(go);
    }
    const FieldMatrix<S> logits = add_bias<S>(p.head_w * state.hidden, p.head_b);

    // Loss and d(loss)/d(logits) over valid cells.
    FieldMatrix<S> dlogits = FieldMatrix<S>::Zero(logits.rows(), logits.cols());
    double loss = 0.0;
    std::size_t n_valid = 0;
    for (std::size_t j = 0; j < cells; ++j) {
        const int y = item.targets[j];
        if (y < 0) {
            continue;
        }
        ++n_valid;
        const auto col = static_cast<Index>(j);
        if (hp.n_classes == 2) {
            const S z = logits(0, col);
            const S softplus = z > S(0) ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
            loss += static_cast<double>(softplus - (y == 1 ? z : S(0)));
            dlogits(0, col) = sigmoid(z) - (y == 1 ? S(1) : S(0));
        } else {
            const S mx = logits.col(col).maxCoeff();
            S sum = 0;
            for (Index k = 0; k < logits.rows(); ++k) {
                sum += std::exp(logits(k, col) - mx);
            }
            loss += static_cast<double>(mx + std::log(sum) - logits(y, col));
            for (Index k = 0; k < logits.rows(); ++k) {
                dlogits(k, col) = std::exp(logits(k, col) - mx) / sum - (k == y ? S(1) : S(0));
            }
        }
    }
    if (n_valid == 0) {
        return {0.0, 0};
    }

    grad.head_w.noalias() += dlogits * state.hidden.transpose();
    grad.head_b += dlogits.rowwise().sum();
    FieldMatrix<S> dh = p.head_w.transpose() * dlogits;
    FieldMatrix<S> dc = FieldMatrix<S>::Zero(h, static_cast<Index>(cells));
    FieldMatrix<S> dpre(4 * h, static_cast<Index>(cells));
    for (std::size_t step = steps; step-- > 0;) {
        const auto& sc = cache[step];
        const auto tc = sc.tanh_c.array();
        dc.array() += dh.array() * sc.o.array() * (S(1) - tc * tc);
        dpre.topRows(h) = (dc.array() * sc.g.array() * sc.i.array() * (S(1) - sc.i.array())).matrix();
        dpre.middleRows(h, h) = (dc.array() * sc.c_prev.array() * sc.f.array() * (S(1) - sc.f.array())).matrix();
        dpre.middleRows(2 * h, h) = (dc.array() * sc.i.array() * (S(1) - sc.g.array() * sc.g.array())).matrix();
        dpre.bottomRows(h) = (dh.array() * tc * sc.o.array() * (S(1) - sc.o.array())).matrix();
        grad.gate_w.noalias() += dpre * sc.cols_z.transpose();
        grad.gate_b += dpre.rowwise().sum();
        const FieldMatrix<S> dcols = p.gate_w.transpose() * dpre;
        const FieldMatrix<S> dz = col2im<S>(dcols, static_cast<std::size_t>(e + h), grid, hp.kernel);
        dh = dz.bottomRows(h);
        dc = (dc.array() * sc.f.array()).matrix();
        const FieldMatrix<S> demb_pre = (dz.topRows(e).array() * (S(1) - sc.emb.array() * sc.emb.array())).matrix();
        grad.enc_w.noalias() += demb_pre * sc.cols_x.transpose();
        grad.enc_b += demb_pre.rowwise().sum();
    }
    return {loss, n_valid};
}

} // namespace

template <typename Scalar>
ConvLstmState<Scalar> cell_forward(const FieldMatrix<Scalar>& x_embed, const ConvLstmState<Scalar>& state,
                                   const ConvLstmParams<Scalar>& params, GridShape grid, std::size_t kernel) {
    check_grid(grid, kernel);
    const Index h = state.hidden.rows();
    const auto cells = static_cast<Index>(grid.cells());
    if (x_embed.cols() != cells || state.hidden.cols() != cells || state.cell.cols() != cells ||
        state.cell.rows() != h || params.gate_w.rows() != 4 * h ||
        params.gate_w.cols() != (x_embed.rows() + h) * static_cast<Index>(kernel * kernel)) {
        throw ArgumentError("ConvLSTM cell dimensions disagree");
    }
    const auto cols_z = im2col<Scalar>(stack<Scalar>(x_embed, state.hidden), grid, kernel);
    const auto [gi, gf, gg, go] = gates(cols_z, params, h);
    ConvLstmState<Scalar> next;
    next.cell = (gf.array() * state.cell.array() + gi.array() * gg.array()).matrix();
    next.hidden = (go.array() * next.cell.array().tanh()).matrix();
    return next;
}

template <typename Scalar>
FieldMatrix<Scalar> forward(std::span<const float> window, GridShape grid, const ConvLstmParams<Scalar>& params,
                            const ConvLstmHyper& hyper) {
    check_grid(grid, hyper.kernel);
    const std::size_t cells = grid.cells();
    if (window.size() != hyper.history_len * cells) {
        throw ArgumentError("ConvLSTM window must hold exactly history_len months");
    }
    auto state = ConvLstmState<Scalar>::zeros(hyper.hidden_channels, cells);
    for (std::size_t t = 0; t < hyper.history_len; ++t) {
        const auto cols_x = im2col<Scalar>(input_field<Scalar>(window, t, cells), grid, hyper.kernel);
        state = cell_forward<Scalar>(embed(cols_x, params), state, params, grid, hyper.kernel);
    }
    return head_probs<Scalar>(add_bias<Scalar>(params.head_w * state.hidden, params.head_b), hyper.n_classes);
}

template <typename Scalar>
LossAndGrad<Scalar> loss_and_grad(const ConvLstmParams<Scalar>& params, std::span<const WindowItem> batch,
                                  GridShape grid, const ConvLstmHyper& hyper) {
    check_grid(grid, hyper.kernel);
    for (const auto& item : batch) {
        if (item.inputs.size() != hyper.history_len * grid.cells() || item.targets.size() != grid.cells()) {
            throw ArgumentError("ConvLSTM batch item has the wrong shape");
        }
    }
    std::vector<ConvLstmParams<Scalar>> grads(batch.size());
    std::vector<std::pair<double, std::size_t>> parts(batch.size());
    parallel_for(batch.size(), hyper.threads, [&](std::size_t b) {
        grads[b] = ConvLstmParams<Scalar>::zeros(hyper);
        parts[b] = item_loss_and_grad<Scalar>(params, batch[b], grid, hyper, grads[b]);
    });
    LossAndGrad<Scalar> out;
    out.grad = ConvLstmParams<Scalar>::zeros(hyper);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        out.loss += parts[b].first;
        out.n_valid += parts[b].second;
        auto dst = out.grad.tensors();
        const auto src = std::as_const(grads[b]).tensors();
        for (std::size_t t = 0; t < dst.size(); ++t) {
            for (std::size_t i = 0; i < dst[t].size(); ++i) {
                dst[t][i] += src[t][i];
            }
        }
    }
    if (out.n_valid == 0) {
        return out;
    }
    const double inv = 1.0 / static_cast<double>(out.n_valid);
    out.loss *= inv;
    for (auto t : out.grad.tensors()) {
        for (auto& v : t) {
            v *= static_cast<Scalar>(inv);
        }
    }
    if (!std::isfinite(out.loss) || !out.grad.all_finite()) {
        throw DivergenceError("ConvLSTM loss is not finite; reduce step_size");
    }
    return out;
}

WindowSet::WindowSet(const PdsiCube& cube, const LabelCube* labels, const ConvLstmHyper& hyper)
    : grid_{cube.rows(), cube.cols()},
      t_len_(cube.t_len()),
      history_len_(hyper.history_len),
      horizon_(hyper.horizon) {
    if (labels && !(labels->dims() == cube.dims())) {
        throw ArgumentError("label cube dims differ from PDSI cube");
    }
    inputs_.resize(cube.dims().size());
    const auto values = cube.values();
    const auto mask = cube.mask();
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
        inputs_[i] = mask[i] ? values[i] : 0.0f;
    }
    if (labels) {
        const auto l = labels->labels();
        labels_.assign(l.begin(), l.end());
    }
    for (std::size_t t = hyper.first_target(); t < t_len_; ++t) {
        target_months_.push_back(t);
    }
}

std::span<const float> WindowSet::window(std::size_t target_month) const {
    const std::size_t cells = grid_.cells();
    const std::size_t first = target_month - horizon_ - (history_len_ - 1);
    return std::span<const float>(inputs_).subspan(first * cells, history_len_ * cells);
}

WindowItem WindowSet::item(std::size_t target_month) const {
    if (labels_.empty()) {
        throw ArgumentError("window set was built without labels");
    }
    const std::size_t cells = grid_.cells();
    return {window(target_month), std::span<const std::int8_t>(labels_).subspan(target_month * cells, cells)};
}

namespace {

ForecastCube predict_windows(const ConvLstmParams<float>& params, const WindowSet& set, const CubeDims& dims,
                             std::int64_t start_month, const ConvLstmHyper& hyper) {
    ForecastCube out(dims, hyper.n_classes, start_month);
    const auto& targets = set.targets();
    std::vector<FieldMatrix<float>> probs(targets.size());
    parallel_for(targets.size(), hyper.threads,
                 [&](std::size_t i) { probs[i] = forward<float>(set.window(targets[i]), set.grid(), params, hyper); });
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const std::size_t t = targets[i];
        out.set_predicted(t, true);
        for (std::size_t k = 0; k < hyper.n_classes; ++k) {
            for (std::size_t r = 0; r < dims.rows; ++r) {
                for (std::size_t c = 0; c < dims.cols; ++c) {
                    out.set_prob(t, k, r, c, probs[i](static_cast<Index>(k), static_cast<Index>(r * dims.cols + c)));
                }
            }
        }
    }
    return out;
}

double mean_loss(const ForecastCube& forecast, const LabelCube& labels) {
    double loss = 0.0;
    std::size_t n = 0;
    const auto& d = forecast.dims();
    for (std::size_t t = 0; t < d.t_len; ++t) {
        if (!forecast.predicted(t)) {
            continue;
        }
        for (std::size_t r = 0; r < d.rows; ++r) {
            for (std::size_t c = 0; c < d.cols; ++c) {
                if (!labels.valid(t, r, c)) {
                    continue;
                }
                const auto y = static_cast<std::size_t>(labels.label(t, r, c));
                loss -= std::log(std::max(static_cast<double>(forecast.prob(t, y, r, c)), 1e-12));
                ++n;
            }
        }
    }
    return n ? loss / static_cast<double>(n) : 0.0;
}

} // namespace

ConvLstmFit fit_convlstm(const PdsiCube& train, const LabelCube& train_labels, const PdsiCube& val,
                         const LabelCube& val_labels, const ConvLstmHyper& hyper) {
    hyper.validate();
    if (train_labels.n_classes() != hyper.n_classes || val_labels.n_classes() != hyper.n_classes) {
        throw ArgumentError("label class count differs from ConvLSTM head");
    }
    if (train.rows() != val.rows() || train.cols() != val.cols()) {
        throw ArgumentError("train and validation grids differ");
    }
    if (val.t_len() < hyper.history_len + hyper.horizon) {
        throw ArgumentError("validation period too short to form a single window");
    }
    if (train.t_len() < hyper.history_len + hyper.horizon) {
        throw ArgumentError("training period too short to form a single window");
    }
    const WindowSet train_set(train, &train_labels, hyper);
    const WindowSet val_set(val, &val_labels, hyper);

    ConvLstmFit fit;
    fit.params = ConvLstmParams<float>::initialize(hyper, hyper.seed);
    ConvLstmParams<float> m = ConvLstmParams<float>::zeros(hyper);
    ConvLstmParams<float> v = ConvLstmParams<float>::zeros(hyper);
    ConvLstmParams<float> params = fit.params;
    SplitMix64 order_rng(SplitMix64::mix(hyper.seed ^ 0x5EEDBA7C4ULL));
    std::vector<std::size_t> order = train_set.targets();
    double best_score = -std::numeric_limits<double>::infinity();
    std::size_t since_best = 0;
    std::size_t adam_t = 0;
    bool use_loss = false;
    const bool binary = hyper.n_classes == 2;
    fit.score_kind = binary ? "roc_auc" : "accuracy";

    for (std::size_t epoch = 1; epoch <= hyper.max_epochs; ++epoch) {
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[order_rng.below(i)]);
        }
        double loss_sum = 0.0;
        std::size_t batches = 0;
        std::vector<WindowItem> batch;
        for (std::size_t start = 0; start < order.size(); start += hyper.batch_size) {
            batch.clear();
            for (std::size_t j = start; j < std::min(order.size(), start + hyper.batch_size); ++j) {
                batch.push_back(train_set.item(order[j]));
            }
            const auto lg = loss_and_grad<float>(params, batch, train_set.grid(), hyper);
            if (lg.n_valid == 0) {
                continue;
            }
            loss_sum += lg.loss;
            ++batches;
            ++adam_t;
            const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(adam_t));
            const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(adam_t));
            auto pt = params.tensors();
            auto mt = m.tensors();
            auto vt = v.tensors();
            const auto gt = lg.grad.tensors();
            for (std::size_t t = 0; t < pt.size(); ++t) {
                for (std::size_t i = 0; i < pt[t].size(); ++i) {
                    const double g = gt[t][i];
                    const double mi = hyper.beta1 * mt[t][i] + (1.0 - hyper.beta1) * g;
                    const double vi = hyper.beta2 * vt[t][i] + (1.0 - hyper.beta2) * g * g;
                    mt[t][i] = static_cast<float>(mi);
                    vt[t][i] = static_cast<float>(vi);
                    pt[t][i] -= static_cast<float>(hyper.step_size * (mi / c1) / (std::sqrt(vi / c2) + hyper.eps));
                }
            }
        }
        if (!params.all_finite()) {
            throw DivergenceError("ConvLSTM parameters became non-finite; reduce step_size");
        }

        ForecastCube val_forecast = predict_windows(params, val_set, val.dims(), val.start_month(), hyper);
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = batches ? loss_sum / static_cast<double>(batches) : 0.0;
        rec.val_loss = mean_loss(val_forecast, val_labels);
        double score = -rec.val_loss;
        if (!use_loss) {
            try {
                score = per_cell_map(val_forecast, val_labels, binary ? Metric::RocAuc : Metric::Accuracy).median;
            } catch (const EmptyDataError&) {
                if (epoch == 1) {
                    use_loss = true;
                    fit.score_kind = "neg_loss";
                }
            }
        }
        rec.val_score = score;
        rec.improved = score > best_score;
        fit.log.push_back(rec);
        if (rec.improved) {
            best_score = score;
            fit.params = params;
            fit.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best > hyper.patience) {
            break;
        }
    }
    return fit;
}

ForecastCube predict_convlstm(const ConvLstmParams<float>& params, const PdsiCube& cube, const ConvLstmHyper& hyper) {
    hyper.validate();
    if (cube.t_len() < hyper.history_len) {
        throw ArgumentError("cube shorter than the ConvLSTM history");
    }
    const WindowSet set(cube, nullptr, hyper);
    return predict_windows(params, set, cube.dims(), cube.start_month(), hyper);
}

std::string format_training_log(const ConvLstmFit& fit) {
    std::ostringstream out;
    for (const auto& r : fit.log) {
        out << "epoch=" << r.epoch << " train_loss=" << detail::format_real(r.train_loss)
            << " val_loss=" << detail::format_real(r.val_loss) << ' ' << fit.score_kind << '='
            << detail::format_real(r.val_score) << " improved=" << (r.improved ? 1 : 0) << '\n';
    }
    out << "best_epoch=" << fit.best_epoch << '\n';
    return out.str();
}

namespace {
constexpr char kCheckpointMagic[5] = "CLSP";
constexpr std::uint32_t kCheckpointVersion = 1;
} // namespace

std::vector<std::uint8_t> encode_checkpoint(const ConvLstmParams<float>& params, const ConvLstmHyper& hyper) {
    using detail::put_le;
    std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 4);
    put_le<std::uint32_t>(out, kCheckpointVersion);
    for (std::size_t v : {hyper.in_channels, hyper.embed_channels, hyper.hidden_channels, hyper.kernel,
                          hyper.n_classes, hyper.history_len, hyper.horizon, hyper.batch_size, hyper.max_epochs,
                          hyper.patience}) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(v));
    }
    for (double v : {hyper.step_size, hyper.beta1, hyper.beta2, hyper.eps}) {
        put_le<double>(out, v);
    }
    put_le<std::uint64_t>(out, hyper.seed);
    for (auto t : params.tensors()) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.size()));
        for (float v : t) {
            put_le<float>(out, v);
        }
    }
    return out;
}

void save_checkpoint(const ConvLstmParams<float>& params, const ConvLstmHyper& hyper,
                     const std::filesystem::path& path) {
    detail::write_file(path, encode_checkpoint(params, hyper));
}

std::pair<ConvLstmParams<float>, ConvLstmHyper> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    detail::ByteReader in(bytes);
    if (!in.magic(kCheckpointMagic)) {
        throw FormatError("not a CLSP checkpoint (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion) {
        throw UnsupportedVersionError("unsupported CLSP version " + std::to_string(version));
    }
    ConvLstmHyper hp;
    for (std::size_t* f : {&hp.in_channels, &hp.embed_channels, &hp.hidden_channels, &hp.kernel, &hp.n_classes,
                           &hp.history_len, &hp.horizon, &hp.batch_size, &hp.max_epochs, &hp.patience}) {
        *f = in.get<std::uint32_t>();
    }
    for (double* f : {&hp.step_size, &hp.beta1, &hp.beta2, &hp.eps}) {
        *f = in.get<double>();
    }
    hp.seed = in.get<std::uint64_t>();
    try {
        hp.validate();
    } catch (const ArgumentError& e) {
        throw CorruptionError(std::string("CLSP hyper block invalid: ") + e.what());
    }
    auto params = ConvLstmParams<float>::zeros(hp);
    for (auto t : params.tensors()) {
        if (in.get<std::uint32_t>() != t.size()) {
            throw CorruptionError("CLSP tensor size disagrees with hyper block");
        }
        for (auto& v : t) {
            v = in.get<float>();
        }
    }
    if (in.remaining() != 0) {
        throw CorruptionError("trailing bytes after CLSP tensors");
    }
    return {std::move(params), hp};
}

std::pair<ConvLstmParams<float>, ConvLstmHyper> load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(detail::read_file(path));
}

#define DROUGHTCAST_INSTANTIATE(S)                                                                                   \
    template struct ConvLstmParams<S>;                                                                                \
    template FieldMatrix<S> im2col<S>(const FieldMatrix<S>&, GridShape, std::size_t);                                 \
    template FieldMatrix<S> col2im<S>(const FieldMatrix<S>&, std::size_t, GridShape, std::size_t);                    \
    template ConvLstmState<S> cell_forward<S>(const FieldMatrix<S>&, const ConvLstmState<S>&,                         \
                                              const ConvLstmParams<S>&, GridShape, std::size_t);                      \
    template FieldMatrix<S> forward<S>(std::span<const float>, GridShape, const ConvLstmParams<S>&,                   \
                                       const ConvLstmHyper&);                                                         \
    template LossAndGrad<S> loss_and_grad<S>(const ConvLstmParams<S>&, std::span<const WindowItem>, GridShape,        \
                                             const ConvLstmHyper&);

DROUGHTCAST_INSTANTIATE(float)
DROUGHTCAST_INSTANTIATE(double)

#undef DROUGHTCAST_INSTANTIATE

} // namespace droughtcast

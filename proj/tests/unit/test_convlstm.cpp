#include <doctest.h>

#include <cmath>

#include "droughtcast/convlstm.hpp"
#include "droughtcast/errors.hpp"
#include "droughtcast/labeler.hpp"
#include "droughtcast/synthgen.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace droughtcast;

namespace {

ConvLstmHyper tiny(std::size_t n_classes = 2) {
    ConvLstmHyper hp;
    hp.embed_channels = 2;
    hp.hidden_channels = 3;
    hp.n_classes = n_classes;
    hp.history_len = 3;
    return hp;
}

FieldMatrix<double> random_field(oracle::Gen& gen, std::size_t rows, std::size_t cols) {
    FieldMatrix<double> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = gen.normal();
    }
    return m;
}

} // namespace

TEST_SUITE("convlstm") {

TEST_CASE("im2col shape, padding and adjointness") {
    oracle::Gen gen(81);
    const GridShape grid{4, 4};
    FieldMatrix<double> one(1, 16);
    for (int i = 0; i < 16; ++i) {
        one(0, i) = i + 1;
    }
    const auto cols = im2col<double>(one, grid, 3);
    CHECK(cols.rows() == 9);
    CHECK(cols.cols() == 16);
    CHECK(cols(4, 5) == one(0, 5));  // center tap
    CHECK(cols(0, 0) == 0.0);        // up-left of the corner is padding
    CHECK(cols(0, 5) == one(0, 0));
    CHECK(cols(8, 15) == 0.0);

    const GridShape g2{5, 8};
    const auto x = random_field(gen, 5, 40);
    const auto y = random_field(gen, 5 * 9, 40);
    const auto ax = im2col<double>(x, g2, 3);
    CHECK(ax.rows() == 45);
    CHECK(ax.cols() == 40);
    const double lhs = (ax.array() * y.array()).sum();
    const double rhs = (x.array() * col2im<double>(y, 5, g2, 3).array()).sum();
    CHECK(std::abs(lhs - rhs) < 1e-10);
}

TEST_CASE("zero parameters halve the cell state") {
    const ConvLstmHyper hp = tiny();
    const auto p = ConvLstmParams<double>::zeros(hp);
    oracle::Gen gen(82);
    const GridShape grid{3, 2};
    auto state = ConvLstmState<double>::zeros(3, 6);
    state.cell = random_field(gen, 3, 6);
    const auto next = cell_forward<double>(random_field(gen, 2, 6), state, p, grid, 3);
    for (Eigen::Index i = 0; i < state.cell.size(); ++i) {
        const double c = state.cell.data()[i];
        CHECK(next.cell.data()[i] == doctest::Approx(0.5 * c).epsilon(1e-15));
        CHECK(next.hidden.data()[i] == doctest::Approx(0.5 * std::tanh(0.5 * c)).epsilon(1e-15));
    }
}

TEST_CASE("forward with zero parameters is uniform") {
    oracle::Gen gen(83);
    for (std::size_t k : {2u, 3u, 5u}) {
        const ConvLstmHyper hp = tiny(k);
        const GridShape grid{4, 5};
        std::vector<float> w(hp.history_len * grid.cells());
        for (auto& v : w) {
            v = static_cast<float>(gen.normal());
        }
        const auto probs = forward<double>(w, grid, ConvLstmParams<double>::zeros(hp), hp);
        CHECK(probs.rows() == static_cast<Eigen::Index>(k));
        CHECK(probs.cols() == 20);
        for (Eigen::Index i = 0; i < probs.size(); ++i) {
            CHECK(probs.data()[i] == doctest::Approx(1.0 / k).epsilon(1e-15));
        }
        const auto random = forward<double>(w, grid, ConvLstmParams<double>::initialize(hp, 3).cast<double>(), hp);
        for (Eigen::Index c = 0; c < random.cols(); ++c) {
            CHECK(std::abs(random.col(c).sum() - 1.0) < 1e-12);
        }
    }
    std::vector<float> short_window(5);
    CHECK_THROWS_AS(forward<double>(short_window, {2, 2}, ConvLstmParams<double>::zeros(tiny()), tiny()),
                    ArgumentError);
}

TEST_CASE("gradient matches central differences") {
    oracle::Gen gen(84);
    for (std::size_t k : {2u, 3u}) {
        const ConvLstmHyper hp = tiny(k);
        const GridShape grid{5, 6};
        const auto batch = oracle::random_batch(gen, 2, hp, grid);
        auto params = ConvLstmParams<double>::initialize(hp, 11).cast<double>();
        for (auto t : params.tensors()) {
            for (auto& v : t) {
                v += gen.normal(0.1);
            }
        }
        const auto check = oracle::convlstm_gradcheck(params, batch, grid, hp);
        CHECK(check.max_abs <= 1e-6);
        CHECK(check.max_rel <= 1e-4);
    }
}

TEST_CASE("loss edge cases") {
    oracle::Gen gen(85);
    const ConvLstmHyper hp = tiny();
    const GridShape grid{3, 3};
    auto batch = oracle::random_batch(gen, 2, hp, grid, 0.0);
    for (auto& t : batch.targets) {
        std::fill(t.begin(), t.end(), std::int8_t{1});
    }
    auto sure = ConvLstmParams<double>::zeros(hp);
    sure.head_b(0) = 30.0;
    CHECK(loss_and_grad<double>(sure, batch.items, grid, hp).loss <= 1e-6);

    for (auto& t : batch.targets) {
        std::fill(t.begin(), t.end(), std::int8_t{-1});
    }
    const auto params = ConvLstmParams<double>::initialize(hp, 5).cast<double>();
    const auto empty = loss_and_grad<double>(params, batch.items, grid, hp);
    CHECK(empty.loss == 0.0);
    CHECK(empty.n_valid == 0);
    for (auto t : empty.grad.tensors()) {
        CHECK(std::all_of(t.begin(), t.end(), [](double v) { return v == 0.0; }));
    }
}

TEST_CASE("masked cells and thread count do not change the gradient") {
    oracle::Gen gen(86);
    ConvLstmHyper hp = tiny();
    const GridShape grid{4, 4};
    const auto params = ConvLstmParams<double>::initialize(hp, 9).cast<double>();
    auto batch = oracle::random_batch(gen, 5, hp, grid, 0.3);
    const auto base = loss_and_grad<double>(params, batch.items, grid, hp);
    hp.threads = 3;
    const auto threaded = loss_and_grad<double>(params, batch.items, grid, hp);
    CHECK(threaded.loss == base.loss);
    CHECK(threaded.grad == base.grad);

    auto extended = batch;
    // Append one fully masked item: nothing may change.
    extended.inputs.push_back(std::vector<float>(hp.history_len * grid.cells(), 2.0f));
    extended.targets.push_back(std::vector<std::int8_t>(grid.cells(), -1));
    extended.items.clear();
    for (std::size_t i = 0; i < extended.inputs.size(); ++i) {
        extended.items.push_back({extended.inputs[i], extended.targets[i]});
    }
    const auto padded = loss_and_grad<double>(params, extended.items, grid, hp);
    CHECK(padded.loss == doctest::Approx(base.loss).epsilon(1e-14));
    CHECK(padded.n_valid == base.n_valid);
}

TEST_CASE("training is deterministic and respects patience") {
    SynthParams sp;
    sp.t_len = 60;
    sp.rows = 5;
    sp.cols = 5;
    sp.seed = 4;
    const PdsiCube cube = generate(sp);
    const PdsiCube train = cube.slice_time(0, 40);
    const PdsiCube val = cube.slice_time(36, 60);
    ConvLstmHyper hp = tiny();
    hp.max_epochs = 6;
    hp.patience = 0;
    hp.step_size = 0.01;
    const auto a = fit_convlstm(train, binarize(train), val, binarize(val), hp);
    const auto b = fit_convlstm(train, binarize(train), val, binarize(val), hp);
    CHECK(format_training_log(a) == format_training_log(b));
    CHECK(a.params == b.params);
    CHECK(a.score_kind == "roc_auc");
    REQUIRE_FALSE(a.log.empty());
    CHECK(a.log.front().improved);
    // With patience 0 the first non-improving epoch ends training.
    for (std::size_t i = 0; i + 1 < a.log.size(); ++i) {
        CHECK(a.log[i].improved);
    }
    CHECK(a.log[a.best_epoch - 1].improved);
    CHECK(format_training_log(a).find("best_epoch=") != std::string::npos);

    hp.threads = 2;
    CHECK(fit_convlstm(train, binarize(train), val, binarize(val), hp).params == a.params);

    const PdsiCube shortest = cube.slice_time(0, hp.first_target() + 1);
    const ForecastCube fc = predict_convlstm(a.params, shortest, hp);
    CHECK(fc.predicted_months() == 1);
    CHECK(fc.predicted(hp.first_target()));
    CHECK_THROWS_AS(fit_convlstm(train, binarize(train), cube.slice_time(0, 2), binarize(cube.slice_time(0, 2)), hp),
                    ArgumentError);
}

TEST_CASE("checkpoint round trip and damage") {
    ConvLstmHyper hp = tiny(3);
    hp.seed = 77;
    const auto params = ConvLstmParams<float>::initialize(hp, 1);
    oracle::TempDir dir("clsp");
    save_checkpoint(params, hp, dir / "m.clsp");
    const auto [back, back_hp] = load_checkpoint(dir / "m.clsp");
    CHECK(back == params);
    CHECK(back_hp.seed == 77);
    CHECK(back_hp.hidden_channels == 3);
    CHECK(encode_checkpoint(back, back_hp) == oracle::file_bytes(dir / "m.clsp"));

    auto bytes = encode_checkpoint(params, hp);
    auto truncated = bytes;
    truncated.resize(bytes.size() - 3);
    CHECK_THROWS_AS(decode_checkpoint(truncated), CorruptionError);
    auto trailing = bytes;
    trailing.push_back(0);
    CHECK_THROWS_AS(decode_checkpoint(trailing), CorruptionError);
    auto magic = bytes;
    magic[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(magic), FormatError);
    auto version = bytes;
    version[4] = 9;
    CHECK_THROWS_AS(decode_checkpoint(version), UnsupportedVersionError);
    auto kernel = bytes;
    kernel[8 + 3 * 4] = 2;  // even kernel
    CHECK_THROWS_AS(decode_checkpoint(kernel), CorruptionError);
}

} // TEST_SUITE

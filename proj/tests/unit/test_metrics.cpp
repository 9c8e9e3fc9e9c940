#include <doctest.h>

#include <cmath>

#include "droughtcast/errors.hpp"
#include "droughtcast/forecast.hpp"
#include "droughtcast/metrics.hpp"
#include "oracles.hpp"

using namespace droughtcast;

TEST_SUITE("metrics") {

TEST_CASE("roc auc examples") {
    CHECK(*roc_auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, std::vector<int>{0, 0, 1, 1}) == 0.75);
    CHECK(*roc_auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
    CHECK(*roc_auc(std::vector<double>(5, 0.3), std::vector<int>{0, 1, 0, 1, 1}) == 0.5);
    CHECK_FALSE(roc_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}).has_value());
    CHECK_FALSE(roc_auc(std::vector<double>{}, std::vector<int>{}).has_value());
}

TEST_CASE("roc auc equals the pairwise oracle with ties") {
    oracle::Gen gen(41);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = gen.tied_scores(200, 1 + trial % 20);
        auto y = gen.labels(200, gen.uniform(0.1, 0.9));
        y[0] = 0;
        y[1] = 1;
        CHECK(std::abs(*roc_auc(s, y) - oracle::pairwise_auc(s, y)) <= 1e-12);
    }
}

TEST_CASE("roc auc is rank based") {
    oracle::Gen gen(42);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> s(50);
        for (auto& v : s) {
            v = gen.normal();
        }
        auto y = gen.labels(50);
        y[0] = 0;
        y[1] = 1;
        std::vector<double> mapped(50), neg(50);
        for (std::size_t i = 0; i < 50; ++i) {
            mapped[i] = std::exp(3 * s[i]) + 7;
            neg[i] = -s[i];
        }
        CHECK(*roc_auc(mapped, y) == doctest::Approx(*roc_auc(s, y)).epsilon(1e-14));
        CHECK(*roc_auc(s, y) + *roc_auc(neg, y) == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("average precision examples and oracle") {
    CHECK(*pr_auc(std::vector<double>{0.9, 0.8, 0.1}, std::vector<int>{1, 0, 1}) == doctest::Approx(0.8333333333333333));
    CHECK(*pr_auc(std::vector<double>{0.2, 0.5, 0.1}, std::vector<int>{1, 1, 1}) == 1.0);
    CHECK(*pr_auc(std::vector<double>{0.9, 0.8, 0.3, 0.1}, std::vector<int>{1, 1, 0, 0}) == 1.0);
    CHECK_FALSE(pr_auc(std::vector<double>{0.9, 0.8}, std::vector<int>{0, 0}).has_value());
    oracle::Gen gen(43);
    for (int trial = 0; trial < 100; ++trial) {
        const auto s = gen.tied_scores(200, 1 + trial % 15);
        auto y = gen.labels(200, gen.uniform(0.1, 0.9));
        y[0] = 1;
        CHECK(std::abs(*pr_auc(s, y) - oracle::rank_walk_ap(s, y)) <= 1e-12);
    }
}

TEST_CASE("f1 and accuracy examples and oracle") {
    CHECK(f1(std::vector<int>{1, 1, 0, 0}, std::vector<int>{1, 0, 1, 0}) == 0.5);
    CHECK(f1(std::vector<int>{1, 0, 1}, std::vector<int>{1, 0, 1}) == 1.0);
    CHECK(f1(std::vector<int>{0, 0, 0}, std::vector<int>{1, 0, 1}) == 0.0);
    CHECK(f1(std::vector<int>{0, 0}, std::vector<int>{0, 0}) == 0.0);
    CHECK(*accuracy(std::vector<int>{0, 1, 2, 2}, std::vector<int>{0, 1, 1, 2}) == 0.75);
    CHECK(*accuracy(std::vector<int>{2, 1}, std::vector<int>{2, 1}) == 1.0);
    CHECK_FALSE(accuracy(std::vector<int>{}, std::vector<int>{}).has_value());
    oracle::Gen gen(44);
    for (int trial = 0; trial < 100; ++trial) {
        const auto y = gen.labels(200, gen.uniform(0.05, 0.95));
        const auto p = gen.labels(200, gen.uniform(0.05, 0.95));
        CHECK(std::abs(f1(p, y) - oracle::f1_from_counts(oracle::confusion(p, y))) <= 1e-12);
        CHECK(std::abs(*accuracy(p, y) - oracle::match_fraction(p, y)) <= 1e-12);
    }
    // Constant prediction of the prior class gives accuracy equal to its prevalence.
    const std::vector<int> y{0, 0, 0, 1};
    CHECK(*accuracy(std::vector<int>(4, 0), y) == 0.75);
}

TEST_CASE("median") {
    CHECK(*median(std::vector<double>{0.5, 0.9, 0.7}) == 0.7);
    CHECK(*median(std::vector<double>{4, 1, 3, 2}) == 2.5);
    CHECK(*median(std::vector<double>{std::nan(""), 1.0, 3.0}) == 2.0);
    CHECK_FALSE(median(std::vector<double>{std::nan("")}).has_value());
    oracle::Gen gen(45);
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<double> v(1 + gen.index(30));
        for (auto& x : v) {
            x = gen.uniform() < 0.2 ? std::nan("") : gen.normal();
        }
        v.push_back(1.0);
        CHECK(*median(v) == oracle::sorted_median(v));
    }
}

TEST_CASE("metric names parse back") {
    for (Metric m : {Metric::RocAuc, Metric::PrAuc, Metric::F1, Metric::Accuracy}) {
        CHECK(parse_metric(metric_name(m)) == m);
    }
    CHECK_THROWS_AS(parse_metric("brier"), ArgumentError);
}

TEST_CASE("single-class cells are excluded from the median") {
    ForecastCube fc({4, 2, 1}, 2);
    LabelCube l({4, 2, 1}, 2);
    const float s0[] = {0.2f, 0.8f, 0.3f, 0.9f};
    for (std::size_t t = 0; t < 4; ++t) {
        fc.set_predicted(t, true);
        for (std::size_t r = 0; r < 2; ++r) {
            fc.set_prob(t, 1, r, 0, s0[t]);
            fc.set_prob(t, 0, r, 0, 1 - s0[t]);
        }
        l.set(t, 0, 0, 0);
        l.set(t, 1, 0, static_cast<int>(t % 2));
    }
    const MetricMap m = per_cell_map(fc, l, Metric::RocAuc);
    CHECK(std::isnan(m.at(0, 0)));
    CHECK(m.at(1, 0) == 1.0);
    CHECK(m.median == 1.0);
    CHECK(m.n_defined == 1);
}

TEST_CASE("per-cell maps equal a brute-force loop") {
    oracle::Gen gen(46);
    for (int trial = 0; trial < 10; ++trial) {
        const CubeDims dims{12 + gen.index(10), 1 + gen.index(4), 1 + gen.index(4)};
        ForecastCube fc(dims, 2);
        LabelCube l(dims, 2);
        for (std::size_t t = 0; t < dims.t_len; ++t) {
            fc.set_predicted(t, gen.uniform() < 0.8);
            for (std::size_t r = 0; r < dims.rows; ++r) {
                for (std::size_t c = 0; c < dims.cols; ++c) {
                    const float p = static_cast<float>(gen.index(5)) / 4.0f;
                    fc.set_prob(t, 1, r, c, p);
                    fc.set_prob(t, 0, r, c, 1 - p);
                    l.set(t, r, c, gen.uniform() < 0.1 ? -1 : gen.bit(0.4));
                }
            }
        }
        fc.set_predicted(0, true);
        for (Metric metric : {Metric::RocAuc, Metric::PrAuc, Metric::F1, Metric::Accuracy}) {
            std::vector<double> expect(dims.cells(), std::nan(""));
            for (std::size_t r = 0; r < dims.rows; ++r) {
                for (std::size_t c = 0; c < dims.cols; ++c) {
                    std::vector<double> s;
                    std::vector<int> y, p;
                    for (std::size_t t = 0; t < dims.t_len; ++t) {
                        if (fc.predicted(t) && l.valid(t, r, c)) {
                            s.push_back(fc.prob(t, 1, r, c));
                            y.push_back(l.label(t, r, c));
                            p.push_back(fc.prob(t, 1, r, c) > 0.5f ? 1 : 0);
                        }
                    }
                    const auto pos = std::count(y.begin(), y.end(), 1);
                    const auto neg = static_cast<long>(y.size()) - pos;
                    double v = std::nan("");
                    if (metric == Metric::RocAuc && pos > 0 && neg > 0) v = oracle::pairwise_auc(s, y);
                    if (metric == Metric::PrAuc && pos > 0) v = oracle::rank_walk_ap(s, y);
                    if (metric == Metric::F1 && !y.empty()) v = oracle::f1_from_counts(oracle::confusion(p, y));
                    if (metric == Metric::Accuracy && !y.empty()) v = oracle::match_fraction(p, y);
                    expect[r * dims.cols + c] = v;
                }
            }
            const bool any = std::any_of(expect.begin(), expect.end(), [](double v) { return !std::isnan(v); });
            if (!any) {
                CHECK_THROWS_AS(per_cell_map(fc, l, metric), EmptyDataError);
                continue;
            }
            const MetricMap m = per_cell_map(fc, l, metric);
            for (std::size_t i = 0; i < expect.size(); ++i) {
                if (std::isnan(expect[i])) {
                    CHECK(std::isnan(m.values[i]));
                } else {
                    CHECK(std::abs(m.values[i] - expect[i]) <= 1e-12);
                }
            }
            CHECK(std::abs(m.median - oracle::sorted_median(expect)) <= 1e-12);
        }
    }
}

TEST_CASE("constant scores give 0.5 on every defined cell") {
    oracle::Gen gen(47);
    const CubeDims dims{30, 3, 3};
    ForecastCube fc(dims, 2);
    LabelCube l(dims, 2);
    for (std::size_t t = 0; t < dims.t_len; ++t) {
        fc.set_predicted(t, true);
        for (std::size_t r = 0; r < 3; ++r) {
            for (std::size_t c = 0; c < 3; ++c) {
                fc.set_prob(t, 1, r, c, 0.3f);
                fc.set_prob(t, 0, r, c, 0.7f);
                l.set(t, r, c, gen.bit(0.3));
            }
        }
    }
    const MetricMap m = per_cell_map(fc, l, Metric::RocAuc);
    for (double v : m.values) {
        if (!std::isnan(v)) {
            CHECK(v == 0.5);
        }
    }
    CHECK(m.median == 0.5);
}

TEST_CASE("multiclass maps use argmax accuracy") {
    ForecastCube fc({2, 1, 1}, 3);
    LabelCube l({2, 1, 1}, 3);
    for (std::size_t t = 0; t < 2; ++t) {
        fc.set_predicted(t, true);
        fc.set_prob(t, 0, 0, 0, 0.2f);
        fc.set_prob(t, 1, 0, 0, 0.5f);
        fc.set_prob(t, 2, 0, 0, 0.3f);
    }
    l.set(0, 0, 0, 1);
    l.set(1, 0, 0, 2);
    CHECK(per_cell_map(fc, l, Metric::Accuracy).median == 0.5);
    CHECK_THROWS_AS(per_cell_map(fc, l, Metric::RocAuc), ArgumentError);
}

TEST_CASE("cropped maps and CSV round trip") {
    std::vector<double> v(16);
    for (std::size_t i = 0; i < 16; ++i) {
        v[i] = static_cast<double>(i);
    }
    v[5] = std::nan("");
    const MetricMap m = make_metric_map(4, 4, v);
    const MetricMap inner = crop_metric_map(m, 0.25);
    CHECK(inner.rows == 2);
    CHECK(inner.cols == 2);
    CHECK(inner.median == 9.0);  // cells 6, 9, 10; 5 is undefined
    CHECK(crop_metric_map(m, 1.0).values.size() == 16);

    oracle::TempDir dir("map");
    write_metric_map_csv(m, dir / "m.csv");
    const MetricMap back = read_metric_map_csv(dir / "m.csv");
    CHECK(back.rows == 4);
    CHECK(back.cols == 4);
    CHECK(std::isnan(back.at(1, 1)));
    CHECK(back.at(3, 3) == 15.0);
    CHECK(back.median == m.median);
    CHECK_THROWS_AS(make_metric_map(1, 1, {std::nan("")}), EmptyDataError);
}

} // TEST_SUITE

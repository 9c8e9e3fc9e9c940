#include "droughtcast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "droughtcast/errors.hpp"

namespace droughtcast {

namespace {

void check_sizes(std::size_t a, std::size_t b) {
    if (a != b) {
        throw ArgumentError("metric inputs differ in length");
    }
}

} // namespace

std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels) {
    check_sizes(scores.size(), labels.size());
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Mann-Whitney U with mid-ranks; ranks are kept doubled so ties stay integral.
    std::size_t n_pos = 0;
    double rank_sum_x2 = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i + 1;
        while (j < n && scores[order[j]] == scores[order[i]]) {
            ++j;
        }
        const double mid_rank_x2 = static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) {
                ++n_pos;
                rank_sum_x2 += mid_rank_x2;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        return std::nullopt;
    }
    const double np = static_cast<double>(n_pos);
    const double u_x2 = rank_sum_x2 - np * (np + 1.0);
    return u_x2 / (2.0 * np * static_cast<double>(n_neg));
}

std::optional<double> pr_auc(std::span<const double> scores, std::span<const int> labels) {
    check_sizes(scores.size(), labels.size());
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    std::size_t hits = 0;
    double sum = 0.0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    if (hits == 0) {
        return std::nullopt;
    }
    return sum / static_cast<double>(hits);
}

double f1(std::span<const int> predicted, std::span<const int> labels) {
    check_sizes(predicted.size(), labels.size());
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const bool p = predicted[i] == 1;
        const bool y = labels[i] == 1;
        tp += (p && y) ? 1 : 0;
        fp += (p && !y) ? 1 : 0;
        fn += (!p && y) ? 1 : 0;
    }
    if (tp == 0) {
        return 0.0;
    }
    const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    return 2.0 * precision * recall / (precision + recall);
}

std::optional<double> accuracy(std::span<const int> predicted, std::span<const int> labels) {
    check_sizes(predicted.size(), labels.size());
    if (labels.empty()) {
        return std::nullopt;
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        hits += predicted[i] == labels[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::string_view metric_name(Metric m) {
    switch (m) {
    case Metric::RocAuc: return "roc_auc";
    case Metric::PrAuc: return "pr_auc";
    case Metric::F1: return "f1";
    case Metric::Accuracy: return "accuracy";
    }
    return "unknown";
}

Metric parse_metric(std::string_view name) {
    for (auto m : {Metric::RocAuc, Metric::PrAuc, Metric::F1, Metric::Accuracy}) {
        if (metric_name(m) == name) {
            return m;
        }
    }
    throw ArgumentError("unknown metric '" + std::string(name) + "'");
}

std::optional<double> median(std::span<const double> values) {
    std::vector<double> v;
    v.reserve(values.size());
    for (double x : values) {
        if (!std::isnan(x)) {
            v.push_back(x);
        }
    }
    if (v.empty()) {
        return std::nullopt;
    }
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

MetricMap make_metric_map(std::size_t rows, std::size_t cols, std::vector<double> values) {
    if (values.size() != rows * cols) {
        throw ArgumentError("metric map size mismatch");
    }
    MetricMap map;
    map.rows = rows;
    map.cols = cols;
    map.values = std::move(values);
    map.n_defined = static_cast<std::size_t>(
        std::count_if(map.values.begin(), map.values.end(), [](double x) { return !std::isnan(x); }));
    const auto med = median(map.values);
    if (!med) {
        throw EmptyDataError("metric map has no defined cells");
    }
    map.median = *med;
    return map;
}

MetricMap per_cell_map(const ForecastCube& forecast, const LabelCube& labels, Metric metric) {
    const auto& d = forecast.dims();
    if (!(labels.dims() == d)) {
        throw ArgumentError("forecast and label dims differ");
    }
    if (forecast.predicted_months() == 0) {
        throw ArgumentError("forecast has no predicted months");
    }
    const bool binary = forecast.n_classes() == 2;
    if (!binary && metric != Metric::Accuracy) {
        throw ArgumentError(std::string(metric_name(metric)) + " needs a binary forecast");
    }
    std::vector<double> values(d.cells(), std::numeric_limits<double>::quiet_NaN());
    std::vector<double> scores;
    std::vector<int> preds;
    std::vector<int> truth;
    for (std::size_t r = 0; r < d.rows; ++r) {
        for (std::size_t c = 0; c < d.cols; ++c) {
            scores.clear();
            preds.clear();
            truth.clear();
            for (std::size_t t = 0; t < d.t_len; ++t) {
                if (!forecast.predicted(t) || !labels.valid(t, r, c)) {
                    continue;
                }
                truth.push_back(labels.label(t, r, c));
                if (binary) {
                    const double s = forecast.score(t, r, c);
                    scores.push_back(s);
                    preds.push_back(s > kDecisionThreshold ? 1 : 0);
                } else {
                    preds.push_back(forecast.argmax(t, r, c));
                }
            }
            std::optional<double> v;
            switch (metric) {
            case Metric::RocAuc: v = roc_auc(scores, truth); break;
            case Metric::PrAuc: v = pr_auc(scores, truth); break;
            case Metric::F1:
                if (!truth.empty()) {
                    v = f1(preds, truth);
                }
                break;
            case Metric::Accuracy: v = accuracy(preds, truth); break;
            }
            if (v) {
                values[r * d.cols + c] = *v;
            }
        }
    }
    return make_metric_map(d.rows, d.cols, std::move(values));
}

MetricMap crop_metric_map(const MetricMap& map, double keep_area_frac) {
    const auto w = center_crop_window(map.rows, map.cols, keep_area_frac);
    std::vector<double> values;
    values.reserve(w.rows * w.cols);
    for (std::size_t r = 0; r < w.rows; ++r) {
        for (std::size_t c = 0; c < w.cols; ++c) {
            values.push_back(map.at(w.r0 + r, w.c0 + c));
        }
    }
    return make_metric_map(w.rows, w.cols, std::move(values));
}

void write_metric_map_csv(const MetricMap& map, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "row,col,value\n";
    char buf[32];
    for (std::size_t r = 0; r < map.rows; ++r) {
        for (std::size_t c = 0; c < map.cols; ++c) {
            const double v = map.at(r, c);
            if (std::isnan(v)) {
                std::snprintf(buf, sizeof buf, "nan");
            } else {
                std::snprintf(buf, sizeof buf, "%.17g", v);
            }
            out << r << ',' << c << ',' << buf << '\n';
        }
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

MetricMap read_metric_map_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line.rfind("row,col,value", 0) != 0) {
        throw FormatError("metric map CSV must start with 'row,col,value'");
    }
    struct Entry {
        std::size_t r, c;
        double v;
    };
    std::vector<Entry> entries;
    std::size_t rows = 0, cols = 0;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream ss(line);
        std::string a, b, v;
        if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, v)) {
            throw FormatError("metric map CSV: malformed line");
        }
        try {
            Entry e{std::stoull(a), std::stoull(b),
                    v.rfind("nan", 0) == 0 ? std::numeric_limits<double>::quiet_NaN() : std::stod(v)};
            rows = std::max(rows, e.r + 1);
            cols = std::max(cols, e.c + 1);
            entries.push_back(e);
        } catch (const std::logic_error&) {
            throw FormatError("metric map CSV: unparsable line");
        }
    }
    std::vector<double> values(rows * cols, std::numeric_limits<double>::quiet_NaN());
    for (const auto& e : entries) {
        values[e.r * cols + e.c] = e.v;
    }
    return make_metric_map(rows, cols, std::move(values));
}

} // namespace droughtcast

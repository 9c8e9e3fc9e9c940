#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "droughtcast/forecast.hpp"
#include "droughtcast/labeler.hpp"

namespace droughtcast {

// Scalar metrics return std::nullopt when the metric is undefined for the input.

/// P(random positive outscores random negative), ties count 1/2.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const int> labels);

/// Average precision over positives in descending-score order; ties keep input order.
std::optional<double> pr_auc(std::span<const double> scores, std::span<const int> labels);

/// Positive class is label 1. Zero when precision + recall is zero.
double f1(std::span<const int> predicted, std::span<const int> labels);

std::optional<double> accuracy(std::span<const int> predicted, std::span<const int> labels);

enum class Metric { RocAuc, PrAuc, F1, Accuracy };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

/// Probability at or above which a binary forecast counts as drought for F1.
inline constexpr double kDecisionThreshold = 0.5;

/// Sample median; even counts average the middle two. NaN entries are skipped.
std::optional<double> median(std::span<const double> values);

/// Per-cell metric grid (row-major, NaN where undefined) and its median over defined cells.
struct MetricMap {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
    double median = 0.0;
    std::size_t n_defined = 0;

    double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

/// Builds a map from explicit per-cell values. Throws EmptyDataError when none is defined.
MetricMap make_metric_map(std::size_t rows, std::size_t cols, std::vector<double> values);

/**
 * For each cell, collects (forecast, label) over predicted months with a valid label and
 * evaluates `metric`. Throws EmptyDataError when no cell is defined.
 */
MetricMap per_cell_map(const ForecastCube& forecast, const LabelCube& labels, Metric metric);

/// Median recomputed over the centered sub-grid keeping `keep_area_frac` of the area.
MetricMap crop_metric_map(const MetricMap& map, double keep_area_frac);

/// CSV `row,col,value`, literal `nan` for undefined cells.
void write_metric_map_csv(const MetricMap& map, const std::filesystem::path& path);
MetricMap read_metric_map_csv(const std::filesystem::path& path);

} // namespace droughtcast

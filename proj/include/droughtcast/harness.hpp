#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "droughtcast/convlstm.hpp"
#include "droughtcast/forecast.hpp"
#include "droughtcast/gbdt.hpp"
#include "droughtcast/labeler.hpp"
#include "droughtcast/linear_models.hpp"
#include "droughtcast/metrics.hpp"
#include "droughtcast/pdsi_cube.hpp"
#include "droughtcast/synthgen.hpp"

namespace droughtcast {

enum class ModelKind { Baseline, Rolling, LogReg, Gbdt, ConvLstm };

std::string_view model_name(ModelKind kind);
ModelKind parse_model(std::string_view name);

/**
 * Everything that determines an experiment's numbers. Thread count is deliberately absent:
 * results do not depend on it, so it does not enter the hash.
 */
struct ExperimentConfig {
    /// PDSC or CSV cubes, one region each. Empty means one synthetic region from `synth`.
    std::vector<std::string> datasets;
    /// Synthetic region parameters; its seed is replaced by `seed`.
    SynthParams synth;
    /// Optional noisy border band on the synthetic region (0 disables it).
    double border_frac = 0.0;
    /// Border noise standard deviation in PDSI units.
    double border_sd = 0.0;
    std::vector<ModelKind> models{ModelKind::Baseline, ModelKind::LogReg, ModelKind::ConvLstm};
    ClassScheme scheme = ClassScheme::binary();
    /// ConvLSTM input months.
    std::size_t history_len = 6;
    /// Input months for logreg and gbdt.
    std::size_t tabular_history = 1;
    std::size_t neighborhood = 3;
    std::size_t rolling_window = 12;
    std::vector<std::size_t> horizons{1, 3, 6, 12};
    std::uint64_t seed = 0;
    std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
    /// Fraction of the area removed before evaluation.
    std::vector<double> crop_fracs{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    /// Kept area fractions, descending.
    std::vector<double> zoom_areas{1.0, 0.75, 0.5, 0.27};
    double train_frac = 0.7;
    /// Trailing share of the training months used for early stopping (gbdt, convlstm).
    double val_frac = 0.2;
    LogRegHyper logreg;
    GbdtHyper gbdt;
    ConvLstmHyper convlstm;

    void validate() const;
};

/// Canonical key=value entries; set_config_entry accepts exactly these keys.
std::map<std::string, std::string> config_entries(const ExperimentConfig& config);
/// Throws ArgumentError for an unknown key or unparsable value.
void set_config_entry(ExperimentConfig& config, std::string_view key, std::string_view value);
/// Sorted `key=value` lines.
std::string canonical_config(const ExperimentConfig& config);
/// FNV-1a 64 of canonical_config, 16 lowercase hex digits.
std::string config_hash(const ExperimentConfig& config);

/// Metrics reported for a scheme: roc_auc, pr_auc, f1 for binary; accuracy otherwise.
std::vector<Metric> scheme_metrics(const ClassScheme& scheme);

struct TrainedModel {
    ModelKind kind = ModelKind::Baseline;
    ClassScheme scheme = ClassScheme::binary();
    std::size_t horizon = 1;
    WindowSpec window;
    std::size_t rolling_window = 12;
    BaselineModel baseline;
    LinearModel linear;
    GbdtModel gbdt;
    ConvLstmParams<float> convlstm;
    ConvLstmHyper convlstm_hyper;
    std::string training_log;
};

/**
 * Fits `kind` on months [0, train_len) of `cube`. Labels come from config.scheme. Gbdt and
 * ConvLSTM hold out the last val_frac of those months for early stopping.
 */
TrainedModel train_model(const PdsiCube& cube, std::size_t train_len, const ExperimentConfig& config, ModelKind kind,
                         std::size_t horizon, std::uint64_t seed, std::size_t threads = 1);

/// Forecast for every month of `cube` the model can reach.
ForecastCube forecast(const TrainedModel& model, const PdsiCube& cube, std::size_t threads = 1);

/// ConvLSTM models go to a CLSP checkpoint, the rest to a text file.
void save_model(const TrainedModel& model, const std::filesystem::path& path);
TrainedModel load_model(const std::filesystem::path& path, const ClassScheme& scheme);

struct ReportRow {
    std::string experiment;
    std::string model;
    std::string region;
    std::size_t horizon = 0;
    std::string seed;
    std::string crop;
    std::string area;
    std::string metric;
    double value = 0.0;
    std::string config_hash;

    bool operator==(const ReportRow&) const = default;
};

struct ReportTable {
    std::vector<ReportRow> rows;

    /// Header `experiment,model,region,horizon,seed,crop,area,metric,value,config_hash`.
    std::string to_csv() const;
    void write_csv(const std::filesystem::path& path) const;
    /// First row matching all given fields; throws ArgumentError if absent.
    double value(std::string_view model, std::string_view metric, std::size_t horizon,
                 std::string_view region = {}, std::string_view seed = {}, std::string_view crop = {},
                 std::string_view area = {}) const;
};

struct Region {
    std::string name;
    PdsiCube cube;
};

/// Synthetic cube described by config.synth, seed and border noise settings.
PdsiCube synthetic_cube(const ExperimentConfig& config);
/// Regions named by file stem, or the single region "synthetic".
std::vector<Region> load_regions(const ExperimentConfig& config);

/// Out-of-time split, train, forecast the test months, per-cell median metrics.
struct RunOutcome {
    ForecastCube forecast;  // restricted to test months
    LabelCube labels;
    TrainedModel model;
};
RunOutcome run_once(const PdsiCube& cube, const ExperimentConfig& config, ModelKind kind, std::size_t horizon,
                    std::uint64_t seed, std::size_t threads = 1);

/// One row block per (region, model, horizon); with several regions also region "mean".
ReportTable horizon_sweep(const std::vector<Region>& regions, const ExperimentConfig& config,
                          std::size_t threads = 1);
ReportTable region_table(const std::vector<Region>& regions, const ExperimentConfig& config,
                         std::size_t horizon = 6, std::size_t threads = 1);
/// First configured horizon; one model per kind evaluated on every crop fraction.
ReportTable crop_study(const Region& region, const ExperimentConfig& config, std::size_t threads = 1);
/// One model per training area, evaluated on every equal-or-smaller area. Area field "train/eval".
ReportTable zoom_study(const Region& region, const ExperimentConfig& config, std::size_t threads = 1);
/// Member rows per seed plus seed "ensemble" for the averaged probabilities.
ReportTable seed_ensemble(const Region& region, const ExperimentConfig& config, std::size_t threads = 1);
/// Median accuracy per (model, horizon); scheme must have 3 or 5 classes.
ReportTable multiclass_study(const Region& region, const ExperimentConfig& config, std::size_t threads = 1);

} // namespace droughtcast

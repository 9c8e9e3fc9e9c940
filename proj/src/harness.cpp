#include "droughtcast/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "droughtcast/errors.hpp"
#include "droughtcast/parallel.hpp"
#include "droughtcast/rng.hpp"
#include "binary_io.hpp"
#include "text_records.hpp"

namespace droughtcast {

namespace {

constexpr std::array<std::pair<ModelKind, std::string_view>, 5> kModelNames{{
    {ModelKind::Baseline, "baseline"},
    {ModelKind::Rolling, "rolling"},
    {ModelKind::LogReg, "logreg"},
    {ModelKind::Gbdt, "gbdt"},
    {ModelKind::ConvLstm, "convlstm"},
}};

std::string short_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::vector<std::string_view> split_list(std::string_view text) {
    std::vector<std::string_view> out;
    while (!text.empty()) {
        const auto comma = text.find(',');
        out.push_back(text.substr(0, comma));
        if (comma == std::string_view::npos) {
            break;
        }
        text.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
    T v{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || end != text.data() + text.size() || text.empty()) {
        throw ArgumentError("bad value '" + std::string(text) + "' for " + std::string(key));
    }
    return v;
}

template <typename T>
std::vector<T> parse_numbers(std::string_view key, std::string_view text) {
    std::vector<T> out;
    for (auto item : split_list(text)) {
        out.push_back(parse_number<T>(key, item));
    }
    return out;
}

bool parse_bool(std::string_view key, std::string_view text) {
    if (text == "1" || text == "true") {
        return true;
    }
    if (text == "0" || text == "false") {
        return false;
    }
    throw ArgumentError("bad boolean '" + std::string(text) + "' for " + std::string(key));
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::string out;
    for (const auto& v : values) {
        if (!out.empty()) {
            out += ',';
        }
        if constexpr (std::is_floating_point_v<T>) {
            out += detail::format_real(v);
        } else {
            out += std::to_string(v);
        }
    }
    return out;
}

std::string scheme_name(const ClassScheme& scheme) {
    if (scheme.is_binary()) {
        return "binary";
    }
    if (scheme == ClassScheme::three_class()) {
        return "three_class";
    }
    if (scheme == ClassScheme::five_class()) {
        return "five_class";
    }
    return "custom";
}

/// Rethrows a library error with the experiment step prefixed, keeping its category.
template <typename Fn>
auto with_context(const std::string& context, Fn&& fn) {
    try {
        return fn();
    } catch (const DivergenceError& e) {
        throw DivergenceError(context + ": " + e.what());
    } catch (const ArgumentError& e) {
        throw ArgumentError(context + ": " + e.what());
    } catch (const DataError& e) {
        throw DataError(context + ": " + e.what());
    }
}

WindowSpec tabular_window(const ExperimentConfig& config, std::size_t horizon) {
    WindowSpec w;
    w.history_len = config.tabular_history;
    w.horizon = horizon;
    w.neighborhood = config.neighborhood;
    return w;
}

ConvLstmHyper convlstm_hyper(const ExperimentConfig& config, std::size_t horizon, std::uint64_t seed,
                             std::size_t threads) {
    ConvLstmHyper h = config.convlstm;
    h.n_classes = config.scheme.n_classes();
    h.history_len = config.history_len;
    h.horizon = horizon;
    h.seed = seed;
    h.threads = threads;
    return h;
}

DesignMatrix subset(const DesignMatrix& design, bool before, std::size_t t_split) {
    DesignMatrix out;
    out.width = design.width;
    out.n_classes = design.n_classes;
    for (std::size_t i = 0; i < design.size(); ++i) {
        if ((design.origins[i].t < t_split) != before) {
            continue;
        }
        out.features.insert(out.features.end(), design.row(i), design.row(i) + design.width);
        out.targets.push_back(design.targets[i]);
        out.origins.push_back(design.origins[i]);
    }
    return out;
}

ForecastCube tabular_forecast(const DesignMatrix& design, const std::vector<double>& probs, const PdsiCube& cube,
                              std::size_t n_classes) {
    ForecastCube out(cube.dims(), n_classes, cube.start_month());
    for (std::size_t i = 0; i < design.size(); ++i) {
        const auto& o = design.origins[i];
        out.set_predicted(o.t, true);
        for (std::size_t k = 0; k < n_classes; ++k) {
            out.set_prob(o.t, k, o.row, o.col, static_cast<float>(probs[i * n_classes + k]));
        }
    }
    return out;
}

std::size_t validation_months(const ExperimentConfig& config, std::size_t train_len) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(config.val_frac * static_cast<double>(train_len))));
}

} // namespace

std::string_view model_name(ModelKind kind) {
    for (const auto& [k, name] : kModelNames) {
        if (k == kind) {
            return name;
        }
    }
    return "unknown";
}

ModelKind parse_model(std::string_view name) {
    for (const auto& [k, n] : kModelNames) {
        if (n == name) {
            return k;
        }
    }
    throw ArgumentError("unknown model '" + std::string(name) + "'");
}

void ExperimentConfig::validate() const {
    if (models.empty()) {
        throw ArgumentError("no models configured");
    }
    if (horizons.empty() || std::find(horizons.begin(), horizons.end(), 0u) != horizons.end()) {
        throw ArgumentError("horizons must be a non-empty list of values >= 1");
    }
    if (seeds.empty()) {
        throw ArgumentError("seeds must not be empty");
    }
    if (!(train_frac > 0.0 && train_frac < 1.0)) {
        throw ArgumentError("train_frac must lie in (0, 1)");
    }
    if (!(val_frac > 0.0 && val_frac <= 0.5)) {
        throw ArgumentError("val_frac must lie in (0, 0.5]");
    }
    if (history_len < 1 || tabular_history < 1 || rolling_window < 1) {
        throw ArgumentError("history lengths and rolling_window must be >= 1");
    }
    if (neighborhood < 1 || neighborhood % 2 == 0) {
        throw ArgumentError("neighborhood must be odd");
    }
    for (double f : crop_fracs) {
        if (!(f >= 0.0 && f <= 0.9)) {
            throw ArgumentError("crop fractions must lie in [0, 0.9]");
        }
    }
    for (double a : zoom_areas) {
        if (!(a > 0.0 && a <= 1.0)) {
            throw ArgumentError("zoom areas must lie in (0, 1]");
        }
    }
    if (!(border_frac >= 0.0 && border_frac < 0.5) || !(border_sd >= 0.0)) {
        throw ArgumentError("border noise needs 0 <= synth.border_frac < 0.5 and synth.border_sd >= 0");
    }
    if (datasets.empty()) {
        synth.validate();
    }
    gbdt.validate();
    convlstm_hyper(*this, 1, seed, 1).validate();
}

std::map<std::string, std::string> config_entries(const ExperimentConfig& c) {
    std::vector<std::string> models;
    for (auto m : c.models) {
        models.emplace_back(model_name(m));
    }
    std::string model_list;
    for (const auto& m : models) {
        model_list += (model_list.empty() ? "" : ",") + m;
    }
    const auto& cl = c.convlstm;
    std::string datasets;
    for (const auto& d : c.datasets) {
        datasets += (datasets.empty() ? "" : ",") + d;
    }
    const auto& sp = c.synth;
    return {
        {"datasets", datasets},
        {"synth.t_len", std::to_string(sp.t_len)},
        {"synth.rows", std::to_string(sp.rows)},
        {"synth.cols", std::to_string(sp.cols)},
        {"synth.ar_coeff", detail::format_real(sp.ar_coeff)},
        {"synth.spatial_sigma", detail::format_real(sp.spatial_sigma)},
        {"synth.seasonal_amp", detail::format_real(sp.seasonal_amp)},
        {"synth.noise_sd", detail::format_real(sp.noise_sd)},
        {"synth.value_scale", detail::format_real(sp.value_scale)},
        {"synth.border_frac", detail::format_real(c.border_frac)},
        {"synth.border_sd", detail::format_real(c.border_sd)},
        {"models", model_list},
        {"scheme", scheme_name(c.scheme)},
        {"thresholds", join(c.scheme.thresholds())},
        {"history_len", std::to_string(c.history_len)},
        {"tabular_history", std::to_string(c.tabular_history)},
        {"neighborhood", std::to_string(c.neighborhood)},
        {"rolling_window", std::to_string(c.rolling_window)},
        {"horizons", join(c.horizons)},
        {"seed", std::to_string(c.seed)},
        {"seeds", join(c.seeds)},
        {"crop_fracs", join(c.crop_fracs)},
        {"zoom_areas", join(c.zoom_areas)},
        {"train_frac", detail::format_real(c.train_frac)},
        {"val_frac", detail::format_real(c.val_frac)},
        {"logreg.l2", detail::format_real(c.logreg.l2)},
        {"logreg.max_epochs", std::to_string(c.logreg.max_epochs)},
        {"logreg.step_size", detail::format_real(c.logreg.step_size)},
        {"logreg.tol", detail::format_real(c.logreg.tol)},
        {"logreg.standardize", c.logreg.standardize ? "1" : "0"},
        {"gbdt.max_depth", std::to_string(c.gbdt.max_depth)},
        {"gbdt.n_rounds", std::to_string(c.gbdt.n_rounds)},
        {"gbdt.learning_rate", detail::format_real(c.gbdt.learning_rate)},
        {"gbdt.lambda", detail::format_real(c.gbdt.lambda)},
        {"gbdt.gamma", detail::format_real(c.gbdt.gamma)},
        {"gbdt.min_child_weight", detail::format_real(c.gbdt.min_child_weight)},
        {"gbdt.patience", std::to_string(c.gbdt.patience)},
        {"convlstm.embed_channels", std::to_string(cl.embed_channels)},
        {"convlstm.hidden_channels", std::to_string(cl.hidden_channels)},
        {"convlstm.kernel", std::to_string(cl.kernel)},
        {"convlstm.step_size", detail::format_real(cl.step_size)},
        {"convlstm.beta1", detail::format_real(cl.beta1)},
        {"convlstm.beta2", detail::format_real(cl.beta2)},
        {"convlstm.eps", detail::format_real(cl.eps)},
        {"convlstm.batch_size", std::to_string(cl.batch_size)},
        {"convlstm.max_epochs", std::to_string(cl.max_epochs)},
        {"convlstm.patience", std::to_string(cl.patience)},
    };
}

void set_config_entry(ExperimentConfig& c, std::string_view key, std::string_view value) {
    using Z = std::size_t;
    auto sz = [&] { return parse_number<Z>(key, value); };
    auto real = [&] { return parse_number<double>(key, value); };
    auto& cl = c.convlstm;
    auto& sp = c.synth;
    if (key == "datasets") {
        c.datasets.clear();
        for (auto d : split_list(value)) {
            c.datasets.emplace_back(d);
        }
    } else if (key == "synth.t_len") {
        sp.t_len = sz();
    } else if (key == "synth.rows") {
        sp.rows = sz();
    } else if (key == "synth.cols") {
        sp.cols = sz();
    } else if (key == "synth.ar_coeff") {
        sp.ar_coeff = real();
    } else if (key == "synth.spatial_sigma") {
        sp.spatial_sigma = real();
    } else if (key == "synth.seasonal_amp") {
        sp.seasonal_amp = real();
    } else if (key == "synth.noise_sd") {
        sp.noise_sd = real();
    } else if (key == "synth.value_scale") {
        sp.value_scale = real();
    } else if (key == "synth.border_frac") {
        c.border_frac = real();
    } else if (key == "synth.border_sd") {
        c.border_sd = real();
    } else if (key == "models") {
        c.models.clear();
        for (auto name : split_list(value)) {
            c.models.push_back(parse_model(name));
        }
    } else if (key == "scheme") {
        if (value == "binary") {
            c.scheme = ClassScheme::binary();
        } else if (value == "three_class") {
            c.scheme = ClassScheme::three_class();
        } else if (value == "five_class") {
            c.scheme = ClassScheme::five_class();
        } else if (value != "custom") {
            throw ArgumentError("unknown scheme '" + std::string(value) + "'");
        }
    } else if (key == "thresholds") {
        c.scheme = ClassScheme(parse_numbers<double>(key, value));
    } else if (key == "threshold") {
        c.scheme = ClassScheme::binary(real());
    } else if (key == "history_len") {
        c.history_len = sz();
    } else if (key == "tabular_history") {
        c.tabular_history = sz();
    } else if (key == "neighborhood") {
        c.neighborhood = sz();
    } else if (key == "rolling_window") {
        c.rolling_window = sz();
    } else if (key == "horizons") {
        c.horizons = parse_numbers<Z>(key, value);
    } else if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "seeds") {
        c.seeds = parse_numbers<std::uint64_t>(key, value);
    } else if (key == "crop_fracs") {
        c.crop_fracs = parse_numbers<double>(key, value);
    } else if (key == "zoom_areas") {
        c.zoom_areas = parse_numbers<double>(key, value);
    } else if (key == "train_frac") {
        c.train_frac = real();
    } else if (key == "val_frac") {
        c.val_frac = real();
    } else if (key == "logreg.l2") {
        c.logreg.l2 = real();
    } else if (key == "logreg.max_epochs") {
        c.logreg.max_epochs = sz();
    } else if (key == "logreg.step_size") {
        c.logreg.step_size = real();
    } else if (key == "logreg.tol") {
        c.logreg.tol = real();
    } else if (key == "logreg.standardize") {
        c.logreg.standardize = parse_bool(key, value);
    } else if (key == "gbdt.max_depth") {
        c.gbdt.max_depth = sz();
    } else if (key == "gbdt.n_rounds") {
        c.gbdt.n_rounds = sz();
    } else if (key == "gbdt.learning_rate") {
        c.gbdt.learning_rate = real();
    } else if (key == "gbdt.lambda") {
        c.gbdt.lambda = real();
    } else if (key == "gbdt.gamma") {
        c.gbdt.gamma = real();
    } else if (key == "gbdt.min_child_weight") {
        c.gbdt.min_child_weight = real();
    } else if (key == "gbdt.patience") {
        c.gbdt.patience = sz();
    } else if (key == "convlstm.embed_channels") {
        cl.embed_channels = sz();
    } else if (key == "convlstm.hidden_channels") {
        cl.hidden_channels = sz();
    } else if (key == "convlstm.kernel") {
        cl.kernel = sz();
    } else if (key == "convlstm.step_size") {
        cl.step_size = real();
    } else if (key == "convlstm.beta1") {
        cl.beta1 = real();
    } else if (key == "convlstm.beta2") {
        cl.beta2 = real();
    } else if (key == "convlstm.eps") {
        cl.eps = real();
    } else if (key == "convlstm.batch_size") {
        cl.batch_size = sz();
    } else if (key == "convlstm.max_epochs") {
        cl.max_epochs = sz();
    } else if (key == "convlstm.patience") {
        cl.patience = sz();
    } else {
        throw ArgumentError("unknown config key '" + std::string(key) + "'");
    }
}

std::string canonical_config(const ExperimentConfig& config) {
    std::string out;
    for (const auto& [k, v] : config_entries(config)) {
        out += k + '=' + v + '\n';
    }
    return out;
}

std::string config_hash(const ExperimentConfig& config) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_config(config)) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

std::vector<Metric> scheme_metrics(const ClassScheme& scheme) {
    if (scheme.is_binary()) {
        return {Metric::RocAuc, Metric::PrAuc, Metric::F1};
    }
    return {Metric::Accuracy};
}

TrainedModel train_model(const PdsiCube& cube, std::size_t train_len, const ExperimentConfig& config, ModelKind kind,
                         std::size_t horizon, std::uint64_t seed, std::size_t threads) {
    if (train_len == 0 || train_len > cube.t_len()) {
        throw ArgumentError("training length outside the cube");
    }
    TrainedModel model;
    model.kind = kind;
    model.scheme = config.scheme;
    model.horizon = horizon;
    model.window = tabular_window(config, horizon);
    model.rolling_window = config.rolling_window;
    const PdsiCube train = cube.slice_time(0, train_len);
    const LabelCube labels = apply_scheme(train, config.scheme);
    const std::size_t val_len = validation_months(config, train_len);
    const std::size_t fit_end = train_len > val_len ? train_len - val_len : 0;

    switch (kind) {
    case ModelKind::Baseline:
    case ModelKind::Rolling:
        model.baseline = fit_majority(labels);
        break;
    case ModelKind::LogReg: {
        LogRegTrace trace;
        model.linear = fit_logreg(build_design(train, labels, model.window), config.logreg, nullptr, &trace);
        std::ostringstream log;
        for (std::size_t i = 0; i < trace.objective.size(); ++i) {
            log << "step=" << i << " objective=" << detail::format_real(trace.objective[i]) << '\n';
        }
        log << "converged=" << (trace.converged ? 1 : 0) << " grad_norm_inf=" << detail::format_real(trace.grad_norm_inf)
            << '\n';
        model.training_log = log.str();
        break;
    }
    case ModelKind::Gbdt: {
        const DesignMatrix all = build_design(train, labels, model.window);
        const DesignMatrix fit_part = subset(all, true, fit_end);
        const DesignMatrix val_part = subset(all, false, fit_end);
        std::vector<double> train_loss;
        std::vector<double> valid_loss;
        GbdtFitOptions options;
        options.train_loss = &train_loss;
        options.valid_loss = &valid_loss;
        if (val_part.size() > 0 && fit_part.size() >= 2) {
            options.validation = &val_part;
        }
        model.gbdt = fit_gbdt(options.validation ? fit_part : all, config.gbdt, options);
        std::ostringstream log;
        for (std::size_t i = 0; i < train_loss.size(); ++i) {
            log << "round=" << i << " train_loss=" << detail::format_real(train_loss[i]);
            if (i < valid_loss.size()) {
                log << " val_loss=" << detail::format_real(valid_loss[i]);
            }
            log << '\n';
        }
        model.training_log = log.str();
        break;
    }
    case ModelKind::ConvLstm: {
        model.convlstm_hyper = convlstm_hyper(config, horizon, seed, threads);
        const std::size_t lead = model.convlstm_hyper.first_target();
        if (fit_end <= lead) {
            throw ArgumentError("training period too short for the ConvLSTM history and validation split");
        }
        const PdsiCube fit_cube = train.slice_time(0, fit_end);
        const PdsiCube val_cube = train.slice_time(fit_end - lead, train_len);
        const ConvLstmFit fit = fit_convlstm(fit_cube, labels.slice_time(0, fit_end), val_cube,
                                             labels.slice_time(fit_end - lead, train_len), model.convlstm_hyper);
        model.convlstm = fit.params;
        model.training_log = format_training_log(fit);
        break;
    }
    }
    return model;
}

ForecastCube forecast(const TrainedModel& model, const PdsiCube& cube, std::size_t threads) {
    const std::size_t n_classes = model.scheme.n_classes();
    switch (model.kind) {
    case ModelKind::Baseline:
        return predict_majority(model.baseline, cube.dims(), cube.start_month());
    case ModelKind::Rolling: {
        ForecastCube out = predict_rolling(apply_scheme(cube, model.scheme), model.rolling_window, model.horizon,
                                           model.baseline.class_prior);
        return out;
    }
    case ModelKind::LogReg: {
        const DesignMatrix design = build_features(cube, model.window);
        return tabular_forecast(design, predict_logreg(model.linear, design), cube, n_classes);
    }
    case ModelKind::Gbdt: {
        const DesignMatrix design = build_features(cube, model.window);
        return tabular_forecast(design, predict_gbdt(model.gbdt, design), cube, n_classes);
    }
    case ModelKind::ConvLstm: {
        ConvLstmHyper h = model.convlstm_hyper;
        h.threads = threads;
        return predict_convlstm(model.convlstm, cube, h);
    }
    }
    throw ArgumentError("unknown model kind");
}

void save_model(const TrainedModel& model, const std::filesystem::path& path) {
    if (model.kind == ModelKind::ConvLstm) {
        save_checkpoint(model.convlstm, model.convlstm_hyper, path);
        return;
    }
    detail::RecordWriter w("droughtcast-model", 1);
    w.put("kind", std::string(model_name(model.kind)));
    w.put("thresholds", model.scheme.thresholds());
    w.put("horizon", model.horizon);
    w.put("history_len", model.window.history_len);
    w.put("neighborhood", model.window.neighborhood);
    w.put("rolling_window", model.rolling_window);
    w.line("body");
    std::string body;
    switch (model.kind) {
    case ModelKind::Baseline:
    case ModelKind::Rolling:
        body = serialize_baseline(model.baseline);
        break;
    case ModelKind::LogReg:
        body = serialize_linear(model.linear);
        break;
    case ModelKind::Gbdt:
        body = serialize_gbdt(model.gbdt);
        break;
    case ModelKind::ConvLstm:
        break;
    }
    detail::write_text(path, w.str() + body);
}

TrainedModel load_model(const std::filesystem::path& path, const ClassScheme& scheme) {
    const auto bytes = detail::read_file(path);
    TrainedModel model;
    if (bytes.size() >= 4 && std::equal(bytes.begin(), bytes.begin() + 4, "CLSP")) {
        auto [params, hyper] = decode_checkpoint(bytes);
        if (hyper.n_classes != scheme.n_classes()) {
            throw ArgumentError("checkpoint has " + std::to_string(hyper.n_classes) + " classes, scheme has " +
                                std::to_string(scheme.n_classes()));
        }
        model.kind = ModelKind::ConvLstm;
        model.scheme = scheme;
        model.horizon = hyper.horizon;
        model.convlstm = std::move(params);
        model.convlstm_hyper = hyper;
        return model;
    }
    const std::string text(bytes.begin(), bytes.end());
    const auto marker = text.find("\nbody\n");
    if (marker == std::string::npos) {
        throw FormatError(path.string() + " is not a droughtcast model file");
    }
    detail::RecordReader r(text.substr(0, marker + 1), "droughtcast-model", 1);
    const std::string body = text.substr(marker + 6);
    model.kind = parse_model(r.get("kind"));
    model.scheme = ClassScheme(r.get_reals("thresholds"));
    model.horizon = r.get_size("horizon");
    model.window.history_len = r.get_size("history_len");
    model.window.horizon = model.horizon;
    model.window.neighborhood = r.get_size("neighborhood");
    model.rolling_window = r.get_size("rolling_window");
    switch (model.kind) {
    case ModelKind::Baseline:
    case ModelKind::Rolling:
        model.baseline = deserialize_baseline(body);
        break;
    case ModelKind::LogReg:
        model.linear = deserialize_linear(body);
        break;
    case ModelKind::Gbdt:
        model.gbdt = deserialize_gbdt(body);
        break;
    case ModelKind::ConvLstm:
        throw FormatError("ConvLSTM models are stored as CLSP checkpoints");
    }
    return model;
}

std::string ReportTable::to_csv() const {
    std::string out = "experiment,model,region,horizon,seed,crop,area,metric,value,config_hash\n";
    for (const auto& r : rows) {
        out += r.experiment + ',' + r.model + ',' + r.region + ',' + std::to_string(r.horizon) + ',' + r.seed + ',' +
               r.crop + ',' + r.area + ',' + r.metric + ',' + detail::format_real(r.value) + ',' + r.config_hash +
               '\n';
    }
    return out;
}

void ReportTable::write_csv(const std::filesystem::path& path) const {
    detail::write_text(path, to_csv());
}

double ReportTable::value(std::string_view model, std::string_view metric, std::size_t horizon,
                          std::string_view region, std::string_view seed, std::string_view crop,
                          std::string_view area) const {
    for (const auto& r : rows) {
        if (r.model == model && r.metric == metric && r.horizon == horizon && (region.empty() || r.region == region) &&
            (seed.empty() || r.seed == seed) && (crop.empty() || r.crop == crop) && (area.empty() || r.area == area)) {
            return r.value;
        }
    }
    throw ArgumentError("no report row for " + std::string(model) + " " + std::string(metric));
}

PdsiCube synthetic_cube(const ExperimentConfig& config) {
    SynthParams params = config.synth;
    params.seed = config.seed;
    PdsiCube cube = generate(params);
    if (config.border_frac > 0.0 && config.border_sd > 0.0) {
        cube = add_border_noise(cube, config.border_frac, config.border_sd, SplitMix64::mix(config.seed + 1));
    }
    return cube;
}

std::vector<Region> load_regions(const ExperimentConfig& config) {
    if (config.datasets.empty()) {
        return {{"synthetic", synthetic_cube(config)}};
    }
    std::vector<Region> regions;
    for (const auto& d : config.datasets) {
        const std::filesystem::path path(d);
        regions.push_back({path.stem().string(), path.extension() == ".csv" ? load_cube_csv(path) : load_cube(path)});
    }
    return regions;
}

RunOutcome run_once(const PdsiCube& cube, const ExperimentConfig& config, ModelKind kind, std::size_t horizon,
                    std::uint64_t seed, std::size_t threads) {
    const std::size_t train_len = train_length(cube.t_len(), config.train_frac);
    RunOutcome out;
    out.model = train_model(cube, train_len, config, kind, horizon, seed, threads);
    out.forecast = forecast(out.model, cube, threads);
    out.forecast.restrict_months(train_len, cube.t_len());
    out.labels = apply_scheme(cube, config.scheme);
    return out;
}

namespace {

struct RowTemplate {
    std::string experiment;
    std::string model;
    std::string region;
    std::size_t horizon = 0;
    std::string seed;
    std::string crop;
    std::string area;
};

void append_metrics(std::vector<ReportRow>& rows, const RowTemplate& t, const std::vector<Metric>& metrics,
                    const std::vector<MetricMap>& maps, const std::string& hash) {
    for (std::size_t i = 0; i < metrics.size(); ++i) {
        rows.push_back({t.experiment, t.model, t.region, t.horizon, t.seed, t.crop, t.area,
                        std::string(metric_name(metrics[i])), maps[i].median, hash});
    }
}

std::vector<MetricMap> evaluate(const ForecastCube& fc, const LabelCube& labels, const std::vector<Metric>& metrics) {
    std::vector<MetricMap> maps;
    for (Metric m : metrics) {
        maps.push_back(per_cell_map(fc, labels, m));
    }
    return maps;
}

std::string run_context(std::string_view experiment, std::string_view region, ModelKind kind, std::size_t horizon) {
    return std::string(experiment) + " region=" + std::string(region) + " model=" + std::string(model_name(kind)) +
           " horizon=" + std::to_string(horizon);
}

/// Worker count for each job so the total stays near `threads`.
std::size_t inner_threads(std::size_t jobs, std::size_t threads) {
    return jobs >= threads ? 1 : std::max<std::size_t>(1, threads / std::max<std::size_t>(1, jobs));
}

ReportTable grid_sweep(const std::string& experiment, const std::vector<Region>& regions,
                       const ExperimentConfig& config, const std::vector<std::size_t>& horizons, std::size_t threads) {
    config.validate();
    if (regions.empty()) {
        throw ArgumentError("at least one region is required");
    }
    const std::string hash = config_hash(config);
    const auto metrics = scheme_metrics(config.scheme);
    struct Job {
        std::size_t region;
        ModelKind kind;
        std::size_t horizon;
    };
    std::vector<Job> jobs;
    for (std::size_t r = 0; r < regions.size(); ++r) {
        for (auto kind : config.models) {
            for (auto h : horizons) {
                jobs.push_back({r, kind, h});
            }
        }
    }
    const std::size_t inner = inner_threads(jobs.size(), threads);
    std::vector<std::vector<ReportRow>> parts(jobs.size());
    parallel_for(jobs.size(), threads, [&](std::size_t j) {
        const auto& job = jobs[j];
        const auto& region = regions[job.region];
        with_context(run_context(experiment, region.name, job.kind, job.horizon), [&] {
            const auto run = run_once(region.cube, config, job.kind, job.horizon, config.seed, inner);
            append_metrics(parts[j],
                           {experiment, std::string(model_name(job.kind)), region.name, job.horizon,
                            std::to_string(config.seed), "", ""},
                           metrics, evaluate(run.forecast, run.labels, metrics), hash);
            return 0;
        });
    });
    ReportTable table;
    for (auto& p : parts) {
        table.rows.insert(table.rows.end(), p.begin(), p.end());
    }
    if (regions.size() > 1) {
        for (auto kind : config.models) {
            for (auto h : horizons) {
                for (Metric m : metrics) {
                    double sum = 0.0;
                    for (const auto& region : regions) {
                        sum += table.value(model_name(kind), metric_name(m), h, region.name);
                    }
                    table.rows.push_back({experiment, std::string(model_name(kind)), "mean", h,
                                          std::to_string(config.seed), "", "", std::string(metric_name(m)),
                                          sum / static_cast<double>(regions.size()), hash});
                }
            }
        }
    }
    return table;
}

} // namespace

ReportTable horizon_sweep(const std::vector<Region>& regions, const ExperimentConfig& config, std::size_t threads) {
    return grid_sweep("horizon", regions, config, config.horizons, threads);
}

ReportTable region_table(const std::vector<Region>& regions, const ExperimentConfig& config, std::size_t horizon,
                         std::size_t threads) {
    if (horizon < 1) {
        throw ArgumentError("horizon must be >= 1");
    }
    return grid_sweep("region", regions, config, {horizon}, threads);
}

ReportTable multiclass_study(const Region& region, const ExperimentConfig& config, std::size_t threads) {
    const std::size_t k = config.scheme.n_classes();
    if (k != 3 && k != 5) {
        throw ArgumentError("multiclass study needs a 3- or 5-class scheme");
    }
    return grid_sweep("multiclass", {region}, config, config.horizons, threads);
}

ReportTable crop_study(const Region& region, const ExperimentConfig& config, std::size_t threads) {
    config.validate();
    for (double f : config.crop_fracs) {
        const auto w = center_crop_window(region.cube.rows(), region.cube.cols(), 1.0 - f);
        if (w.rows * w.cols < 4) {
            throw ArgumentError("crop " + short_real(f) + " leaves fewer than 4 cells");
        }
    }
    const std::string hash = config_hash(config);
    const auto metrics = scheme_metrics(config.scheme);
    const std::size_t horizon = config.horizons.front();
    const auto& models = config.models;
    const std::size_t inner = inner_threads(models.size(), threads);
    std::vector<std::vector<ReportRow>> parts(models.size());
    parallel_for(models.size(), threads, [&](std::size_t j) {
        with_context(run_context("crop", region.name, models[j], horizon), [&] {
            const auto run = run_once(region.cube, config, models[j], horizon, config.seed, inner);
            const auto maps = evaluate(run.forecast, run.labels, metrics);
            for (double f : config.crop_fracs) {
                std::vector<MetricMap> cropped;
                for (const auto& m : maps) {
                    cropped.push_back(crop_metric_map(m, 1.0 - f));
                }
                append_metrics(parts[j],
                               {"crop", std::string(model_name(models[j])), region.name, horizon,
                                std::to_string(config.seed), short_real(f), ""},
                               metrics, cropped, hash);
            }
            return 0;
        });
    });
    ReportTable table;
    for (auto& p : parts) {
        table.rows.insert(table.rows.end(), p.begin(), p.end());
    }
    return table;
}

ReportTable zoom_study(const Region& region, const ExperimentConfig& config, std::size_t threads) {
    config.validate();
    const auto& areas = config.zoom_areas;
    if (areas.empty()) {
        throw ArgumentError("zoom study needs at least one area");
    }
    for (std::size_t i = 1; i < areas.size(); ++i) {
        if (!(areas[i] < areas[i - 1])) {
            throw ArgumentError("zoom areas must be strictly descending (nested)");
        }
    }
    const std::string hash = config_hash(config);
    const auto metrics = scheme_metrics(config.scheme);
    const std::size_t horizon = config.horizons.front();
    const std::size_t train_len = train_length(region.cube.t_len(), config.train_frac);
    struct Job {
        ModelKind kind;
        std::size_t area;
    };
    std::vector<Job> jobs;
    for (auto kind : config.models) {
        for (std::size_t a = 0; a < areas.size(); ++a) {
            jobs.push_back({kind, a});
        }
    }
    const std::size_t inner = inner_threads(jobs.size(), threads);
    std::vector<std::vector<ReportRow>> parts(jobs.size());
    parallel_for(jobs.size(), threads, [&](std::size_t j) {
        const auto& job = jobs[j];
        with_context(run_context("zoom", region.name, job.kind, horizon), [&] {
            const PdsiCube train_area = crop_center(region.cube, areas[job.area]);
            const auto model = train_model(train_area, train_len, config, job.kind, horizon, config.seed, inner);
            for (std::size_t e = job.area; e < areas.size(); ++e) {
                const PdsiCube eval_area = crop_center(region.cube, areas[e]);
                ForecastCube fc = forecast(model, eval_area, inner);
                fc.restrict_months(train_len, eval_area.t_len());
                append_metrics(parts[j],
                               {"zoom", std::string(model_name(job.kind)), region.name, horizon,
                                std::to_string(config.seed), "", short_real(areas[job.area]) + "/" + short_real(areas[e])},
                               metrics, evaluate(fc, apply_scheme(eval_area, config.scheme), metrics), hash);
            }
            return 0;
        });
    });
    ReportTable table;
    for (auto& p : parts) {
        table.rows.insert(table.rows.end(), p.begin(), p.end());
    }
    return table;
}

ReportTable seed_ensemble(const Region& region, const ExperimentConfig& config, std::size_t threads) {
    config.validate();
    if (config.seeds.size() < 2) {
        throw ArgumentError("a seed ensemble needs at least two seeds");
    }
    const std::string hash = config_hash(config);
    const auto metrics = scheme_metrics(config.scheme);
    const std::size_t horizon = config.horizons.front();
    struct Job {
        ModelKind kind;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto kind : config.models) {
        for (auto s : config.seeds) {
            jobs.push_back({kind, s});
        }
    }
    const std::size_t inner = inner_threads(jobs.size(), threads);
    std::vector<RunOutcome> runs(jobs.size());
    parallel_for(jobs.size(), threads, [&](std::size_t j) {
        runs[j] = with_context(run_context("ensemble", region.name, jobs[j].kind, horizon), [&] {
            return run_once(region.cube, config, jobs[j].kind, horizon, jobs[j].seed, inner);
        });
    });
    ReportTable table;
    const std::size_t n_seeds = config.seeds.size();
    for (std::size_t m = 0; m < config.models.size(); ++m) {
        const std::string name(model_name(config.models[m]));
        std::vector<ForecastCube> members;
        for (std::size_t s = 0; s < n_seeds; ++s) {
            const auto& run = runs[m * n_seeds + s];
            append_metrics(table.rows,
                           {"ensemble", name, region.name, horizon, std::to_string(config.seeds[s]), "", ""}, metrics,
                           evaluate(run.forecast, run.labels, metrics), hash);
            members.push_back(run.forecast);
        }
        const ForecastCube avg = average_forecasts(members);
        append_metrics(table.rows, {"ensemble", name, region.name, horizon, "ensemble", "", ""}, metrics,
                       evaluate(avg, runs[m * n_seeds].labels, metrics), hash);
    }
    return table;
}

} // namespace droughtcast

#include "droughtcast/cli.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "droughtcast/errors.hpp"
#include "droughtcast/harness.hpp"
#include "droughtcast/render.hpp"
#include "binary_io.hpp"
#include "text_records.hpp"

namespace droughtcast {

namespace fs = std::filesystem;

namespace {

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) {
        return {};
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct Globals {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> threads;
    std::string out;
    std::vector<std::string> sets;
};

struct Inputs {
    std::vector<std::string> paths;
    std::string model;
    std::optional<std::size_t> horizon;
};

std::size_t resolve_threads(const Globals& g) {
    if (g.threads) {
        return std::max<std::size_t>(1, *g.threads);
    }
    if (const char* env = std::getenv("DROUGHTCAST_THREADS")) {
        char* end = nullptr;
        const unsigned long n = std::strtoul(env, &end, 10);
        if (end == env || *end != '\0' || n == 0) {
            throw ArgumentError("DROUGHTCAST_THREADS must be a positive integer");
        }
        return n;
    }
    return 1;
}

/// Defaults, then the config file, then flags.
ExperimentConfig resolve_config(const Globals& g, const std::vector<std::pair<std::string, std::string>>& flags) {
    ExperimentConfig config;
    if (!g.config_path.empty()) {
        const auto bytes = detail::read_file(g.config_path);
        for (const auto& [k, v] : parse_config_text(std::string(bytes.begin(), bytes.end()))) {
            set_config_entry(config, k, v);
        }
    }
    for (const auto& s : g.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ArgumentError("--set expects key=value, got '" + s + "'");
        }
        set_config_entry(config, trim(std::string_view(s).substr(0, eq)), trim(std::string_view(s).substr(eq + 1)));
    }
    for (const auto& [k, v] : flags) {
        set_config_entry(config, k, v);
    }
    if (g.seed) {
        config.seed = *g.seed;
    }
    config.validate();
    return config;
}

fs::path require_out(const Globals& g) {
    if (g.out.empty()) {
        throw ArgumentError("this command needs --out");
    }
    return g.out;
}

/// Output file path with its parent directory created.
fs::path out_file(const Globals& g) {
    const fs::path path = require_out(g);
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) {
            throw IoError("cannot create " + path.parent_path().string() + ": " + ec.message());
        }
    }
    return path;
}

fs::path out_dir(const Globals& g) {
    const fs::path dir = require_out(g);
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    return dir;
}

void announce(const ExperimentConfig& config, std::ostream& out, const fs::path* config_file) {
    out << "config_hash=" << config_hash(config) << '\n';
    if (config_file) {
        detail::write_text(*config_file, canonical_config(config));
    }
}

PdsiCube single_cube(const ExperimentConfig& config) {
    auto regions = load_regions(config);
    if (regions.size() != 1) {
        throw ArgumentError("this command takes exactly one cube");
    }
    return std::move(regions.front().cube);
}

std::string model_file_name(ModelKind kind) {
    return kind == ModelKind::ConvLstm ? "model.clsp" : "model.txt";
}

void print_table(const ReportTable& table, std::ostream& out) {
    for (const auto& r : table.rows) {
        out << r.experiment << ' ' << r.model << ' ' << r.region << " h=" << r.horizon << " seed=" << r.seed;
        if (!r.crop.empty()) {
            out << " crop=" << r.crop;
        }
        if (!r.area.empty()) {
            out << " area=" << r.area;
        }
        out << ' ' << r.metric << '=' << detail::format_real(r.value) << '\n';
    }
}

std::vector<std::pair<std::string, std::string>> input_flags(const Inputs& in) {
    std::vector<std::pair<std::string, std::string>> flags;
    if (!in.paths.empty()) {
        std::string joined;
        for (const auto& p : in.paths) {
            joined += (joined.empty() ? "" : ",") + p;
        }
        flags.emplace_back("datasets", joined);
    }
    if (!in.model.empty()) {
        flags.emplace_back("models", in.model);
    }
    if (in.horizon) {
        flags.emplace_back("horizons", std::to_string(*in.horizon));
    }
    return flags;
}

} // namespace

std::vector<std::pair<std::string, std::string>> parse_config_text(std::string_view text) {
    std::vector<std::pair<std::string, std::string>> entries;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        const std::string_view line = trim(text.substr(0, nl));
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        if (line.empty() || line.front() == '#') {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos || trim(line.substr(0, eq)).empty()) {
            throw ArgumentError("config line " + std::to_string(line_no) + ": expected key=value");
        }
        entries.emplace_back(std::string(trim(line.substr(0, eq))), std::string(trim(line.substr(eq + 1))));
    }
    return entries;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Drought forecasting on monthly PDSI grids", "droughtcast"};
    app.require_subcommand(1);
    app.fallthrough();
    Globals g;
    app.add_option("--config", g.config_path, "key=value config file");
    app.add_option("--seed", g.seed, "Random seed");
    app.add_option("--threads", g.threads, "Worker threads (default: DROUGHTCAST_THREADS or 1)");
    app.add_option("--out", g.out, "Output file (synth, render) or directory");
    app.add_option("--set", g.sets, "Config override key=value (repeatable)");

    Inputs in;
    std::vector<std::pair<std::string, std::string>> synth_flags;

    auto* synth = app.add_subcommand("synth", "Generate a synthetic PDSI cube");
    struct SynthFlag {
        const char* flag;
        const char* key;
        std::string value;
    };
    std::vector<SynthFlag> synth_opts{{"--t-len", "synth.t_len", {}},          {"--rows", "synth.rows", {}},
                                      {"--cols", "synth.cols", {}},            {"--ar-coeff", "synth.ar_coeff", {}},
                                      {"--border-frac", "synth.border_frac", {}}, {"--border-sd", "synth.border_sd", {}}};
    for (auto& o : synth_opts) {
        synth->add_option(o.flag, o.value, o.key);
    }

    auto* stats = app.add_subcommand("stats", "Drought share of a cube");
    stats->add_option("cube", in.paths, "PDSC or CSV cube");

    auto* split = app.add_subcommand("split", "Out-of-time train/test split");
    split->add_option("cube", in.paths, "PDSC or CSV cube");

    auto* train = app.add_subcommand("train", "Train one model on the training months");
    train->add_option("cube", in.paths, "PDSC or CSV cube (default: synthetic)");
    train->add_option("--model", in.model, "baseline, rolling, logreg, gbdt or convlstm");
    train->add_option("--horizon", in.horizon, "Forecast horizon in months");

    std::string model_path;
    auto* predict = app.add_subcommand("predict", "Forecast a cube with a trained model");
    predict->add_option("model", model_path, "Model file")->required();
    predict->add_option("cube", in.paths, "PDSC or CSV cube (default: synthetic)");

    std::string forecast_path;
    auto* evaluate = app.add_subcommand("evaluate", "Per-cell median metrics of a forecast on the test months");
    evaluate->add_option("forecast", forecast_path, "PDSF forecast")->required();
    evaluate->add_option("cube", in.paths, "PDSC or CSV cube (default: synthetic)");

    std::string ablation;
    auto* ablate = app.add_subcommand("ablate", "Crop, zoom, seed-ensemble or multiclass study");
    ablate->add_option("study", ablation, "crop, zoom, ensemble or multiclass")
        ->required()
        ->check(CLI::IsMember({"crop", "zoom", "ensemble", "multiclass"}));
    ablate->add_option("cube", in.paths, "PDSC or CSV cube (default: synthetic)");
    std::size_t classes = 3;
    ablate->add_option("--classes", classes, "Class count for the multiclass study when the scheme is binary")
        ->check(CLI::IsMember({3, 5}));

    std::string sweep_kind;
    std::size_t region_horizon = 6;
    auto* sweep = app.add_subcommand("sweep", "Horizon sweep or per-region table");
    sweep->add_option("table", sweep_kind, "horizons or regions")
        ->required()
        ->check(CLI::IsMember({"horizons", "regions"}));
    sweep->add_option("cubes", in.paths, "PDSC or CSV cubes, one region each (default: synthetic)");
    sweep->add_option("--horizon", region_horizon, "Horizon for the region table");

    std::string render_input;
    std::optional<std::size_t> month;
    std::optional<std::size_t> klass;
    std::string palette;
    std::optional<double> vmin;
    std::optional<double> vmax;
    std::string title;
    auto* render = app.add_subcommand("render", "SVG map of a metric map CSV, forecast or cube month");
    render->add_option("input", render_input, "metric map .csv, forecast .pdsf or cube .pdsc")->required();
    render->add_option("--month", month, "Month index for forecasts and cubes (default: last available)");
    render->add_option("--class", klass, "Forecast class (default: drought for binary, else 0)");
    render->add_option("--palette", palette, "#rrggbb:#rrggbb low and high colors");
    render->add_option("--vmin", vmin, "Value mapped to the low color");
    render->add_option("--vmax", vmax, "Value mapped to the high color");
    render->add_option("--title", title, "Title text");

    std::vector<std::string> argv_store{"droughtcast"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<const char*> argv;
    for (const auto& a : argv_store) {
        argv.push_back(a.c_str());
    }
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        const std::size_t threads = resolve_threads(g);
        if (synth->parsed()) {
            for (const auto& o : synth_opts) {
                if (!o.value.empty()) {
                    synth_flags.emplace_back(o.key, o.value);
                }
            }
            synth_flags.emplace_back("datasets", "");
            const auto config = resolve_config(g, synth_flags);
            const fs::path path = out_file(g);
            const fs::path config_file = fs::path(path.string() + ".config");
            save_cube(synthetic_cube(config), path);
            announce(config, out, &config_file);
            out << "wrote " << path.string() << '\n';
        } else if (stats->parsed()) {
            const auto config = resolve_config(g, input_flags(in));
            if (!config.scheme.is_binary()) {
                throw ArgumentError("stats needs a binary scheme");
            }
            const PdsiCube cube = single_cube(config);
            announce(config, out, nullptr);
            const auto s = summarize(cube, config.scheme);
            out << "span_months=" << s.span_months << " pct_normal=" << detail::format_real(s.pct_normal)
                << " pct_drought=" << detail::format_real(s.pct_drought) << '\n';
        } else if (split->parsed()) {
            const auto config = resolve_config(g, input_flags(in));
            const PdsiCube cube = single_cube(config);
            const fs::path dir = out_dir(g);
            const fs::path config_file = dir / "resolved.config";
            const auto [train_cube, test_cube] = out_of_time_split(cube, config.train_frac);
            save_cube(train_cube, dir / "train.pdsc");
            save_cube(test_cube, dir / "test.pdsc");
            announce(config, out, &config_file);
            out << "train_months=" << train_cube.t_len() << " test_months=" << test_cube.t_len() << '\n';
        } else if (train->parsed()) {
            const auto config = resolve_config(g, input_flags(in));
            const PdsiCube cube = single_cube(config);
            const fs::path dir = out_dir(g);
            const fs::path config_file = dir / "resolved.config";
            const ModelKind kind = config.models.front();
            const auto model = train_model(cube, train_length(cube.t_len(), config.train_frac), config, kind,
                                           config.horizons.front(), config.seed, threads);
            save_model(model, dir / model_file_name(kind));
            detail::write_text(dir / "train.log", model.training_log);
            announce(config, out, &config_file);
            out << "wrote " << (dir / model_file_name(kind)).string() << '\n';
        } else if (predict->parsed()) {
            const auto config = resolve_config(g, input_flags(in));
            const PdsiCube cube = single_cube(config);
            const fs::path dir = out_dir(g);
            const fs::path config_file = dir / "resolved.config";
            const auto model = load_model(model_path, config.scheme);
            save_forecast(forecast(model, cube, threads), dir / "forecast.pdsf");
            announce(config, out, &config_file);
            out << "wrote " << (dir / "forecast.pdsf").string() << '\n';
        } else if (evaluate->parsed()) {
            const auto config = resolve_config(g, input_flags(in));
            const PdsiCube cube = single_cube(config);
            ForecastCube fc = load_forecast(forecast_path);
            if (!(fc.dims() == cube.dims()) || fc.n_classes() != config.scheme.n_classes()) {
                throw DataError("forecast shape or class count does not match the cube and scheme");
            }
            fc.restrict_months(train_length(cube.t_len(), config.train_frac), cube.t_len());
            const LabelCube labels = apply_scheme(cube, config.scheme);
            const std::string hash = config_hash(config);
            ReportTable table;
            std::vector<std::pair<Metric, MetricMap>> maps;
            for (Metric m : scheme_metrics(config.scheme)) {
                maps.emplace_back(m, per_cell_map(fc, labels, m));
                table.rows.push_back({"evaluate", fs::path(forecast_path).stem().string(), "", 0,
                                      std::to_string(config.seed), "", "", std::string(metric_name(m)),
                                      maps.back().second.median, hash});
            }
            if (!g.out.empty()) {
                const fs::path dir = out_dir(g);
                const fs::path config_file = dir / "resolved.config";
                table.write_csv(dir / "metrics.csv");
                for (const auto& [m, map] : maps) {
                    write_metric_map_csv(map, dir / (std::string(metric_name(m)) + "_map.csv"));
                }
                announce(config, out, &config_file);
            } else {
                announce(config, out, nullptr);
            }
            for (const auto& [m, map] : maps) {
                out << metric_name(m) << '=' << detail::format_real(map.median) << '\n';
            }
        } else if (ablate->parsed()) {
            auto flags = input_flags(in);
            auto config = resolve_config(g, flags);
            if (ablation == "multiclass" && config.scheme.is_binary()) {
                config.scheme = classes == 5 ? ClassScheme::five_class() : ClassScheme::three_class();
            }
            const auto regions = load_regions(config);
            if (regions.size() != 1) {
                throw ArgumentError("ablations take exactly one cube");
            }
            const fs::path dir = out_dir(g);
            const fs::path config_file = dir / "resolved.config";
            ReportTable table;
            if (ablation == "crop") {
                table = crop_study(regions.front(), config, threads);
            } else if (ablation == "zoom") {
                table = zoom_study(regions.front(), config, threads);
            } else if (ablation == "ensemble") {
                table = seed_ensemble(regions.front(), config, threads);
            } else {
                table = multiclass_study(regions.front(), config, threads);
            }
            table.write_csv(dir / (ablation + ".csv"));
            announce(config, out, &config_file);
            print_table(table, out);
        } else if (sweep->parsed()) {
            const auto config = resolve_config(g, input_flags(in));
            const auto regions = load_regions(config);
            const fs::path dir = out_dir(g);
            const fs::path config_file = dir / "resolved.config";
            const ReportTable table = sweep_kind == "horizons" ? horizon_sweep(regions, config, threads)
                                                               : region_table(regions, config, region_horizon, threads);
            table.write_csv(dir / (sweep_kind == "horizons" ? "horizon.csv" : "region.csv"));
            announce(config, out, &config_file);
            print_table(table, out);
        } else if (render->parsed()) {
            const auto config = resolve_config(g, {});
            const fs::path path = out_file(g);
            RenderOptions options;
            if (!palette.empty()) {
                options.palette = Palette::parse(palette);
            }
            options.vmin = vmin;
            options.vmax = vmax;
            options.title = title;
            const fs::path input(render_input);
            std::size_t rows = 0;
            std::size_t cols = 0;
            std::vector<double> values;
            if (input.extension() == ".csv") {
                const MetricMap map = read_metric_map_csv(input);
                rows = map.rows;
                cols = map.cols;
                values = map.values;
            } else if (input.extension() == ".pdsf") {
                const ForecastCube fc = load_forecast(input);
                std::optional<std::size_t> t = month;
                if (!t) {
                    for (std::size_t i = fc.dims().t_len; i-- > 0;) {
                        if (fc.predicted(i)) {
                            t = i;
                            break;
                        }
                    }
                }
                if (!t || *t >= fc.dims().t_len || !fc.predicted(*t)) {
                    throw ArgumentError("no forecast for the requested month");
                }
                const std::size_t k = klass.value_or(fc.n_classes() == 2 ? 1 : 0);
                if (k >= fc.n_classes()) {
                    throw ArgumentError("class index out of range");
                }
                rows = fc.dims().rows;
                cols = fc.dims().cols;
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        values.push_back(fc.prob(*t, k, r, c));
                    }
                }
            } else {
                const PdsiCube cube = load_cube(input);
                const std::size_t t = month.value_or(cube.t_len() - 1);
                if (t >= cube.t_len()) {
                    throw ArgumentError("month index out of range");
                }
                rows = cube.rows();
                cols = cube.cols();
                for (std::size_t r = 0; r < rows; ++r) {
                    for (std::size_t c = 0; c < cols; ++c) {
                        values.push_back(cube.valid(t, r, c) ? cube.value(t, r, c) : std::nan(""));
                    }
                }
            }
            write_svg(render_svg(rows, cols, values, options), path);
            announce(config, out, nullptr);
            out << "wrote " << path.string() << '\n';
        }
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kExitDivergence;
    } catch (const ArgumentError& e) {
        err << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitData;
    }
    return kExitOk;
}

} // namespace droughtcast

#include "droughtcast/featurizer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>

#include "droughtcast/errors.hpp"

namespace droughtcast {

void WindowSpec::validate() const {
    if (history_len < 1 || horizon < 1) {
        throw ArgumentError("history_len and horizon must be >= 1");
    }
    if (neighborhood < 1 || neighborhood % 2 == 0) {
        throw ArgumentError("neighborhood must be odd and >= 1");
    }
}

namespace {

void fill_features(const PdsiCube& cube, const WindowSpec& spec, std::size_t t, std::size_t r, std::size_t c,
                   double* out) {
    const auto k = static_cast<long>(spec.neighborhood);
    const long half = k / 2;
    const std::size_t first = t - spec.horizon - (spec.history_len - 1);
    std::size_t j = 0;
    for (std::size_t h = 0; h < spec.history_len; ++h) {
        const std::size_t month = first + h;
        for (long dy = 0; dy < k; ++dy) {
            for (long dx = 0; dx < k; ++dx, ++j) {
                const long rr = static_cast<long>(r) + dy - half;
                const long cc = static_cast<long>(c) + dx - half;
                double v = 0.0;
                if (rr >= 0 && cc >= 0 && rr < static_cast<long>(cube.rows()) && cc < static_cast<long>(cube.cols())) {
                    const auto ur = static_cast<std::size_t>(rr);
                    const auto uc = static_cast<std::size_t>(cc);
                    if (cube.valid(month, ur, uc)) {
                        v = cube.value(month, ur, uc);
                    }
                }
                out[j] = v;
            }
        }
    }
}

void check_length(const PdsiCube& cube, const WindowSpec& spec) {
    spec.validate();
    if (cube.t_len() < spec.history_len + spec.horizon) {
        throw ArgumentError("cube has " + std::to_string(cube.t_len()) + " months; window needs at least " +
                            std::to_string(spec.history_len + spec.horizon));
    }
}

} // namespace

DesignMatrix build_design(const PdsiCube& cube, const LabelCube& labels, const WindowSpec& spec) {
    check_length(cube, spec);
    if (!(labels.dims() == cube.dims())) {
        throw ArgumentError("label cube dims differ from PDSI cube");
    }
    DesignMatrix design;
    design.width = spec.width();
    design.n_classes = labels.n_classes();
    const std::size_t max_samples = (cube.t_len() - spec.first_target()) * cube.dims().cells();
    design.features.reserve(max_samples * design.width);
    design.targets.reserve(max_samples);
    design.origins.reserve(max_samples);
    for (std::size_t t = spec.first_target(); t < cube.t_len(); ++t) {
        for (std::size_t r = 0; r < cube.rows(); ++r) {
            for (std::size_t c = 0; c < cube.cols(); ++c) {
                if (!labels.valid(t, r, c)) {
                    continue;
                }
                design.features.resize(design.features.size() + design.width);
                fill_features(cube, spec, t, r, c, design.features.data() + design.features.size() - design.width);
                design.targets.push_back(labels.label(t, r, c));
                design.origins.push_back({t, r, c});
            }
        }
    }
    return design;
}

DesignMatrix build_features(const PdsiCube& cube, const WindowSpec& spec) {
    check_length(cube, spec);
    DesignMatrix design;
    design.width = spec.width();
    const std::size_t n = (cube.t_len() - spec.first_target()) * cube.dims().cells();
    design.features.resize(n * design.width);
    design.targets.assign(n, -1);
    design.origins.reserve(n);
    std::size_t i = 0;
    for (std::size_t t = spec.first_target(); t < cube.t_len(); ++t) {
        for (std::size_t r = 0; r < cube.rows(); ++r) {
            for (std::size_t c = 0; c < cube.cols(); ++c, ++i) {
                fill_features(cube, spec, t, r, c, design.features.data() + i * design.width);
                design.origins.push_back({t, r, c});
            }
        }
    }
    return design;
}

Standardizer Standardizer::fit(const DesignMatrix& design) {
    if (design.size() == 0) {
        throw EmptyDataError("cannot fit feature scaling on an empty design");
    }
    Standardizer s;
    s.mean.assign(design.width, 0.0);
    s.sd.assign(design.width, 0.0);
    const auto n = static_cast<double>(design.size());
    for (std::size_t i = 0; i < design.size(); ++i) {
        for (std::size_t j = 0; j < design.width; ++j) {
            s.mean[j] += design.at(i, j);
        }
    }
    for (auto& m : s.mean) {
        m /= n;
    }
    for (std::size_t i = 0; i < design.size(); ++i) {
        for (std::size_t j = 0; j < design.width; ++j) {
            const double d = design.at(i, j) - s.mean[j];
            s.sd[j] += d * d;
        }
    }
    for (auto& v : s.sd) {
        v = std::sqrt(v / n);
        if (!(v > 1e-12)) {
            v = 1.0;
        }
    }
    return s;
}

void Standardizer::apply_row(const double* in, double* out) const {
    for (std::size_t j = 0; j < mean.size(); ++j) {
        out[j] = (in[j] - mean[j]) / sd[j];
    }
}

void Standardizer::apply(DesignMatrix& design) const {
    if (design.width != mean.size()) {
        throw ArgumentError("feature scaling width mismatch");
    }
    for (std::size_t i = 0; i < design.size(); ++i) {
        double* row = design.features.data() + i * design.width;
        apply_row(row, row);
    }
}

void write_design_csv(const DesignMatrix& design, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "t,row,col,y";
    for (std::size_t j = 0; j < design.width; ++j) {
        out << ",f" << j;
    }
    out << '\n';
    char buf[32];
    for (std::size_t i = 0; i < design.size(); ++i) {
        const auto& o = design.origins[i];
        out << o.t << ',' << o.row << ',' << o.col << ',' << design.targets[i];
        for (std::size_t j = 0; j < design.width; ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", design.at(i, j));
            out << ',' << buf;
        }
        out << '\n';
    }
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace droughtcast

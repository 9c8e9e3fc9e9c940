#include "droughtcast/linear_models.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "droughtcast/errors.hpp"
#include "text_records.hpp"

namespace droughtcast {

BaselineModel fit_majority(const LabelCube& labels) {
    const auto counts = labels.histogram();
    std::size_t total = 0;
    for (auto c : counts) {
        total += c;
    }
    if (total == 0) {
        throw EmptyDataError("no valid labels to fit the baseline");
    }
    BaselineModel model;
    model.class_prior.resize(counts.size());
    for (std::size_t k = 0; k < counts.size(); ++k) {
        model.class_prior[k] = static_cast<double>(counts[k]) / static_cast<double>(total);
        if (counts[k] > counts[static_cast<std::size_t>(model.majority_class)]) {
            model.majority_class = static_cast<int>(k);
        }
    }
    return model;
}

ForecastCube predict_majority(const BaselineModel& model, const CubeDims& dims, std::int64_t start_month) {
    ForecastCube out(dims, model.class_prior.size(), start_month);
    for (std::size_t t = 0; t < dims.t_len; ++t) {
        out.set_predicted(t, true);
        for (std::size_t k = 0; k < model.class_prior.size(); ++k) {
            for (std::size_t r = 0; r < dims.rows; ++r) {
                for (std::size_t c = 0; c < dims.cols; ++c) {
                    out.set_prob(t, k, r, c, static_cast<float>(model.class_prior[k]));
                }
            }
        }
    }
    return out;
}

ForecastCube predict_rolling(const LabelCube& labels, std::size_t window, std::size_t horizon,
                             const std::vector<double>& prior) {
    const auto& d = labels.dims();
    if (window < 1 || window > d.t_len) {
        throw ArgumentError("rolling window must lie in [1, t_len]");
    }
    if (horizon < 1) {
        throw ArgumentError("horizon must be >= 1");
    }
    if (prior.size() != labels.n_classes()) {
        throw ArgumentError("prior size differs from class count");
    }
    ForecastCube out(d, labels.n_classes());
    std::vector<std::size_t> counts(labels.n_classes());
    for (std::size_t t = 0; t < d.t_len; ++t) {
        out.set_predicted(t, true);
        for (std::size_t r = 0; r < d.rows; ++r) {
            for (std::size_t c = 0; c < d.cols; ++c) {
                std::fill(counts.begin(), counts.end(), 0);
                std::size_t seen = 0;
                if (t >= horizon) {
                    const std::size_t last = t - horizon;
                    const std::size_t first = last + 1 >= window ? last + 1 - window : 0;
                    for (std::size_t s = first; s <= last; ++s) {
                        if (labels.valid(s, r, c)) {
                            ++counts[static_cast<std::size_t>(labels.label(s, r, c))];
                            ++seen;
                        }
                    }
                }
                if (seen == 0) {
                    for (std::size_t k = 0; k < prior.size(); ++k) {
                        out.set_prob(t, k, r, c, static_cast<float>(prior[k]));
                    }
                    continue;
                }
                const auto mode = static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
                out.set_prob(t, mode, r, c, 1.0f);
            }
        }
    }
    return out;
}

LinearModel LinearModel::zeros(std::size_t n_classes, std::size_t width) {
    LinearModel m;
    m.n_classes = n_classes;
    m.width = width;
    m.weights.assign(m.rows() * width, 0.0);
    m.bias.assign(m.rows(), 0.0);
    return m;
}

std::vector<double> LinearModel::packed() const {
    std::vector<double> p(weights);
    p.insert(p.end(), bias.begin(), bias.end());
    return p;
}

void LinearModel::unpack(const std::vector<double>& params) {
    if (params.size() != weights.size() + bias.size()) {
        throw ArgumentError("packed parameter size mismatch");
    }
    std::copy(params.begin(), params.begin() + static_cast<std::ptrdiff_t>(weights.size()), weights.begin());
    std::copy(params.begin() + static_cast<std::ptrdiff_t>(weights.size()), params.end(), bias.begin());
}

namespace {

void logits_of(const LinearModel& m, const double* x, std::vector<double>& z) {
    const std::size_t rows = m.rows();
    z.resize(rows);
    for (std::size_t k = 0; k < rows; ++k) {
        const double* w = m.weights.data() + k * m.width;
        double acc = m.bias[k];
        for (std::size_t j = 0; j < m.width; ++j) {
            acc += w[j] * x[j];
        }
        z[k] = acc;
    }
}

/// Probabilities from logits, numerically stable. Binary rows have a single logit.
void probs_of(const std::vector<double>& z, std::size_t n_classes, double* p) {
    if (n_classes == 2) {
        const double s = z[0] >= 0 ? 1.0 / (1.0 + std::exp(-z[0])) : std::exp(z[0]) / (1.0 + std::exp(z[0]));
        p[0] = 1.0 - s;
        p[1] = s;
        return;
    }
    const double mx = *std::max_element(z.begin(), z.end());
    double sum = 0.0;
    for (std::size_t k = 0; k < n_classes; ++k) {
        p[k] = std::exp(z[k] - mx);
        sum += p[k];
    }
    for (std::size_t k = 0; k < n_classes; ++k) {
        p[k] /= sum;
    }
}

double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

void check_design(const LinearModel& model, const DesignMatrix& design) {
    if (design.width != model.width) {
        throw ArgumentError("design width " + std::to_string(design.width) + " differs from model width " +
                            std::to_string(model.width));
    }
}

} // namespace

double logreg_objective(const LinearModel& model, const DesignMatrix& design, double l2, std::vector<double>* grad) {
    check_design(model, design);
    const std::size_t n = design.size();
    if (n == 0) {
        throw EmptyDataError("empty design");
    }
    const std::size_t rows = model.rows();
    const std::size_t width = model.width;
    if (grad) {
        grad->assign(rows * width + rows, 0.0);
    }
    std::vector<double> z;
    std::vector<double> p(model.n_classes);
    std::vector<double> dz(rows);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double* x = design.row(i);
        const int y = design.targets[i];
        logits_of(model, x, z);
        if (model.n_classes == 2) {
            loss += softplus(z[0]) - (y == 1 ? z[0] : 0.0);
            if (grad) {
                probs_of(z, 2, p.data());
                dz[0] = p[1] - (y == 1 ? 1.0 : 0.0);
            }
        } else {
            const double mx = *std::max_element(z.begin(), z.end());
            double sum = 0.0;
            for (double zk : z) {
                sum += std::exp(zk - mx);
            }
            loss += mx + std::log(sum) - z[static_cast<std::size_t>(y)];
            if (grad) {
                for (std::size_t k = 0; k < rows; ++k) {
                    dz[k] = std::exp(z[k] - mx) / sum - (static_cast<int>(k) == y ? 1.0 : 0.0);
                }
            }
        }
        if (grad) {
            for (std::size_t k = 0; k < rows; ++k) {
                double* g = grad->data() + k * width;
                for (std::size_t j = 0; j < width; ++j) {
                    g[j] += dz[k] * x[j];
                }
                (*grad)[rows * width + k] += dz[k];
            }
        }
    }
    const double inv_n = 1.0 / static_cast<double>(n);
    double reg = 0.0;
    for (double w : model.weights) {
        reg += w * w;
    }
    if (grad) {
        for (auto& g : *grad) {
            g *= inv_n;
        }
        for (std::size_t i = 0; i < model.weights.size(); ++i) {
            (*grad)[i] += l2 * model.weights[i];
        }
    }
    return loss * inv_n + 0.5 * l2 * reg;
}

LinearModel fit_logreg(const DesignMatrix& design, const LogRegHyper& hyper, const LinearModel* init,
                       LogRegTrace* trace) {
    if (design.size() < design.n_classes) {
        throw ArgumentError("logistic regression needs at least n_classes samples");
    }
    if (!(hyper.step_size > 0.0) || !(hyper.l2 >= 0.0) || !(hyper.tol >= 0.0)) {
        throw ArgumentError("invalid logistic regression hyperparameters");
    }
    for (double f : design.features) {
        if (!std::isfinite(f)) {
            throw ArgumentError("non-finite feature value");
        }
    }
    DesignMatrix scaled;
    const DesignMatrix* data = &design;
    Standardizer scaling;
    if (hyper.standardize) {
        scaling = Standardizer::fit(design);
        scaled = design;
        scaling.apply(scaled);
        data = &scaled;
    }

    LinearModel model = init ? *init : LinearModel::zeros(design.n_classes, design.width);
    if (model.n_classes != design.n_classes || model.width != design.width) {
        throw ArgumentError("initial model shape differs from design");
    }
    model.scaling = {};

    std::vector<double> grad;
    std::vector<double> trial_grad;
    double obj = logreg_objective(model, *data, hyper.l2, &grad);
    if (!std::isfinite(obj)) {
        throw DivergenceError("logistic regression objective is not finite at the initial point");
    }
    LogRegTrace local;
    local.objective.push_back(obj);
    auto inf_norm = [](const std::vector<double>& g) {
        double m = 0.0;
        for (double v : g) {
            m = std::max(m, std::fabs(v));
        }
        return m;
    };

    double step = hyper.step_size;
    std::vector<double> params = model.packed();
    LinearModel trial = model;
    while (local.epochs < hyper.max_epochs) {
        local.grad_norm_inf = inf_norm(grad);
        if (local.grad_norm_inf <= hyper.tol) {
            local.converged = true;
            break;
        }
        double g2 = 0.0;
        for (double g : grad) {
            g2 += g * g;
        }
        bool accepted = false;
        for (int halvings = 0; halvings < 80; ++halvings) {
            std::vector<double> next(params.size());
            for (std::size_t i = 0; i < params.size(); ++i) {
                next[i] = params[i] - step * grad[i];
            }
            trial.unpack(next);
            const double trial_obj = logreg_objective(trial, *data, hyper.l2, &trial_grad);
            if (std::isfinite(trial_obj) && trial_obj <= obj - 0.5 * step * g2) {
                params = std::move(next);
                obj = trial_obj;
                grad.swap(trial_grad);
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            // The step underflowed without any decrease: either converged to rounding noise or diverging.
            if (!std::isfinite(obj)) {
                throw DivergenceError("logistic regression diverged; reduce step_size");
            }
            break;
        }
        ++local.epochs;
        local.objective.push_back(obj);
        step *= 2.0;
    }
    local.grad_norm_inf = inf_norm(grad);
    local.converged = local.converged || local.grad_norm_inf <= hyper.tol;
    model.unpack(params);
    model.scaling = scaling;
    if (trace) {
        *trace = std::move(local);
    }
    return model;
}

std::vector<double> predict_logreg(const LinearModel& model, const DesignMatrix& design) {
    check_design(model, design);
    std::vector<double> out(design.size() * model.n_classes);
    std::vector<double> z;
    std::vector<double> x(model.width);
    for (std::size_t i = 0; i < design.size(); ++i) {
        const double* row = design.row(i);
        if (!model.scaling.empty()) {
            model.scaling.apply_row(row, x.data());
            row = x.data();
        }
        logits_of(model, row, z);
        probs_of(z, model.n_classes, out.data() + i * model.n_classes);
    }
    return out;
}

std::string serialize_linear(const LinearModel& model) {
    detail::RecordWriter w("droughtcast-logreg", 1);
    w.put("n_classes", model.n_classes);
    w.put("width", model.width);
    w.put("weights", model.weights);
    w.put("bias", model.bias);
    w.put("scaled", model.scaling.empty() ? 0 : 1);
    if (!model.scaling.empty()) {
        w.put("scale_mean", model.scaling.mean);
        w.put("scale_sd", model.scaling.sd);
    }
    return w.str();
}

LinearModel deserialize_linear(const std::string& text) {
    detail::RecordReader r(text, "droughtcast-logreg", 1);
    LinearModel m = LinearModel::zeros(r.get_size("n_classes"), r.get_size("width"));
    m.weights = r.get_reals("weights", m.rows() * m.width);
    m.bias = r.get_reals("bias", m.rows());
    if (r.get_size("scaled") != 0) {
        m.scaling.mean = r.get_reals("scale_mean", m.width);
        m.scaling.sd = r.get_reals("scale_sd", m.width);
    }
    return m;
}

std::string serialize_baseline(const BaselineModel& model) {
    detail::RecordWriter w("droughtcast-baseline", 1);
    w.put("majority_class", static_cast<std::size_t>(model.majority_class));
    w.put("class_prior", model.class_prior);
    return w.str();
}

BaselineModel deserialize_baseline(const std::string& text) {
    detail::RecordReader r(text, "droughtcast-baseline", 1);
    BaselineModel m;
    m.majority_class = static_cast<int>(r.get_size("majority_class"));
    m.class_prior = r.get_reals("class_prior");
    if (m.class_prior.size() < 2 || static_cast<std::size_t>(m.majority_class) >= m.class_prior.size()) {
        throw FormatError("baseline model record is inconsistent");
    }
    return m;
}

} // namespace droughtcast

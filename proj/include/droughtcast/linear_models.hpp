#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "droughtcast/featurizer.hpp"
#include "droughtcast/forecast.hpp"
#include "droughtcast/labeler.hpp"

namespace droughtcast {

/// Most prevalent training class plus empirical class frequencies.
struct BaselineModel {
    int majority_class = 0;
    std::vector<double> class_prior;
};

/// Ties go to the lower class index. Throws EmptyDataError without valid labels.
BaselineModel fit_majority(const LabelCube& labels);

/// Class prior at every cell of every month.
ForecastCube predict_majority(const BaselineModel& model, const CubeDims& dims, std::int64_t start_month = 0);

/**
 * Rolling baseline. For target month t the forecast puts all mass on the most frequent class
 * among the cell's valid labels in months (t - horizon - window, t - horizon], ties to the lower
 * class. Months with no such label, or t < horizon, emit `prior`.
 */
ForecastCube predict_rolling(const LabelCube& labels, std::size_t window, std::size_t horizon,
                             const std::vector<double>& prior);

struct LogRegHyper {
    double l2 = 1e-4;
    std::size_t max_epochs = 500;
    double step_size = 1.0;
    double tol = 1e-8;
    bool standardize = false;
};

/**
 * Linear logits W x + b. Binary models keep one logit row (class 1 vs 0); multiclass models
 * keep one row per class. When `scaling` is set, features are z-scored before the product.
 */
struct LinearModel {
    std::size_t n_classes = 2;
    std::size_t width = 0;
    std::vector<double> weights;  // rows() x width, row-major
    std::vector<double> bias;     // rows()
    Standardizer scaling;

    std::size_t rows() const { return n_classes == 2 ? 1 : n_classes; }
    static LinearModel zeros(std::size_t n_classes, std::size_t width);

    /// Weights then biases.
    std::vector<double> packed() const;
    void unpack(const std::vector<double>& params);
};

struct LogRegTrace {
    std::vector<double> objective;  // one entry per accepted step, starting with the initial point
    std::size_t epochs = 0;
    double grad_norm_inf = 0.0;
    bool converged = false;
};

/**
 * Mean cross-entropy plus (l2/2) * ||weights||^2 over `design` exactly as given (the model's
 * scaling is not applied). When `grad` is non-null it receives the gradient in packed() layout.
 */
double logreg_objective(const LinearModel& model, const DesignMatrix& design, double l2,
                        std::vector<double>* grad = nullptr);

/**
 * Full-batch gradient descent with backtracking: a trial step is accepted when it satisfies the
 * Armijo condition, otherwise it is halved; after an accepted step the next trial doubles.
 * Stops when the gradient infinity-norm is <= tol or after max_epochs accepted steps.
 * Throws DivergenceError on a non-finite objective.
 */
LinearModel fit_logreg(const DesignMatrix& design, const LogRegHyper& hyper, const LinearModel* init = nullptr,
                       LogRegTrace* trace = nullptr);

/// Class probabilities, n_samples x n_classes row-major.
std::vector<double> predict_logreg(const LinearModel& model, const DesignMatrix& design);

/// Versioned key-value text, 17 significant digits.
std::string serialize_linear(const LinearModel& model);
LinearModel deserialize_linear(const std::string& text);
std::string serialize_baseline(const BaselineModel& model);
BaselineModel deserialize_baseline(const std::string& text);

} // namespace droughtcast

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "droughtcast/featurizer.hpp"

namespace droughtcast {

struct GbdtHyper {
    std::size_t max_depth = 3;
    std::size_t n_rounds = 200;
    double learning_rate = 0.1;
    double lambda = 1.0;
    double gamma = 0.0;
    double min_child_weight = 1.0;
    /// Rounds without validation improvement before stopping; only used with a validation set.
    std::size_t patience = 20;

    void validate() const;
};

/// Internal node when feature >= 0 (x[feature] <= threshold goes left), leaf otherwise.
struct TreeNode {
    int feature = -1;
    double threshold = 0.0;
    double leaf_value = 0.0;
    int left = -1;
    int right = -1;

    bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
    std::vector<TreeNode> nodes;  // nodes[0] is the root

    double evaluate(const double* x) const;
    std::size_t leaf_index(const double* x) const;
};

struct GbdtModel {
    std::size_t n_classes = 2;
    std::size_t width = 0;
    GbdtHyper hyper;
    std::vector<double> base_score;                  // one per tree slot (1 for binary)
    std::vector<std::vector<RegressionTree>> rounds;  // rounds[r][slot]
    bool degenerate = false;                         // single-class training data

    std::size_t slots() const { return n_classes == 2 ? 1 : n_classes; }
};

struct SplitCandidate {
    bool found = false;
    std::size_t feature = 0;
    double threshold = 0.0;
    double gain = 0.0;
};

/**
 * Exact greedy search over every feature and every midpoint between adjacent distinct values of
 * the node's samples. Gain = 1/2 [GL^2/(HL+l) + GR^2/(HR+l) - G^2/(H+l)] - gamma. A candidate
 * needs both child hessian sums >= min_child_weight and strictly positive gain; ties keep the
 * lowest feature, then the lowest threshold.
 */
SplitCandidate best_split(std::span<const double> grad, std::span<const double> hess, const DesignMatrix& design,
                          std::span<const std::size_t> rows, const GbdtHyper& hyper);

/// Called for every node considered for splitting during fit_gbdt.
using SplitObserver = std::function<void(std::span<const std::size_t> rows, std::span<const double> grad,
                                         std::span<const double> hess, const SplitCandidate& chosen)>;

struct GbdtFitOptions {
    const DesignMatrix* validation = nullptr;
    SplitObserver observer;
    /// Receives mean train log loss after each round (index 0 is the base-score model).
    std::vector<double>* train_loss = nullptr;
    std::vector<double>* valid_loss = nullptr;
};

/// Second-order boosting; logistic loss for two classes, one tree per class per round otherwise.
GbdtModel fit_gbdt(const DesignMatrix& design, const GbdtHyper& hyper, const GbdtFitOptions& options = {});

/// Class probabilities, n_samples x n_classes row-major.
std::vector<double> predict_gbdt(const GbdtModel& model, const DesignMatrix& design);

/// Raw additive scores (n_samples x slots) after the first `n_rounds` rounds.
std::vector<double> raw_scores(const GbdtModel& model, const DesignMatrix& design, std::size_t n_rounds);

double mean_log_loss(std::span<const double> probs, std::span<const int> targets, std::size_t n_classes);

/// Versioned plain-text dump, trees in pre-order, 17 significant digits.
std::string serialize_gbdt(const GbdtModel& model);
GbdtModel deserialize_gbdt(const std::string& text);

} // namespace droughtcast

#include "droughtcast/gbdt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "droughtcast/errors.hpp"
#include "text_records.hpp"

namespace droughtcast {

void GbdtHyper::validate() const {
    if (max_depth < 1 || !(learning_rate > 0.0) || !(lambda >= 0.0) || !(gamma >= 0.0) || !(min_child_weight >= 0.0)) {
        throw ArgumentError("invalid gradient boosting hyperparameters");
    }
}

double RegressionTree::evaluate(const double* x) const { return nodes[leaf_index(x)].leaf_value; }

std::size_t RegressionTree::leaf_index(const double* x) const {
    std::size_t i = 0;
    while (!nodes[i].is_leaf()) {
        const auto& n = nodes[i];
        i = static_cast<std::size_t>(x[n.feature] <= n.threshold ? n.left : n.right);
    }
    return i;
}

namespace {

constexpr double kProbFloor = 1e-6;

double midpoint(double lo, double hi) {
    const double m = lo + 0.5 * (hi - lo);
    return m < hi ? m : lo;
}

/// Running left-side sums while walking one node's samples in ascending feature order.
struct Scan {
    double g_total = 0.0;
    double h_total = 0.0;
    double g_left = 0.0;
    double h_left = 0.0;
    double last = 0.0;
    bool started = false;
    SplitCandidate best;

    void reset_feature() {
        g_left = 0.0;
        h_left = 0.0;
        started = false;
    }

    void push(std::size_t feature, double value, double g, double h, const GbdtHyper& hp) {
        if (started && value != last) {
            const double h_right = h_total - h_left;
            if (h_left >= hp.min_child_weight && h_right >= hp.min_child_weight) {
                const double g_right = g_total - g_left;
                const double gain = 0.5 * (g_left * g_left / (h_left + hp.lambda) +
                                           g_right * g_right / (h_right + hp.lambda) -
                                           g_total * g_total / (h_total + hp.lambda)) -
                                    hp.gamma;
                if (gain > best.gain) {
                    best = {true, feature, midpoint(last, value), gain};
                }
            }
        }
        g_left += g;
        h_left += h;
        last = value;
        started = true;
    }
};

double leaf_weight(double g, double h, const GbdtHyper& hp) { return -g / (h + hp.lambda) * hp.learning_rate; }

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

void to_probs(std::span<const double> raw, std::size_t n_classes, std::span<double> probs) {
    const std::size_t n = probs.size() / n_classes;
    for (std::size_t i = 0; i < n; ++i) {
        double* p = probs.data() + i * n_classes;
        if (n_classes == 2) {
            p[1] = sigmoid(raw[i]);
            p[0] = 1.0 - p[1];
            continue;
        }
        const double* z = raw.data() + i * n_classes;
        const double mx = *std::max_element(z, z + n_classes);
        double sum = 0.0;
        for (std::size_t k = 0; k < n_classes; ++k) {
            p[k] = std::exp(z[k] - mx);
            sum += p[k];
        }
        for (std::size_t k = 0; k < n_classes; ++k) {
            p[k] /= sum;
        }
    }
}

/// Grows one tree level by level using presorted feature orders.
class TreeBuilder {
public:
    TreeBuilder(const DesignMatrix& design, const std::vector<std::vector<std::size_t>>& sorted, const GbdtHyper& hp,
                const SplitObserver& observer)
        : design_(design), sorted_(sorted), hp_(hp), observer_(observer) {}

    /// Returns the tree; `leaf_of` receives each sample's leaf node index.
    RegressionTree build(std::span<const double> grad, std::span<const double> hess, std::vector<int>& leaf_of) {
        const std::size_t n = design_.size();
        RegressionTree tree;
        tree.nodes.emplace_back();
        leaf_of.assign(n, 0);
        std::vector<std::size_t> frontier{0};
        for (std::size_t depth = 0; depth < hp_.max_depth && !frontier.empty(); ++depth) {
            // Map node -> slot in the frontier.
            std::vector<int> slot_of(tree.nodes.size(), -1);
            std::vector<Scan> scans(frontier.size());
            std::vector<std::size_t> counts(frontier.size(), 0);
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                slot_of[frontier[s]] = static_cast<int>(s);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const int s = slot_of[static_cast<std::size_t>(leaf_of[i])];
                if (s >= 0) {
                    scans[static_cast<std::size_t>(s)].g_total += grad[i];
                    scans[static_cast<std::size_t>(s)].h_total += hess[i];
                    ++counts[static_cast<std::size_t>(s)];
                }
            }
            for (std::size_t f = 0; f < design_.width; ++f) {
                for (auto& sc : scans) {
                    sc.reset_feature();
                }
                for (std::size_t i : sorted_[f]) {
                    const int s = slot_of[static_cast<std::size_t>(leaf_of[i])];
                    if (s >= 0) {
                        scans[static_cast<std::size_t>(s)].push(f, design_.at(i, f), grad[i], hess[i], hp_);
                    }
                }
            }
            if (observer_) {
                notify(frontier, scans, grad, hess, leaf_of);
            }
            std::vector<std::size_t> next;
            for (std::size_t s = 0; s < frontier.size(); ++s) {
                const auto& best = scans[s].best;
                if (!best.found || counts[s] < 2) {
                    continue;
                }
                const auto node = frontier[s];
                const int left = static_cast<int>(tree.nodes.size());
                tree.nodes.emplace_back();
                tree.nodes.emplace_back();
                tree.nodes[node].feature = static_cast<int>(best.feature);
                tree.nodes[node].threshold = best.threshold;
                tree.nodes[node].left = left;
                tree.nodes[node].right = left + 1;
                next.push_back(static_cast<std::size_t>(left));
                next.push_back(static_cast<std::size_t>(left + 1));
            }
            for (std::size_t i = 0; i < n; ++i) {
                const auto& node = tree.nodes[static_cast<std::size_t>(leaf_of[i])];
                if (!node.is_leaf()) {
                    leaf_of[i] = design_.at(i, static_cast<std::size_t>(node.feature)) <= node.threshold ? node.left
                                                                                                         : node.right;
                }
            }
            frontier = std::move(next);
        }
        // Leaf values from final membership.
        std::vector<double> g_sum(tree.nodes.size(), 0.0);
        std::vector<double> h_sum(tree.nodes.size(), 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            g_sum[static_cast<std::size_t>(leaf_of[i])] += grad[i];
            h_sum[static_cast<std::size_t>(leaf_of[i])] += hess[i];
        }
        for (std::size_t k = 0; k < tree.nodes.size(); ++k) {
            if (tree.nodes[k].is_leaf()) {
                tree.nodes[k].leaf_value = leaf_weight(g_sum[k], h_sum[k], hp_);
            }
        }
        return tree;
    }

private:
    void notify(const std::vector<std::size_t>& frontier, const std::vector<Scan>& scans, std::span<const double> grad,
                std::span<const double> hess, const std::vector<int>& leaf_of) const {
        for (std::size_t s = 0; s < frontier.size(); ++s) {
            std::vector<std::size_t> rows;
            for (std::size_t i = 0; i < leaf_of.size(); ++i) {
                if (static_cast<std::size_t>(leaf_of[i]) == frontier[s]) {
                    rows.push_back(i);
                }
            }
            observer_(rows, grad, hess, scans[s].best);
        }
    }

    const DesignMatrix& design_;
    const std::vector<std::vector<std::size_t>>& sorted_;
    const GbdtHyper& hp_;
    const SplitObserver& observer_;
};

std::vector<std::vector<std::size_t>> presort(const DesignMatrix& design) {
    std::vector<std::vector<std::size_t>> sorted(design.width);
    for (std::size_t f = 0; f < design.width; ++f) {
        auto& order = sorted[f];
        order.resize(design.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return design.at(a, f) < design.at(b, f); });
    }
    return sorted;
}

void check_width(const GbdtModel& model, const DesignMatrix& design) {
    if (design.width != model.width) {
        throw ArgumentError("design width " + std::to_string(design.width) + " differs from model width " +
                            std::to_string(model.width));
    }
}

} // namespace

SplitCandidate best_split(std::span<const double> grad, std::span<const double> hess, const DesignMatrix& design,
                          std::span<const std::size_t> rows, const GbdtHyper& hyper) {
    if (rows.size() < 2) {
        return {};
    }
    Scan scan;
    for (std::size_t i : rows) {
        scan.g_total += grad[i];
        scan.h_total += hess[i];
    }
    std::vector<std::size_t> order(rows.begin(), rows.end());
    for (std::size_t f = 0; f < design.width; ++f) {
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return design.at(a, f) < design.at(b, f); });
        scan.reset_feature();
        for (std::size_t i : order) {
            scan.push(f, design.at(i, f), grad[i], hess[i], hyper);
        }
    }
    return scan.best;
}

double mean_log_loss(std::span<const double> probs, std::span<const int> targets, std::size_t n_classes) {
    double loss = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const double p = probs[i * n_classes + static_cast<std::size_t>(targets[i])];
        loss -= std::log(std::max(p, std::numeric_limits<double>::min()));
    }
    return targets.empty() ? 0.0 : loss / static_cast<double>(targets.size());
}

std::vector<double> raw_scores(const GbdtModel& model, const DesignMatrix& design, std::size_t n_rounds) {
    check_width(model, design);
    const std::size_t slots = model.slots();
    std::vector<double> raw(design.size() * slots);
    n_rounds = std::min(n_rounds, model.rounds.size());
    for (std::size_t i = 0; i < design.size(); ++i) {
        for (std::size_t k = 0; k < slots; ++k) {
            double z = model.base_score[k];
            for (std::size_t r = 0; r < n_rounds; ++r) {
                z += model.rounds[r][k].evaluate(design.row(i));
            }
            raw[i * slots + k] = z;
        }
    }
    return raw;
}

std::vector<double> predict_gbdt(const GbdtModel& model, const DesignMatrix& design) {
    const auto raw = raw_scores(model, design, model.rounds.size());
    std::vector<double> probs(design.size() * model.n_classes);
    to_probs(raw, model.n_classes, probs);
    return probs;
}

GbdtModel fit_gbdt(const DesignMatrix& design, const GbdtHyper& hyper, const GbdtFitOptions& options) {
    hyper.validate();
    const std::size_t n = design.size();
    if (n < 2) {
        throw ArgumentError("gradient boosting needs at least two samples");
    }
    if (options.validation && options.validation->width != design.width) {
        throw ArgumentError("validation design width differs from training design");
    }
    const std::size_t n_classes = design.n_classes;
    GbdtModel model;
    model.n_classes = n_classes;
    model.width = design.width;
    model.hyper = hyper;

    std::vector<std::size_t> counts(n_classes, 0);
    for (int y : design.targets) {
        ++counts[static_cast<std::size_t>(y)];
    }
    const auto present = std::count_if(counts.begin(), counts.end(), [](std::size_t c) { return c > 0; });
    auto prior = [&](std::size_t k) {
        return std::clamp(static_cast<double>(counts[k]) / static_cast<double>(n), kProbFloor, 1.0 - kProbFloor);
    };
    if (n_classes == 2) {
        const double p = prior(1);
        model.base_score = {std::log(p / (1.0 - p))};
    } else {
        for (std::size_t k = 0; k < n_classes; ++k) {
            model.base_score.push_back(std::log(prior(k)));
        }
    }

    const std::size_t slots = model.slots();
    std::vector<double> raw(n * slots);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(model.base_score.begin(), model.base_score.end(), raw.begin() + static_cast<std::ptrdiff_t>(i * slots));
    }
    std::vector<double> probs(n * n_classes);
    to_probs(raw, n_classes, probs);
    if (options.train_loss) {
        options.train_loss->assign(1, mean_log_loss(probs, design.targets, n_classes));
    }

    std::vector<double> val_raw;
    std::vector<double> val_probs;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_rounds = 0;
    const DesignMatrix* val = options.validation;
    if (val) {
        val_raw.resize(val->size() * slots);
        for (std::size_t i = 0; i < val->size(); ++i) {
            std::copy(model.base_score.begin(), model.base_score.end(),
                      val_raw.begin() + static_cast<std::ptrdiff_t>(i * slots));
        }
        val_probs.resize(val->size() * n_classes);
        to_probs(val_raw, n_classes, val_probs);
        best_val = mean_log_loss(val_probs, val->targets, n_classes);
        if (options.valid_loss) {
            options.valid_loss->assign(1, best_val);
        }
    }

    if (present < 2) {
        model.degenerate = true;
        return model;
    }

    const auto sorted = presort(design);
    TreeBuilder builder(design, sorted, hyper, options.observer);
    std::vector<double> grad(n);
    std::vector<double> hess(n);
    std::vector<int> leaf_of;
    for (std::size_t round = 0; round < hyper.n_rounds; ++round) {
        std::vector<RegressionTree> trees;
        for (std::size_t k = 0; k < slots; ++k) {
            const std::size_t cls = n_classes == 2 ? 1 : k;
            for (std::size_t i = 0; i < n; ++i) {
                const double p = probs[i * n_classes + cls];
                const double y = static_cast<std::size_t>(design.targets[i]) == cls ? 1.0 : 0.0;
                grad[i] = p - y;
                hess[i] = std::max(p * (1.0 - p), 1e-16);
            }
            trees.push_back(builder.build(grad, hess, leaf_of));
            for (std::size_t i = 0; i < n; ++i) {
                raw[i * slots + k] += trees.back().nodes[static_cast<std::size_t>(leaf_of[i])].leaf_value;
            }
        }
        to_probs(raw, n_classes, probs);
        if (options.train_loss) {
            options.train_loss->push_back(mean_log_loss(probs, design.targets, n_classes));
        }
        model.rounds.push_back(std::move(trees));
        if (val) {
            for (std::size_t i = 0; i < val->size(); ++i) {
                for (std::size_t k = 0; k < slots; ++k) {
                    val_raw[i * slots + k] += model.rounds.back()[k].evaluate(val->row(i));
                }
            }
            to_probs(val_raw, n_classes, val_probs);
            const double loss = mean_log_loss(val_probs, val->targets, n_classes);
            if (options.valid_loss) {
                options.valid_loss->push_back(loss);
            }
            if (loss < best_val) {
                best_val = loss;
                best_rounds = model.rounds.size();
            } else if (model.rounds.size() - best_rounds > hyper.patience) {
                break;
            }
        }
    }
    if (val) {
        model.rounds.resize(best_rounds);
    }
    return model;
}

namespace {

void dump_tree(const RegressionTree& tree, std::size_t node, std::ostringstream& out) {
    const auto& n = tree.nodes[node];
    if (n.is_leaf()) {
        out << "leaf " << detail::format_real(n.leaf_value) << '\n';
        return;
    }
    out << "split " << n.feature << ' ' << detail::format_real(n.threshold) << '\n';
    dump_tree(tree, static_cast<std::size_t>(n.left), out);
    dump_tree(tree, static_cast<std::size_t>(n.right), out);
}

int parse_tree(std::istringstream& in, RegressionTree& tree, std::size_t width) {
    std::string kind;
    if (!(in >> kind)) {
        throw FormatError("truncated tree dump");
    }
    const int index = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    if (kind == "leaf") {
        std::string v;
        in >> v;
        tree.nodes[static_cast<std::size_t>(index)].leaf_value = std::stod(v);
        return index;
    }
    if (kind != "split") {
        throw FormatError("unexpected token '" + kind + "' in tree dump");
    }
    int feature = -1;
    std::string thr;
    if (!(in >> feature >> thr) || feature < 0 || static_cast<std::size_t>(feature) >= width) {
        throw FormatError("bad split record in tree dump");
    }
    const int left = parse_tree(in, tree, width);
    const int right = parse_tree(in, tree, width);
    auto& node = tree.nodes[static_cast<std::size_t>(index)];
    node.feature = feature;
    node.threshold = std::stod(thr);
    node.left = left;
    node.right = right;
    return index;
}

} // namespace

std::string serialize_gbdt(const GbdtModel& model) {
    detail::RecordWriter w("droughtcast-gbdt", 1);
    w.put("n_classes", model.n_classes);
    w.put("width", model.width);
    w.put("max_depth", model.hyper.max_depth);
    w.put("n_rounds", model.hyper.n_rounds);
    w.put("learning_rate", model.hyper.learning_rate);
    w.put("lambda", model.hyper.lambda);
    w.put("gamma", model.hyper.gamma);
    w.put("min_child_weight", model.hyper.min_child_weight);
    w.put("patience", model.hyper.patience);
    w.put("base_score", model.base_score);
    w.put("degenerate", model.degenerate ? 1 : 0);
    w.put("rounds", model.rounds.size());
    std::ostringstream trees;
    for (std::size_t r = 0; r < model.rounds.size(); ++r) {
        for (std::size_t k = 0; k < model.rounds[r].size(); ++k) {
            trees << "tree " << r << ' ' << k << '\n';
            dump_tree(model.rounds[r][k], 0, trees);
        }
    }
    return w.str() + "begin_trees\n" + trees.str();
}

GbdtModel deserialize_gbdt(const std::string& text) {
    const auto split = text.find("begin_trees\n");
    if (split == std::string::npos) {
        throw FormatError("gbdt dump lacks a tree section");
    }
    detail::RecordReader r(text.substr(0, split), "droughtcast-gbdt", 1);
    GbdtModel m;
    m.n_classes = r.get_size("n_classes");
    m.width = r.get_size("width");
    m.hyper.max_depth = r.get_size("max_depth");
    m.hyper.n_rounds = r.get_size("n_rounds");
    m.hyper.learning_rate = r.get_real("learning_rate");
    m.hyper.lambda = r.get_real("lambda");
    m.hyper.gamma = r.get_real("gamma");
    m.hyper.min_child_weight = r.get_real("min_child_weight");
    m.hyper.patience = r.get_size("patience");
    if (m.n_classes < 2) {
        throw FormatError("gbdt dump has fewer than two classes");
    }
    m.base_score = r.get_reals("base_score", m.slots());
    m.degenerate = r.get_size("degenerate") != 0;
    const std::size_t n_rounds = r.get_size("rounds");
    std::istringstream in(text.substr(split + 12));
    try {
        for (std::size_t round = 0; round < n_rounds; ++round) {
            std::vector<RegressionTree> trees(m.slots());
            for (std::size_t k = 0; k < m.slots(); ++k) {
                std::string tag;
                std::size_t rr = 0, kk = 0;
                if (!(in >> tag >> rr >> kk) || tag != "tree" || rr != round || kk != k) {
                    throw FormatError("tree header out of order");
                }
                parse_tree(in, trees[k], m.width);
            }
            m.rounds.push_back(std::move(trees));
        }
    } catch (const std::logic_error&) {
        throw FormatError("unparsable number in tree dump");
    }
    return m;
}

} // namespace droughtcast

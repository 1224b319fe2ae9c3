#pragma once

#include <cstdio>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "svdamage/core/error.hpp"

namespace svdamage {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
public:
    explicit ConfusionMatrix(std::size_t classes = 3) : n_(classes), counts_(classes * classes, 0) {}

    std::size_t classes() const { return n_; }
    long& operator()(std::size_t truth, std::size_t pred) { return counts_[truth * n_ + pred]; }
    long operator()(std::size_t truth, std::size_t pred) const { return counts_[truth * n_ + pred]; }

    long total() const { return std::accumulate(counts_.begin(), counts_.end(), 0L); }
    long trace() const {
        long t = 0;
        for (std::size_t k = 0; k < n_; ++k) t += (*this)(k, k);
        return t;
    }
    long row_sum(std::size_t k) const {
        long s = 0;
        for (std::size_t j = 0; j < n_; ++j) s += (*this)(k, j);
        return s;
    }
    long col_sum(std::size_t k) const {
        long s = 0;
        for (std::size_t i = 0; i < n_; ++i) s += (*this)(i, k);
        return s;
    }

    bool operator==(const ConfusionMatrix&) const = default;

private:
    std::size_t n_;
    std::vector<long> counts_;
};

inline ConfusionMatrix confusion(const std::vector<int>& predictions, const std::vector<int>& truths,
                                 std::size_t classes) {
    require(predictions.size() == truths.size(), "confusion: " + std::to_string(predictions.size()) +
                                                     " predictions vs " + std::to_string(truths.size()) + " truths");
    ConfusionMatrix m(classes);
    for (std::size_t i = 0; i < truths.size(); ++i) {
        require(truths[i] >= 0 && static_cast<std::size_t>(truths[i]) < classes &&
                    predictions[i] >= 0 && static_cast<std::size_t>(predictions[i]) < classes,
                "confusion: label out of range at sample " + std::to_string(i));
        ++m(static_cast<std::size_t>(truths[i]), static_cast<std::size_t>(predictions[i]));
    }
    return m;
}

struct MetricsReport {
    std::string model;
    std::string config_hash;
    double accuracy = 0;
    double precision = 0; // support-weighted
    double recall = 0;
    double f1 = 0;
    std::vector<double> class_precision, class_recall, class_f1;
    std::vector<long> support;
    std::size_t classes_evaluated = 0; // classes that enter the weighted averages
    std::size_t matrix_classes = 0;
    long samples = 0;
};

namespace detail {

// Per-class P/R/F1 for classes [0, n_eval) of m, weighted by support.
inline void fill_class_metrics(const ConfusionMatrix& m, std::size_t n_eval, MetricsReport& r) {
    r.class_precision.assign(n_eval, 0);
    r.class_recall.assign(n_eval, 0);
    r.class_f1.assign(n_eval, 0);
    r.support.assign(n_eval, 0);
    long weight_total = 0;
    for (std::size_t k = 0; k < n_eval; ++k) {
        const long tp = m(k, k), pred = m.col_sum(k), sup = m.row_sum(k);
        const double p = pred > 0 ? static_cast<double>(tp) / static_cast<double>(pred) : 0.0;
        const double rc = sup > 0 ? static_cast<double>(tp) / static_cast<double>(sup) : 0.0;
        r.class_precision[k] = p;
        r.class_recall[k] = rc;
        r.class_f1[k] = (p + rc) > 0 ? 2.0 * p * rc / (p + rc) : 0.0;
        r.support[k] = sup;
        weight_total += sup;
    }
    r.precision = r.recall = r.f1 = 0;
    r.classes_evaluated = n_eval;
    if (weight_total == 0) return;
    for (std::size_t k = 0; k < n_eval; ++k) {
        const double w = static_cast<double>(r.support[k]) / static_cast<double>(weight_total);
        r.precision += w * r.class_precision[k];
        r.recall += w * r.class_recall[k];
        r.f1 += w * r.class_f1[k];
    }
}

} // namespace detail

// Accuracy plus support-weighted precision, recall and F1 over all classes.
// A class with no predictions has precision 0 (and recall 0 when it has no
// support); weighted F1 is the support-weighted mean of per-class F1.
inline MetricsReport weighted_metrics(const ConfusionMatrix& m) {
    require(m.total() > 0, "weighted_metrics: empty confusion matrix");
    MetricsReport r;
    r.matrix_classes = m.classes();
    r.samples = m.total();
    r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(m.total());
    detail::fill_class_metrics(m, m.classes(), r);
    return r;
}

// Four-class convention: accuracy over all four classes (no_damage = 3),
// weighted P/R/F1 and class recall over the three damage classes only.
inline MetricsReport experiment2_metrics(const ConfusionMatrix& m) {
    require(m.classes() == 4, "experiment2_metrics expects a 4x4 confusion matrix");
    require(m.total() > 0, "experiment2_metrics: empty confusion matrix");
    MetricsReport r;
    r.matrix_classes = 4;
    r.samples = m.total();
    r.accuracy = static_cast<double>(m.trace()) / static_cast<double>(m.total());
    detail::fill_class_metrics(m, 3, r);
    return r;
}

inline nlohmann::json to_json(const MetricsReport& r) {
    return nlohmann::json{{"model", r.model},
                          {"config_hash", r.config_hash},
                          {"accuracy", r.accuracy},
                          {"precision", r.precision},
                          {"recall", r.recall},
                          {"f1", r.f1},
                          {"class_precision", r.class_precision},
                          {"class_recall", r.class_recall},
                          {"class_f1", r.class_f1},
                          {"support", r.support},
                          {"classes_evaluated", r.classes_evaluated},
                          {"matrix_classes", r.matrix_classes},
                          {"samples", r.samples}};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
    MetricsReport r;
    r.model = j.value("model", "");
    r.config_hash = j.value("config_hash", "");
    r.accuracy = j.at("accuracy").get<double>();
    r.precision = j.at("precision").get<double>();
    r.recall = j.at("recall").get<double>();
    r.f1 = j.at("f1").get<double>();
    r.class_precision = j.value("class_precision", std::vector<double>{});
    r.class_recall = j.value("class_recall", std::vector<double>{});
    r.class_f1 = j.value("class_f1", std::vector<double>{});
    r.support = j.value("support", std::vector<long>{});
    r.classes_evaluated = j.value("classes_evaluated", std::size_t{0});
    r.matrix_classes = j.value("matrix_classes", std::size_t{0});
    r.samples = j.value("samples", 0L);
    return r;
}

inline std::string format_percent(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * v);
    return buf;
}

inline std::string format_score(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

// "<name>  <acc>%  <P>  <R>  <F1>[  <recall_0>% ...]"
inline std::string format_row(const std::string& name, const MetricsReport& r, bool class_recall = false) {
    std::string s = name + "  " + format_percent(r.accuracy) + "  " + format_score(r.precision) + "  " +
                    format_score(r.recall) + "  " + format_score(r.f1);
    if (class_recall)
        for (double v : r.class_recall) s += "  " + format_percent(v);
    return s;
}

// Aligned table: Model, Accuracy, P, R, F1, class-specific recall.
inline std::string render_table(const std::vector<MetricsReport>& reports) {
    std::size_t width = 5;
    std::size_t classes = 0;
    for (const auto& r : reports) {
        width = std::max(width, r.model.size());
        classes = std::max(classes, r.class_recall.size());
    }
    static const char* class_names[] = {"0-mild", "1-moderate", "2-severe", "3-no_damage"};
    auto pad = [](std::string s, std::size_t w) {
        s.resize(std::max(s.size(), w), ' ');
        return s;
    };
    std::string out = pad("Model", width) + "  " + pad("Accuracy", 8) + "  " + pad("P", 6) + "  " + pad("R", 6) +
                      "  " + pad("F1", 6);
    for (std::size_t k = 0; k < classes; ++k) out += "  " + pad(class_names[k], 10);
    out += '\n';
    for (const auto& r : reports) {
        std::string line = pad(r.model, width) + "  " + pad(format_percent(r.accuracy), 8) + "  " +
                           format_score(r.precision) + "  " + format_score(r.recall) + "  " + format_score(r.f1);
        for (double v : r.class_recall) line += "  " + pad(format_percent(v), 10);
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out += line + '\n';
    }
    return out;
}

} // namespace svdamage

#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "seka/model.hpp"
#include "seka/svd.hpp"

namespace seka {

/// Softmax mass on the highlighted set at the final query row, per
/// (layer, query_head), for an unsteered and a steered run of one prompt.
struct MassReport {
    std::size_t n_layers = 0;
    std::size_t n_query_heads = 0;
    std::vector<double> baseline;  // layer-major: layer * n_query_heads + qh
    std::vector<double> steered;
    double baseline_mean = 0.0;
    double steered_mean = 0.0;
};

inline MassReport attention_mass(const ToyModel& model, const TokenSequence& seq,
                                 const std::vector<std::size_t>& highlight,
                                 const EditPlan* plan = nullptr) {
    if (highlight.empty()) throw InvalidInput("attention_mass: empty highlight set");
    for (std::size_t idx : highlight)
        if (idx >= seq.ids.size()) throw InvalidInput("attention_mass: highlight out of bounds");

    CaptureFlags flags;
    flags.attn_weights = true;
    const std::size_t last = seq.ids.size() - 1;

    auto masses = [&](const ForwardResult& run) {
        std::vector<double> out(model.config.n_layers * model.config.n_query_heads, 0.0);
        for (std::size_t c = 0; c < out.size(); ++c) {
            const Matrix& w = run.captures.attn_weights[c];
            double m = 0.0;
            for (std::size_t idx : highlight)
                if (idx <= last) m += w(last, idx);
            out[c] = m;
        }
        return out;
    };
    auto mean = [](const std::vector<double>& v) {
        double acc = 0.0;
        for (double x : v) acc += x;
        return acc / static_cast<double>(v.size());
    };

    MassReport report;
    report.n_layers = model.config.n_layers;
    report.n_query_heads = model.config.n_query_heads;
    const ForwardResult base = forward(model, seq, nullptr, flags);
    report.baseline = masses(base);
    if (plan) {
        const ForwardResult steered = forward(model, seq, plan, flags);
        report.steered = masses(steered);
    } else {
        report.steered = report.baseline;
    }
    report.baseline_mean = mean(report.baseline);
    report.steered_mean = mean(report.steered);
    return report;
}

/// Fraction of pairs where the new probability strictly beats the old one.
inline double efficacy_score(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw InvalidInput("efficacy_score: no pairs");
    std::size_t wins = 0;
    for (const auto& [p_new, p_old] : pairs) {
        if (!std::isfinite(p_new) || !std::isfinite(p_old))
            throw InvalidInput("efficacy_score: non-finite probability");
        if (p_new > p_old) ++wins;
    }
    return static_cast<double>(wins) / static_cast<double>(pairs.size());
}

inline const std::set<std::string>& core_pronouns() {
    static const std::set<std::string> s = {"she", "he"};
    return s;
}

inline const std::set<std::string>& all_gendered_pronouns() {
    static const std::set<std::string> s = {"she", "he",   "her",     "him",
                                            "hers", "his", "herself", "himself"};
    return s;
}

/// Pronoun-weighted lexical overlap. Conversion weight is the fraction of the
/// original's pronoun occurrences no longer present in the generation (1 when
/// the original has none); overlap compares content token sets (types, not
/// counts), excluding pronouns and punctuation.
inline double pronoun_score(const std::string& original, const std::string& generated,
                            const std::set<std::string>& pronoun_set) {
    bool original_blank = true;
    for (char c : original)
        if (!std::isspace(static_cast<unsigned char>(c))) { original_blank = false; break; }
    if (original_blank) throw InvalidInput("pronoun_score: empty original");

    bool generated_blank = true;
    for (char c : generated)
        if (!std::isspace(static_cast<unsigned char>(c))) { generated_blank = false; break; }
    if (generated_blank) return 0.0;

    auto is_punct_token = [](const std::string& t) {
        return t.size() == 1 && std::ispunct(static_cast<unsigned char>(t[0]));
    };
    auto split = [&](const std::string& text, std::size_t& pronoun_count) {
        std::set<std::string> content;
        pronoun_count = 0;
        for (const std::string& t : tokenize(text).texts) {
            if (pronoun_set.count(t)) {
                ++pronoun_count;
            } else if (!is_punct_token(t)) {
                content.insert(t);
            }
        }
        return content;
    };

    std::size_t ori_pron = 0, gen_pron = 0;
    const std::set<std::string> t_ori = split(original, ori_pron);
    const std::set<std::string> t_gen = split(generated, gen_pron);

    double w = 1.0;
    if (ori_pron > 0) {
        const std::size_t converted = gen_pron >= ori_pron ? 0 : ori_pron - gen_pron;
        w = static_cast<double>(converted) / static_cast<double>(ori_pron);
    }
    if (t_ori.empty()) return 0.0;
    std::size_t inter = 0;
    for (const auto& t : t_ori) inter += t_gen.count(t);
    return w * static_cast<double>(inter) / static_cast<double>(t_ori.size());
}

/// CSV with header "layer,head,distance", one row per (layer, head).
inline void export_heatmap(const Matrix& distances, const std::string& path) {
    if (!all_finite(distances)) throw InvalidInput("export_heatmap: non-finite distances");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_heatmap: cannot open " + path);
    out << "layer,head,distance\n";
    for (std::size_t l = 0; l < distances.rows; ++l)
        for (std::size_t h = 0; h < distances.cols; ++h)
            out << l << "," << h << "," << format_double17(distances(l, h)) << "\n";
    if (!out) throw IoError("export_heatmap: write failed for " + path);
}

/// Joint 2-component PCA over the stacked positive and negative key rows;
/// each data row is one pair's coordinates, and the final MEAN_SHIFT row is
/// the mean of (pos - neg) in PCA coordinates.
inline void export_pca_shift(const Matrix& pos_keys, const Matrix& neg_keys,
                             const std::string& path) {
    if (pos_keys.rows != neg_keys.rows || pos_keys.cols != neg_keys.cols)
        throw InvalidInput("export_pca_shift: paired key matrices differ in shape");
    if (!all_finite(pos_keys) || !all_finite(neg_keys))
        throw InvalidInput("export_pca_shift: non-finite keys");

    const std::size_t n = pos_keys.rows;
    Matrix stacked(2 * n, pos_keys.cols);
    for (std::size_t i = 0; i < n; ++i) {
        std::copy_n(neg_keys.row(i), pos_keys.cols, stacked.row(i));
        std::copy_n(pos_keys.row(i), pos_keys.cols, stacked.row(n + i));
    }
    const Pca2Result pca = pca2(stacked);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("export_pca_shift: cannot open " + path);
    out << "pair,neg_x,neg_y,pos_x,pos_y\n";
    double dx = 0.0, dy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double nx = pca.projected(i, 0), ny = pca.projected(i, 1);
        const double px = pca.projected(n + i, 0), py = pca.projected(n + i, 1);
        dx += px - nx;
        dy += py - ny;
        out << i << "," << format_double17(nx) << "," << format_double17(ny) << ","
            << format_double17(px) << "," << format_double17(py) << "\n";
    }
    dx /= static_cast<double>(n);
    dy /= static_cast<double>(n);
    out << "MEAN_SHIFT," << format_double17(dx) << "," << format_double17(dy) << "\n";
    if (!out) throw IoError("export_pca_shift: write failed for " + path);
}

}  // namespace seka

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "seka/data.hpp"
#include "seka/model.hpp"
#include "seka/spectral.hpp"

namespace seka {

/// Per-(layer, kv_head) spectral components learned from contrastive
/// triplets. U and S are stored (not materialized projections) so one bank
/// serves both static steering and query-adaptive routing; P+/P- are rebuilt
/// at plan construction.
struct BankEntry {
    Matrix u_pos;                // d_k x d_k
    std::vector<double> s_pos;   // d_k, descending
    Matrix u_neg;
    std::vector<double> s_neg;
    std::size_t k_pos = 0;
    std::size_t k_neg = 0;
    double head_distance = 0.0;
};

struct ProjectionBank {
    std::uint64_t fingerprint = 0;
    double gamma = 0.0;
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::size_t d_k = 0;
    std::vector<BankEntry> entries;  // layer-major: layer * n_kv_heads + kv_head

    const BankEntry& entry(std::size_t layer, std::size_t kv_head) const {
        return entries[layer * n_kv_heads + kv_head];
    }
};

struct HeadSelection {
    std::uint64_t fingerprint = 0;
    double delta_min = 0.0;
    std::vector<std::pair<std::size_t, std::size_t>> selected;  // (layer, kv_head), sorted
};

namespace detail {

/// Pooled span-key stacks per (layer, kv_head): one n x d_k matrix per cell,
/// rows aligned token-for-token across the prompt lists.
struct PooledKeys {
    std::size_t n_tokens = 0;
    std::vector<Matrix> cells;  // layer-major
};

inline PooledKeys pool_span_keys(const ToyModel& model, const std::vector<std::string>& prompts,
                                 const std::vector<std::string>& spans) {
    const std::size_t n_cells = model.config.n_layers * model.config.n_kv_heads;
    PooledKeys pooled;
    pooled.cells.assign(n_cells, Matrix());

    std::vector<std::vector<Matrix>> slices(prompts.size());
    std::vector<std::size_t> lens(prompts.size(), 0);
    for (std::size_t i = 0; i < prompts.size(); ++i) {
        const TokenSequence seq = tokenize(prompts[i]);
        const TokenSpan span = resolve_span(seq, spans[i]);
        slices[i] = capture_keys(model, seq, span);
        lens[i] = span.size();
        pooled.n_tokens += span.size();
    }
    for (std::size_t c = 0; c < n_cells; ++c) {
        Matrix stack(pooled.n_tokens, model.config.d_k);
        std::size_t row = 0;
        for (std::size_t i = 0; i < prompts.size(); ++i) {
            for (std::size_t t = 0; t < lens[i]; ++t)
                std::copy_n(slices[i][c].row(t), model.config.d_k, stack.row(row++));
        }
        pooled.cells[c] = std::move(stack);
    }
    return pooled;
}

}  // namespace detail

/// Mean per-token L2 distance between aligned positive and negative key rows,
/// one value per (layer, kv_head) cell.
inline Matrix compute_head_distances(const std::vector<Matrix>& pos_cells,
                                     const std::vector<Matrix>& neg_cells,
                                     std::size_t n_layers, std::size_t n_kv_heads) {
    if (pos_cells.size() != neg_cells.size() || pos_cells.size() != n_layers * n_kv_heads)
        throw InvalidInput("compute_head_distances: cell count mismatch");
    Matrix d(n_layers, n_kv_heads);
    for (std::size_t l = 0; l < n_layers; ++l) {
        for (std::size_t h = 0; h < n_kv_heads; ++h) {
            const Matrix& pos = pos_cells[l * n_kv_heads + h];
            const Matrix& neg = neg_cells[l * n_kv_heads + h];
            if (pos.rows != neg.rows || pos.cols != neg.cols || pos.rows == 0)
                throw InvalidInput("compute_head_distances: misaligned captures");
            double acc = 0.0;
            for (std::size_t t = 0; t < pos.rows; ++t) {
                double sq = 0.0;
                for (std::size_t c = 0; c < pos.cols; ++c) {
                    const double diff = pos(t, c) - neg(t, c);
                    sq += diff * diff;
                }
                acc += std::sqrt(sq);
            }
            d(l, h) = acc / static_cast<double>(pos.rows);
        }
    }
    return d;
}

/// Offline learning pass: pools span keys across triplets under all three
/// prompt variants, then per (layer, kv_head) computes cross-covariances,
/// their SVDs, variance-threshold ranks, and the head distance.
inline ProjectionBank learn_bank(const ToyModel& model, const std::vector<PromptTriplet>& triplets,
                                 double gamma) {
    if (triplets.empty()) throw InvalidInput("learn_bank: no triplets");
    if (!(gamma > 0.0 && gamma <= 1.0)) throw InvalidInput("learn_bank: gamma must be in (0, 1]");

    std::vector<std::string> neutral, positive, negative, spans;
    for (std::size_t i = 0; i < triplets.size(); ++i) {
        const PromptTriplet& t = triplets[i];
        try {
            // Offsets are recomputed per variant; prompts only need to contain
            // the span somewhere in their context region.
            resolve_span(tokenize(t.neutral_prompt), t.span_text);
            resolve_span(tokenize(t.positive_prompt), t.span_text);
            resolve_span(tokenize(t.negative_prompt), t.span_text);
        } catch (const InvalidInput& e) {
            throw SpanResolutionError(e.what(), i);
        }
        neutral.push_back(t.neutral_prompt);
        positive.push_back(t.positive_prompt);
        negative.push_back(t.negative_prompt);
        spans.push_back(t.span_text);
    }

    const detail::PooledKeys h_neu = detail::pool_span_keys(model, neutral, spans);
    const detail::PooledKeys h_pos = detail::pool_span_keys(model, positive, spans);
    const detail::PooledKeys h_neg = detail::pool_span_keys(model, negative, spans);
    if (h_neu.n_tokens == 0) throw InvalidInput("learn_bank: zero pooled tokens");

    ProjectionBank bank;
    bank.fingerprint = model.fingerprint;
    bank.gamma = gamma;
    bank.n_layers = model.config.n_layers;
    bank.n_kv_heads = model.config.n_kv_heads;
    bank.d_k = model.config.d_k;
    bank.entries.assign(bank.n_layers * bank.n_kv_heads, BankEntry());

    const Matrix distances = compute_head_distances(h_pos.cells, h_neg.cells, bank.n_layers,
                                                    bank.n_kv_heads);

    std::vector<std::string> cell_errors(bank.entries.size());
    parallel_for(bank.entries.size(), [&](std::size_t c) {
        try {
            const Matrix omega_pos = cross_covariance(h_neu.cells[c], h_pos.cells[c]);
            const Matrix omega_neg = cross_covariance(h_neu.cells[c], h_neg.cells[c]);
            const SvdResult sv_pos = svd(omega_pos);
            const SvdResult sv_neg = svd(omega_neg);
            BankEntry& e = bank.entries[c];
            e.k_pos = select_rank(sv_pos.s, gamma, RankSide::positive);
            e.k_neg = select_rank(sv_neg.s, gamma, RankSide::negative);
            e.u_pos = sv_pos.u;
            e.s_pos = sv_pos.s;
            e.u_neg = sv_neg.u;
            e.s_neg = sv_neg.s;
            e.head_distance = distances.data[c];
        } catch (const Error& err) {
            cell_errors[c] = err.what();
        }
    });
    for (std::size_t c = 0; c < cell_errors.size(); ++c) {
        if (!cell_errors[c].empty()) {
            const std::size_t l = c / bank.n_kv_heads;
            const std::size_t h = c % bank.n_kv_heads;
            throw InvalidInput("learn_bank: cell (layer " + std::to_string(l) + ", kv_head " +
                               std::to_string(h) + "): " + cell_errors[c]);
        }
    }
    return bank;
}

inline Matrix head_distance_matrix(const ProjectionBank& bank) {
    Matrix d(bank.n_layers, bank.n_kv_heads);
    for (std::size_t c = 0; c < bank.entries.size(); ++c)
        d.data[c] = bank.entries[c].head_distance;
    return d;
}

inline HeadSelection select_heads(const Matrix& distances, double delta_min,
                                  std::uint64_t fingerprint = 0) {
    if (!all_finite(distances)) throw InvalidInput("select_heads: non-finite distances");
    HeadSelection sel;
    sel.fingerprint = fingerprint;
    sel.delta_min = delta_min;
    for (std::size_t l = 0; l < distances.rows; ++l)
        for (std::size_t h = 0; h < distances.cols; ++h)
            if (distances(l, h) >= delta_min) sel.selected.emplace_back(l, h);
    return sel;
}

inline HeadSelection select_heads(const ProjectionBank& bank, double delta_min) {
    return select_heads(head_distance_matrix(bank), delta_min, bank.fingerprint);
}

/// Rebuilds P+/P- from the stored components and combines them into one edit
/// matrix (g+ P+ + g- P-) / 2 per selected head.
inline EditPlan make_edit_plan(const ProjectionBank& bank, const HeadSelection& selection,
                               const SteeringGains& gains, const std::vector<std::size_t>& mask) {
    if (mask.empty()) throw InvalidInput("make_edit_plan: empty highlight mask");
    if (selection.fingerprint != bank.fingerprint)
        throw InvalidPlan("make_edit_plan: selection/bank fingerprint mismatch");
    if (!std::isfinite(gains.g_pos) || !std::isfinite(gains.g_neg))
        throw InvalidInput("make_edit_plan: non-finite gains");

    EditPlan plan;
    plan.fingerprint = bank.fingerprint;
    plan.g_pos = gains.g_pos;
    plan.g_neg = gains.g_neg;
    plan.mask = mask;
    std::sort(plan.mask.begin(), plan.mask.end());
    plan.mask.erase(std::unique(plan.mask.begin(), plan.mask.end()), plan.mask.end());

    for (const auto& [l, h] : selection.selected) {
        if (l >= bank.n_layers || h >= bank.n_kv_heads)
            throw InvalidPlan("make_edit_plan: selection outside bank");
        const BankEntry& e = bank.entry(l, h);
        const Matrix p_pos = detail::projector_from_columns(e.u_pos, 0, e.k_pos);
        Matrix p_neg(bank.d_k, bank.d_k);
        if (e.k_neg < bank.d_k)
            p_neg = detail::projector_from_columns(e.u_neg, e.k_neg, bank.d_k - e.k_neg);
        EditPlanEntry entry;
        entry.layer = l;
        entry.kv_head = h;
        entry.edit = Matrix(bank.d_k, bank.d_k);
        for (std::size_t i = 0; i < entry.edit.data.size(); ++i)
            entry.edit.data[i] = (gains.g_pos * p_pos.data[i] + gains.g_neg * p_neg.data[i]) / 2.0;
        entry.is_zero = true;
        for (double v : entry.edit.data)
            if (v != 0.0) { entry.is_zero = false; break; }
        plan.entries.push_back(std::move(entry));
    }
    return plan;
}

/// Dual-path check of the key-edit/bias equivalence. Path A is the steered
/// attention logit; path B adds q^T (M k) / sqrt(d_k) to the logit formed
/// from the same run's pre-edit keys. The check is layer-local: upstream
/// activations come from the steered run, since edits at one layer legally
/// change everything downstream.
inline double verify_bias_equivalence(const ToyModel& model, const TokenSequence& seq,
                                      const EditPlan& plan) {
    CaptureFlags flags;
    flags.keys = true;
    flags.queries = true;
    flags.attn_logits = true;
    const ForwardResult steered = forward(model, seq, &plan, flags);

    const std::size_t T = seq.ids.size();
    const std::size_t dk = model.config.d_k;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const std::size_t groups = model.group_size();

    std::vector<char> masked(T, 0);
    for (std::size_t pos : plan.mask) masked[pos] = 1;
    std::vector<const Matrix*> edit_by_cell(model.config.n_layers * model.config.n_kv_heads,
                                            nullptr);
    for (const auto& e : plan.entries)
        edit_by_cell[e.layer * model.config.n_kv_heads + e.kv_head] = &e.edit;

    double max_diff = 0.0;
    std::vector<double> mk(dk);
    for (std::size_t l = 0; l < model.config.n_layers; ++l) {
        for (std::size_t qh = 0; qh < model.config.n_query_heads; ++qh) {
            const std::size_t kvh = qh / groups;
            const Matrix* edit = edit_by_cell[l * model.config.n_kv_heads + kvh];
            const Matrix& q = steered.captures.query_matrix(l, qh);
            const Matrix& k = steered.captures.key_matrix(l, kvh);
            const Matrix& logits = steered.captures.attn_logits[l * model.config.n_query_heads + qh];
            for (std::size_t i = 0; i < T; ++i) {
                const double* qi = q.row(i);
                for (std::size_t j = 0; j <= i; ++j) {
                    const double* kj = k.row(j);
                    double path_b = dot(qi, kj, dk) * inv_sqrt_dk;
                    if (edit && masked[j]) {
                        for (std::size_t r = 0; r < dk; ++r)
                            mk[r] = dot(edit->row(r), kj, dk);
                        path_b += dot(qi, mk.data(), dk) * inv_sqrt_dk;
                    }
                    max_diff = std::max(max_diff, std::abs(logits(i, j) - path_b));
                }
            }
        }
    }
    return max_diff;
}

}  // namespace seka

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "seka/steering.hpp"

namespace seka {

/// Top-K positive spectral components of one expert for one (layer, kv_head).
struct ExpertEntry {
    Matrix u;               // d_k x K, orthonormal columns
    std::vector<double> s;  // K values, descending
};

struct Expert {
    std::string name;
    std::vector<ExpertEntry> entries;  // layer-major: layer * n_kv_heads + kv_head
};

struct ExpertBank {
    std::uint64_t fingerprint = 0;
    std::size_t top_k = 0;
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::size_t d_k = 0;
    std::vector<Expert> experts;

    const ExpertEntry& entry(std::size_t expert, std::size_t layer, std::size_t kv_head) const {
        return experts[expert].entries[layer * n_kv_heads + kv_head];
    }
};

/// alpha[expert][layer][kv_head] plus the raw alignment scores they were
/// normalized from.
struct RoutingCoefficients {
    std::size_t n_experts = 0;
    std::size_t n_layers = 0;
    std::size_t n_kv_heads = 0;
    std::vector<double> alpha;  // expert-major: (m * n_layers + l) * n_kv_heads + h
    std::vector<double> raw;

    double at(std::size_t m, std::size_t l, std::size_t h) const {
        return alpha[(m * n_layers + l) * n_kv_heads + h];
    }
    double raw_at(std::size_t m, std::size_t l, std::size_t h) const {
        return raw[(m * n_layers + l) * n_kv_heads + h];
    }
};

/// Runs the positive half of the bank-learning pipeline on an expert's
/// neutral/positive pairs and keeps the top-K components per (layer, kv_head).
/// Multi-span pairs pool every span's tokens into one key stack.
inline Expert learn_expert(const ToyModel& model, const ExpertDataset& dataset, std::size_t k) {
    if (dataset.pairs.empty()) throw InvalidInput("learn_expert: empty dataset");
    if (k < 1 || k > model.config.d_k)
        throw InvalidInput("learn_expert: K must be in [1, d_k]");

    std::vector<std::string> neutral, positive, spans;
    for (std::size_t i = 0; i < dataset.pairs.size(); ++i) {
        const ExpertPair& p = dataset.pairs[i];
        if (p.span_texts.empty())
            throw InvalidInput("learn_expert: pair " + std::to_string(i) + " has no spans");
        for (const std::string& span : p.span_texts) {
            try {
                resolve_span(tokenize(p.neutral_prompt), span);
                resolve_span(tokenize(p.positive_prompt), span);
            } catch (const InvalidInput& e) {
                throw SpanResolutionError(e.what(), i);
            }
            neutral.push_back(p.neutral_prompt);
            positive.push_back(p.positive_prompt);
            spans.push_back(span);
        }
    }

    const detail::PooledKeys h_neu = detail::pool_span_keys(model, neutral, spans);
    const detail::PooledKeys h_pos = detail::pool_span_keys(model, positive, spans);
    if (h_neu.n_tokens == 0) throw InvalidInput("learn_expert: zero pooled tokens");

    Expert expert;
    expert.name = dataset.name;
    expert.entries.assign(h_neu.cells.size(), ExpertEntry());
    std::vector<std::string> cell_errors(h_neu.cells.size());
    parallel_for(h_neu.cells.size(), [&](std::size_t c) {
        try {
            const Matrix omega = cross_covariance(h_neu.cells[c], h_pos.cells[c]);
            const SvdResult sv = svd(omega);
            ExpertEntry& e = expert.entries[c];
            e.u = columns(sv.u, 0, k);
            e.s.assign(sv.s.begin(), sv.s.begin() + static_cast<std::ptrdiff_t>(k));
        } catch (const Error& err) {
            cell_errors[c] = err.what();
        }
    });
    for (std::size_t c = 0; c < cell_errors.size(); ++c)
        if (!cell_errors[c].empty())
            throw InvalidInput("learn_expert: cell " + std::to_string(c) + ": " + cell_errors[c]);
    return expert;
}

/// Per (layer, kv_head): raw_m = sum_k (q . u_m^(k)) * sigma_m^(k), then
/// alpha_m = raw_m / max_m |raw_m|, sign preserved. All-zero raw scores yield
/// all-zero alphas (query carries no routing evidence for that head).
inline RoutingCoefficients route_coefficients(
    const std::vector<std::vector<double>>& last_queries, const ExpertBank& bank) {
    if (bank.experts.empty()) throw InvalidInput("route_coefficients: empty expert bank");
    if (last_queries.size() != bank.n_layers * bank.n_kv_heads)
        throw InvalidInput("route_coefficients: query grid does not match bank");
    for (const auto& q : last_queries)
        if (q.size() != bank.d_k)
            throw InvalidInput("route_coefficients: query dimension mismatch");

    RoutingCoefficients rc;
    rc.n_experts = bank.experts.size();
    rc.n_layers = bank.n_layers;
    rc.n_kv_heads = bank.n_kv_heads;
    rc.alpha.assign(rc.n_experts * rc.n_layers * rc.n_kv_heads, 0.0);
    rc.raw.assign(rc.alpha.size(), 0.0);

    std::size_t silent_cells = 0;
    for (std::size_t l = 0; l < rc.n_layers; ++l) {
        for (std::size_t h = 0; h < rc.n_kv_heads; ++h) {
            const std::vector<double>& q = last_queries[l * rc.n_kv_heads + h];
            double max_abs = 0.0;
            for (std::size_t m = 0; m < rc.n_experts; ++m) {
                const ExpertEntry& e = bank.entry(m, l, h);
                double raw = 0.0;
                for (std::size_t kk = 0; kk < bank.top_k; ++kk) {
                    double align = 0.0;
                    for (std::size_t i = 0; i < bank.d_k; ++i) align += q[i] * e.u(i, kk);
                    raw += align * e.s[kk];
                }
                rc.raw[(m * rc.n_layers + l) * rc.n_kv_heads + h] = raw;
                max_abs = std::max(max_abs, std::abs(raw));
            }
            if (max_abs == 0.0) {
                ++silent_cells;
                continue;
            }
            for (std::size_t m = 0; m < rc.n_experts; ++m) {
                const std::size_t idx = (m * rc.n_layers + l) * rc.n_kv_heads + h;
                rc.alpha[idx] = rc.raw[idx] / max_abs;
            }
        }
    }
    if (silent_cells > 0)
        warn("route_coefficients: " + std::to_string(silent_cells) +
             " head(s) had all-zero alignment; steering is a no-op there");
    return rc;
}

/// P_dyn = sum_m alpha_m U_m U_m^T. A signed sum of projections: symmetric,
/// generally not idempotent.
inline Matrix dynamic_projection(const RoutingCoefficients& rc, const ExpertBank& bank,
                                 std::size_t layer, std::size_t kv_head) {
    if (layer >= bank.n_layers || kv_head >= bank.n_kv_heads)
        throw InvalidInput("dynamic_projection: index out of range");
    Matrix p(bank.d_k, bank.d_k);
    for (std::size_t m = 0; m < rc.n_experts; ++m) {
        const double a = rc.at(m, layer, kv_head);
        if (a == 0.0) continue;
        const ExpertEntry& e = bank.entry(m, layer, kv_head);
        for (std::size_t kk = 0; kk < bank.top_k; ++kk)
            for (std::size_t r = 0; r < bank.d_k; ++r) {
                const double ur = e.u(r, kk);
                if (ur == 0.0) continue;
                for (std::size_t c = 0; c < bank.d_k; ++c) p(r, c) += a * ur * e.u(c, kk);
            }
    }
    return p;
}

/// Prompt-specific plan: captures last-token group-mean queries, routes per
/// selected head, and installs g * P_dyn as the edit matrix.
inline EditPlan adaseka_plan(const ToyModel& model, const TokenSequence& seq,
                             const ExpertBank& bank, const HeadSelection& selection, double g,
                             const std::vector<std::size_t>& mask) {
    if (mask.empty()) throw InvalidInput("adaseka_plan: empty highlight mask");
    if (bank.fingerprint != model.fingerprint)
        throw InvalidPlan("adaseka_plan: expert bank/model fingerprint mismatch");
    if (selection.fingerprint != bank.fingerprint)
        throw InvalidPlan("adaseka_plan: selection/bank fingerprint mismatch");
    if (!std::isfinite(g)) throw InvalidInput("adaseka_plan: non-finite gain");

    const std::vector<std::vector<double>> queries = capture_last_query(model, seq);
    const RoutingCoefficients rc = route_coefficients(queries, bank);

    EditPlan plan;
    plan.fingerprint = bank.fingerprint;
    plan.adaptive = true;
    plan.g_dynamic = g;
    plan.mask = mask;
    std::sort(plan.mask.begin(), plan.mask.end());
    plan.mask.erase(std::unique(plan.mask.begin(), plan.mask.end()), plan.mask.end());

    for (const auto& [l, h] : selection.selected) {
        if (l >= bank.n_layers || h >= bank.n_kv_heads)
            throw InvalidPlan("adaseka_plan: selection outside bank");
        EditPlanEntry entry;
        entry.layer = l;
        entry.kv_head = h;
        entry.edit = scaled(dynamic_projection(rc, bank, l, h), g);
        entry.is_zero = true;
        for (double v : entry.edit.data)
            if (v != 0.0) { entry.is_zero = false; break; }
        plan.entries.push_back(std::move(entry));
    }
    return plan;
}

}  // namespace seka

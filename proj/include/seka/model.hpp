#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "seka/matrix.hpp"

namespace seka {

constexpr std::size_t kVocabSlots = 65536;

struct ModelConfig {
    std::size_t n_layers = 1;
    std::size_t n_query_heads = 1;
    std::size_t n_kv_heads = 1;
    std::size_t d_model = 1;
    std::size_t d_k = 1;
    std::size_t max_seq = 1;
    std::uint64_t seed = 0;
};

inline void validate(const ModelConfig& c) {
    if (c.n_layers < 1 || c.n_query_heads < 1 || c.n_kv_heads < 1 || c.d_model < 1 ||
        c.d_k < 1 || c.max_seq < 1)
        throw InvalidConfig("model config: all counts must be >= 1");
    if (c.n_query_heads % c.n_kv_heads != 0)
        throw InvalidConfig("model config: n_query_heads must be divisible by n_kv_heads");
    if (c.d_model != c.n_query_heads * c.d_k)
        throw InvalidConfig("model config: d_model must equal n_query_heads * d_k");
}

/// Canonical compact JSON; fixed key order so the fingerprint is stable.
inline std::string canonical_config_json(const ModelConfig& c) {
    std::string s = "{\"n_layers\":" + std::to_string(c.n_layers);
    s += ",\"n_query_heads\":" + std::to_string(c.n_query_heads);
    s += ",\"n_kv_heads\":" + std::to_string(c.n_kv_heads);
    s += ",\"d_model\":" + std::to_string(c.d_model);
    s += ",\"d_k\":" + std::to_string(c.d_k);
    s += ",\"max_seq\":" + std::to_string(c.max_seq);
    s += ",\"seed\":" + std::to_string(c.seed);
    s += "}";
    return s;
}

inline std::uint64_t config_fingerprint(const ModelConfig& c) {
    return fnv1a64(canonical_config_json(c));
}

struct TokenSequence {
    std::vector<std::uint32_t> ids;
    std::vector<std::string> texts;
    std::vector<std::pair<std::size_t, std::size_t>> offsets;  // [begin, end) in source text
};

/// Lowercases, splits on whitespace, splits punctuation into single-character
/// tokens; ids are FNV-1a hashes reduced modulo the embedding slot count.
inline TokenSequence tokenize(const std::string& text) {
    TokenSequence seq;
    std::string cur;
    std::size_t cur_begin = 0;
    auto flush = [&](std::size_t end) {
        if (cur.empty()) return;
        seq.texts.push_back(cur);
        seq.offsets.emplace_back(cur_begin, end);
        cur.clear();
    };
    for (std::size_t i = 0; i < text.size(); ++i) {
        const unsigned char uc = static_cast<unsigned char>(text[i]);
        const char lc = static_cast<char>(std::tolower(uc));
        if (std::isspace(uc)) {
            flush(i);
        } else if (std::ispunct(uc)) {
            flush(i);
            seq.texts.emplace_back(1, lc);
            seq.offsets.emplace_back(i, i + 1);
        } else {
            if (cur.empty()) cur_begin = i;
            cur.push_back(lc);
        }
    }
    flush(text.size());
    if (seq.texts.empty()) throw InvalidInput("tokenize: text is empty after trimming");
    seq.ids.reserve(seq.texts.size());
    for (const auto& t : seq.texts)
        seq.ids.push_back(static_cast<std::uint32_t>(fnv1a64(t) % kVocabSlots));
    return seq;
}

/// Half-open token index range.
struct TokenSpan {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
};

/// One resolved key edit: at masked positions of (layer, kv_head) the key
/// becomes k + edit * k. Entries whose matrix is exactly zero are skipped so
/// zero-gain plans reproduce the unsteered forward bit for bit.
struct EditPlanEntry {
    std::size_t layer = 0;
    std::size_t kv_head = 0;
    Matrix edit;  // d_k x d_k
    bool is_zero = true;
};

struct EditPlan {
    std::uint64_t fingerprint = 0;
    std::vector<EditPlanEntry> entries;
    std::vector<std::size_t> mask;  // highlighted token indices, sorted unique
    // Metadata only: the gains the plan was built from.
    double g_pos = 0.0;
    double g_neg = 0.0;
    bool adaptive = false;
    double g_dynamic = 0.0;
};

inline bool plan_is_identity(const EditPlan& plan) {
    if (plan.mask.empty()) return true;
    for (const auto& e : plan.entries)
        if (!e.is_zero) return false;
    return true;
}

struct CaptureFlags {
    bool keys = false;          // pre-edit keys, per (layer, kv_head)
    bool edited_keys = false;   // keys as seen by attention
    bool queries = false;       // all positions, per (layer, query_head)
    bool last_queries = false;  // group-mean query of the final position
    bool attn_logits = false;   // full T x T score matrices (debug only)
    bool attn_weights = false;  // full T x T softmax matrices (debug only)

    bool wants_full_attention() const { return attn_logits || attn_weights; }
};

struct CaptureRecord {
    std::size_t n_layers = 0;
    std::size_t n_query_heads = 0;
    std::size_t n_kv_heads = 0;
    std::vector<Matrix> keys;          // [layer * n_kv_heads + h] -> T x d_k
    std::vector<Matrix> edited_keys;   // same indexing
    std::vector<Matrix> queries;       // [layer * n_query_heads + qh] -> T x d_k
    std::vector<std::vector<double>> last_queries;  // [layer * n_kv_heads + h] -> d_k
    std::vector<Matrix> attn_logits;   // [layer * n_query_heads + qh] -> T x T
    std::vector<Matrix> attn_weights;  // same indexing

    const Matrix& key_matrix(std::size_t layer, std::size_t kv_head) const {
        return keys[layer * n_kv_heads + kv_head];
    }
    const Matrix& query_matrix(std::size_t layer, std::size_t query_head) const {
        return queries[layer * n_query_heads + query_head];
    }
};

struct ForwardResult {
    std::vector<double> next_token_scores;  // one score per embedding slot
    CaptureRecord captures;
};

/// Counts allocations of full T x T attention buffers. The streaming
/// attention path never performs one; only explicit debug capture does.
inline std::atomic<std::uint64_t>& attention_matrix_allocations() {
    static std::atomic<std::uint64_t> counter{0};
    return counter;
}

namespace detail {

enum WeightRole : std::uint64_t {
    kRoleWq = 1,
    kRoleWk = 2,
    kRoleWv = 3,
    kRoleWo = 4,
    kRoleFf1 = 5,
    kRoleFf2 = 6,
    kRoleEmbedding = 7,
};

inline Matrix draw_matrix(std::uint64_t seed, std::uint64_t layer, std::uint64_t role,
                          std::size_t rows, std::size_t cols) {
    SplitMix64 rng(derive_stream(seed, layer, role));
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    Matrix m(rows, cols);
    for (double& v : m.data) v = rng.uniform(-a, a);
    return m;
}

}  // namespace detail

struct LayerWeights {
    Matrix w_q;   // d_model x d_model
    Matrix w_k;   // d_model x (n_kv_heads * d_k)
    Matrix w_v;   // d_model x (n_kv_heads * d_k)
    Matrix w_o;   // d_model x d_model
    Matrix ff1;   // d_model x d_ff
    Matrix ff2;   // d_ff x d_model
    std::vector<double> norm_attn;  // d_model, RMS-norm scale
    std::vector<double> norm_ffn;
};

/// Deterministic decoder-only transformer with grouped-query attention and
/// hashed tied embeddings. Immutable after construction; regeneration from
/// (config, seed) is byte-identical.
struct ToyModel {
    ModelConfig config;
    std::uint64_t fingerprint = 0;
    std::size_t d_ff = 0;
    std::vector<LayerWeights> layers;
    Matrix embeddings;  // kVocabSlots x d_model

    std::size_t group_size() const { return config.n_query_heads / config.n_kv_heads; }
};

inline ToyModel init_model(const ModelConfig& cfg) {
    validate(cfg);
    ToyModel m;
    m.config = cfg;
    m.fingerprint = config_fingerprint(cfg);
    m.d_ff = 4 * cfg.d_model;
    const std::size_t kv_width = cfg.n_kv_heads * cfg.d_k;
    m.layers.resize(cfg.n_layers);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        LayerWeights& w = m.layers[l];
        w.w_q = detail::draw_matrix(cfg.seed, l, detail::kRoleWq, cfg.d_model, cfg.d_model);
        w.w_k = detail::draw_matrix(cfg.seed, l, detail::kRoleWk, cfg.d_model, kv_width);
        w.w_v = detail::draw_matrix(cfg.seed, l, detail::kRoleWv, cfg.d_model, kv_width);
        w.w_o = detail::draw_matrix(cfg.seed, l, detail::kRoleWo, cfg.d_model, cfg.d_model);
        w.ff1 = detail::draw_matrix(cfg.seed, l, detail::kRoleFf1, cfg.d_model, m.d_ff);
        w.ff2 = detail::draw_matrix(cfg.seed, l, detail::kRoleFf2, m.d_ff, cfg.d_model);
        w.norm_attn.assign(cfg.d_model, 1.0);
        w.norm_ffn.assign(cfg.d_model, 1.0);
    }
    m.embeddings = Matrix(kVocabSlots, cfg.d_model);
    for (std::size_t slot = 0; slot < kVocabSlots; ++slot) {
        SplitMix64 rng(derive_stream(cfg.seed, slot, detail::kRoleEmbedding));
        const double a = std::sqrt(3.0 / static_cast<double>(cfg.d_model));
        double* row = m.embeddings.row(slot);
        for (std::size_t j = 0; j < cfg.d_model; ++j) row[j] = rng.uniform(-a, a);
    }
    return m;
}

namespace detail {

inline void rms_norm_row(const double* x, const std::vector<double>& scale, double* out,
                         std::size_t d) {
    double ms = 0.0;
    for (std::size_t i = 0; i < d; ++i) ms += x[i] * x[i];
    const double inv = 1.0 / std::sqrt(ms / static_cast<double>(d) + 1e-6);
    for (std::size_t i = 0; i < d; ++i) out[i] = x[i] * inv * scale[i];
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline void validate_plan(const EditPlan& plan, const ToyModel& model, std::size_t seq_len) {
    if (plan.fingerprint != model.fingerprint)
        throw InvalidPlan("edit plan: model fingerprint mismatch");
    for (const auto& e : plan.entries) {
        if (e.layer >= model.config.n_layers || e.kv_head >= model.config.n_kv_heads)
            throw InvalidPlan("edit plan: layer/head outside model config");
        if (e.edit.rows != model.config.d_k || e.edit.cols != model.config.d_k)
            throw InvalidPlan("edit plan: edit matrix has wrong shape");
        if (!all_finite(e.edit)) throw InvalidPlan("edit plan: non-finite edit matrix");
    }
    for (std::size_t pos : plan.mask)
        if (pos >= seq_len) throw InvalidPlan("edit plan: mask position beyond sequence");
}

}  // namespace detail

/// Causal grouped-query attention forward pass. Keys at masked positions of
/// planned (layer, kv_head) pairs are edited before any attention score is
/// formed. Attention is computed row by row with a T-sized scratch buffer;
/// T x T matrices exist only when explicitly captured.
inline ForwardResult forward(const ToyModel& model, const TokenSequence& seq,
                             const EditPlan* plan = nullptr, const CaptureFlags& flags = {}) {
    const ModelConfig& cfg = model.config;
    const std::size_t T = seq.ids.size();
    if (T == 0) throw InvalidInput("forward: empty sequence");
    if (T > cfg.max_seq) throw InvalidInput("forward: sequence exceeds max_seq");
    if (plan) detail::validate_plan(*plan, model, T);

    const std::size_t d = cfg.d_model;
    const std::size_t dk = cfg.d_k;
    const std::size_t groups = model.group_size();
    const std::size_t kv_width = cfg.n_kv_heads * dk;
    const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));
    const double emb_scale = std::sqrt(static_cast<double>(d));

    ForwardResult res;
    CaptureRecord& cap = res.captures;
    cap.n_layers = cfg.n_layers;
    cap.n_query_heads = cfg.n_query_heads;
    cap.n_kv_heads = cfg.n_kv_heads;
    if (flags.keys) cap.keys.assign(cfg.n_layers * cfg.n_kv_heads, Matrix(T, dk));
    if (flags.edited_keys) cap.edited_keys.assign(cfg.n_layers * cfg.n_kv_heads, Matrix(T, dk));
    if (flags.queries) cap.queries.assign(cfg.n_layers * cfg.n_query_heads, Matrix(T, dk));
    if (flags.last_queries)
        cap.last_queries.assign(cfg.n_layers * cfg.n_kv_heads, std::vector<double>(dk, 0.0));
    if (flags.attn_logits) {
        cap.attn_logits.reserve(cfg.n_layers * cfg.n_query_heads);
        for (std::size_t i = 0; i < cfg.n_layers * cfg.n_query_heads; ++i) {
            attention_matrix_allocations().fetch_add(1);
            cap.attn_logits.emplace_back(T, T);
        }
    }
    if (flags.attn_weights) {
        cap.attn_weights.reserve(cfg.n_layers * cfg.n_query_heads);
        for (std::size_t i = 0; i < cfg.n_layers * cfg.n_query_heads; ++i) {
            attention_matrix_allocations().fetch_add(1);
            cap.attn_weights.emplace_back(T, T);
        }
    }

    // Residual stream: token embedding (scaled) + sinusoidal position.
    Matrix x(T, d);
    for (std::size_t t = 0; t < T; ++t) {
        const double* emb = model.embeddings.row(seq.ids[t]);
        double* xt = x.row(t);
        for (std::size_t j = 0; j < d; ++j) xt[j] = emb[j] * emb_scale;
        for (std::size_t j = 0; j < d; j += 2) {
            const double freq = std::pow(10000.0, -static_cast<double>(j) / static_cast<double>(d));
            const double angle = static_cast<double>(t) * freq;
            xt[j] += std::sin(angle);
            if (j + 1 < d) xt[j + 1] += std::cos(angle);
        }
    }

    Matrix normed(T, d);
    std::vector<double> score_row;           // scratch, at most T entries
    std::vector<double> edited(dk);          // scratch for one key edit
    std::vector<char> masked(T, 0);
    if (plan)
        for (std::size_t pos : plan->mask) masked[pos] = 1;

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& w = model.layers[l];
        for (std::size_t t = 0; t < T; ++t)
            detail::rms_norm_row(x.row(t), w.norm_attn, normed.row(t), d);

        Matrix q = matmul(normed, w.w_q);  // T x d_model
        Matrix k = matmul(normed, w.w_k);  // T x kv_width
        Matrix v = matmul(normed, w.w_v);  // T x kv_width

        if (flags.keys) {
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
                Matrix& dst = cap.keys[l * cfg.n_kv_heads + h];
                for (std::size_t t = 0; t < T; ++t)
                    std::copy_n(k.row(t) + h * dk, dk, dst.row(t));
            }
        }

        if (plan) {
            for (const auto& e : plan->entries) {
                if (e.layer != l || e.is_zero) continue;
                for (std::size_t t = 0; t < T; ++t) {
                    if (!masked[t]) continue;
                    double* kt = k.row(t) + e.kv_head * dk;
                    for (std::size_t r = 0; r < dk; ++r) {
                        double acc = 0.0;
                        const double* er = e.edit.row(r);
                        for (std::size_t c = 0; c < dk; ++c) acc += er[c] * kt[c];
                        edited[r] = kt[r] + acc;
                    }
                    std::copy_n(edited.data(), dk, kt);
                }
            }
        }

        if (flags.edited_keys) {
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
                Matrix& dst = cap.edited_keys[l * cfg.n_kv_heads + h];
                for (std::size_t t = 0; t < T; ++t)
                    std::copy_n(k.row(t) + h * dk, dk, dst.row(t));
            }
        }
        if (flags.queries) {
            for (std::size_t qh = 0; qh < cfg.n_query_heads; ++qh) {
                Matrix& dst = cap.queries[l * cfg.n_query_heads + qh];
                for (std::size_t t = 0; t < T; ++t)
                    std::copy_n(q.row(t) + qh * dk, dk, dst.row(t));
            }
        }
        if (flags.last_queries) {
            for (std::size_t h = 0; h < cfg.n_kv_heads; ++h) {
                std::vector<double>& dst = cap.last_queries[l * cfg.n_kv_heads + h];
                for (std::size_t g = 0; g < groups; ++g) {
                    const double* qlast = q.row(T - 1) + (h * groups + g) * dk;
                    for (std::size_t j = 0; j < dk; ++j) dst[j] += qlast[j];
                }
                for (double& val : dst) val /= static_cast<double>(groups);
            }
        }

        Matrix attn_out(T, d);
        for (std::size_t qh = 0; qh < cfg.n_query_heads; ++qh) {
            const std::size_t kvh = qh / groups;
            Matrix* logit_mat = flags.attn_logits ? &cap.attn_logits[l * cfg.n_query_heads + qh]
                                                  : nullptr;
            Matrix* weight_mat = flags.attn_weights
                                     ? &cap.attn_weights[l * cfg.n_query_heads + qh]
                                     : nullptr;
            for (std::size_t i = 0; i < T; ++i) {
                const double* qi = q.row(i) + qh * dk;
                score_row.assign(i + 1, 0.0);
                double max_score = -HUGE_VAL;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double s = dot(qi, k.row(j) + kvh * dk, dk) * inv_sqrt_dk;
                    score_row[j] = s;
                    if (s > max_score) max_score = s;
                }
                if (logit_mat)
                    for (std::size_t j = 0; j <= i; ++j) (*logit_mat)(i, j) = score_row[j];
                double z = 0.0;
                for (std::size_t j = 0; j <= i; ++j) {
                    score_row[j] = std::exp(score_row[j] - max_score);
                    z += score_row[j];
                }
                double* oi = attn_out.row(i) + qh * dk;
                for (std::size_t j = 0; j <= i; ++j) {
                    const double weight = score_row[j] / z;
                    if (weight_mat) (*weight_mat)(i, j) = weight;
                    const double* vj = v.row(j) + kvh * dk;
                    for (std::size_t c = 0; c < dk; ++c) oi[c] += weight * vj[c];
                }
            }
        }

        Matrix projected = matmul(attn_out, w.w_o);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += projected.data[i];

        for (std::size_t t = 0; t < T; ++t)
            detail::rms_norm_row(x.row(t), w.norm_ffn, normed.row(t), d);
        Matrix hidden = matmul(normed, w.ff1);
        for (double& val : hidden.data) val = detail::silu(val);
        Matrix ffn_out = matmul(hidden, w.ff2);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += ffn_out.data[i];
    }

    // Tied-embedding readout at the final position.
    std::vector<double> final_scale(d, 1.0);
    std::vector<double> h_last(d);
    detail::rms_norm_row(x.row(T - 1), final_scale, h_last.data(), d);
    res.next_token_scores.resize(kVocabSlots);
    for (std::size_t slot = 0; slot < kVocabSlots; ++slot)
        res.next_token_scores[slot] = dot(model.embeddings.row(slot), h_last.data(), d);
    return res;
}

/// Unedited keys at span positions, one span_len x d_k matrix per
/// (layer, kv_head), indexed layer * n_kv_heads + kv_head.
inline std::vector<Matrix> capture_keys(const ToyModel& model, const TokenSequence& seq,
                                        const TokenSpan& span) {
    if (span.begin >= span.end || span.end > seq.ids.size())
        throw InvalidInput("capture_keys: span out of bounds");
    CaptureFlags flags;
    flags.keys = true;
    ForwardResult run = forward(model, seq, nullptr, flags);
    std::vector<Matrix> out;
    out.reserve(run.captures.keys.size());
    for (const Matrix& full : run.captures.keys) {
        Matrix slice(span.size(), model.config.d_k);
        for (std::size_t t = 0; t < span.size(); ++t)
            std::copy_n(full.row(span.begin + t), model.config.d_k, slice.row(t));
        out.push_back(std::move(slice));
    }
    return out;
}

/// Final-position query vectors averaged over the query heads of each KV
/// group; one d_k vector per (layer, kv_head).
inline std::vector<std::vector<double>> capture_last_query(const ToyModel& model,
                                                           const TokenSequence& seq) {
    CaptureFlags flags;
    flags.last_queries = true;
    ForwardResult run = forward(model, seq, nullptr, flags);
    return std::move(run.captures.last_queries);
}

/// Scales highlighted entries of a probability row by alpha and renormalizes.
inline std::vector<double> pasta_row_transform(const std::vector<double>& row,
                                               const std::vector<std::size_t>& highlight,
                                               double alpha) {
    if (!(alpha > 0.0)) throw InvalidInput("pasta_row_transform: alpha must be positive");
    double sum = 0.0;
    for (double p : row) {
        if (!(p >= 0.0)) throw InvalidInput("pasta_row_transform: negative probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-9)
        throw InvalidInput("pasta_row_transform: row does not sum to 1");
    std::vector<char> is_high(row.size(), 0);
    for (std::size_t idx : highlight) {
        if (idx >= row.size()) throw InvalidInput("pasta_row_transform: highlight out of range");
        is_high[idx] = 1;
    }
    double norm = 0.0;
    for (std::size_t j = 0; j < row.size(); ++j) norm += is_high[j] ? alpha * row[j] : row[j];
    std::vector<double> out(row.size());
    for (std::size_t j = 0; j < row.size(); ++j)
        out[j] = (is_high[j] ? alpha * row[j] : row[j]) / norm;
    return out;
}

}  // namespace seka

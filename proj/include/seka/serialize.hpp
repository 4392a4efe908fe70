#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "seka/adaseka.hpp"
#include "seka/data.hpp"
#include "seka/steering.hpp"

namespace seka {

// Files are written by hand with a fixed field order and 17-significant-digit
// decimals, so save -> load -> save reproduces the original bytes. Parsing
// goes through nlohmann::json with path-tracked accessors.

namespace jsonio {

using nlohmann::json;

inline std::string join(const std::string& parent, const std::string& key) {
    return parent.empty() ? key : parent + "." + key;
}

inline std::string index(const std::string& parent, std::size_t i) {
    return parent + "[" + std::to_string(i) + "]";
}

inline const json& member(const json& obj, const std::string& key, const std::string& path) {
    if (!obj.is_object()) throw SchemaError("expected an object", path.empty() ? "(document)" : path);
    auto it = obj.find(key);
    if (it == obj.end()) throw SchemaError("missing field", join(path, key));
    return *it;
}

inline std::uint64_t get_u64(const json& v, const std::string& path) {
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
        return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw SchemaError("expected a nonnegative integer", path);
}

inline std::size_t get_size(const json& v, const std::string& path) {
    return static_cast<std::size_t>(get_u64(v, path));
}

inline double get_double(const json& v, const std::string& path) {
    if (!v.is_number()) throw SchemaError("expected a number", path);
    return v.get<double>();
}

inline std::string get_string(const json& v, const std::string& path) {
    if (!v.is_string()) throw SchemaError("expected a string", path);
    return v.get<std::string>();
}

inline const json& get_array(const json& v, const std::string& path) {
    if (!v.is_array()) throw SchemaError("expected an array", path);
    return v;
}

inline void check_version(const json& obj, const std::string& path) {
    const std::uint64_t version = get_u64(member(obj, "format_version", path),
                                          join(path, "format_version"));
    if (version != 1)
        throw UnsupportedVersion("unsupported format_version " + std::to_string(version));
}

inline json parse_document(const std::string& text) {
    json doc = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (doc.is_discarded()) throw SchemaError("invalid JSON", "(document)");
    return doc;
}

inline Matrix get_matrix(const json& v, const std::string& path) {
    const json& rows = get_array(v, path);
    if (rows.empty()) throw SchemaError("matrix has no rows", path);
    Matrix m;
    m.rows = rows.size();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::string row_path = index(path, r);
        const json& row = get_array(rows[r], row_path);
        if (r == 0) {
            m.cols = row.size();
            if (m.cols == 0) throw SchemaError("matrix row is empty", row_path);
            m.data.reserve(m.rows * m.cols);
        } else if (row.size() != m.cols) {
            throw SchemaError("ragged matrix row", row_path);
        }
        for (std::size_t c = 0; c < row.size(); ++c)
            m.data.push_back(get_double(row[c], index(row_path, c)));
    }
    return m;
}

inline std::vector<double> get_vector(const json& v, const std::string& path) {
    const json& arr = get_array(v, path);
    std::vector<double> out;
    out.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i)
        out.push_back(get_double(arr[i], index(path, i)));
    return out;
}

}  // namespace jsonio

namespace detail {

inline std::string json_escape(const std::string& s) {
    std::string out;
    out.reserve(s.size() + 2);
    for (unsigned char c : s) {
        switch (c) {
            case '"': out += "\\\""; break;
            case '\\': out += "\\\\"; break;
            case '\n': out += "\\n"; break;
            case '\r': out += "\\r"; break;
            case '\t': out += "\\t"; break;
            default:
                if (c < 0x20) {
                    char buf[8];
                    std::snprintf(buf, sizeof buf, "\\u%04x", c);
                    out += buf;
                } else {
                    out += static_cast<char>(c);
                }
        }
    }
    return out;
}

inline void emit_double(std::string& out, double v, const char* what) {
    if (!std::isfinite(v)) throw InvalidInput(std::string(what) + ": non-finite value");
    out += format_double17(v);
}

inline void emit_vector(std::string& out, const std::vector<double>& v, const char* what) {
    out += "[";
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        emit_double(out, v[i], what);
    }
    out += "]";
}

inline void emit_matrix(std::string& out, const Matrix& m, const char* what) {
    out += "[";
    for (std::size_t r = 0; r < m.rows; ++r) {
        if (r) out += ",";
        out += "[";
        for (std::size_t c = 0; c < m.cols; ++c) {
            if (c) out += ",";
            emit_double(out, m(r, c), what);
        }
        out += "]";
    }
    out += "]";
}

inline void write_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    out << content;
    if (!out) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// Columns of u must be orthonormal within tol; locus goes into the error.
inline void check_orthonormal(const Matrix& u, double tol, const std::string& path) {
    for (std::size_t a = 0; a < u.cols; ++a) {
        for (std::size_t b = a; b < u.cols; ++b) {
            double g = 0.0;
            for (std::size_t i = 0; i < u.rows; ++i) g += u(i, a) * u(i, b);
            const double want = (a == b) ? 1.0 : 0.0;
            if (std::abs(g - want) > tol)
                throw SchemaError("columns are not orthonormal", path);
        }
    }
}

inline void check_descending(const std::vector<double>& s, const std::string& path) {
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (!std::isfinite(s[i]) || s[i] < 0.0)
            throw SchemaError("singular values must be finite and nonnegative", path);
        if (i > 0 && s[i] > s[i - 1])
            throw SchemaError("singular values must be descending", path);
    }
}

}  // namespace detail

// ---- Model config ---------------------------------------------------------

inline std::string model_config_to_json(const ModelConfig& cfg) {
    validate(cfg);
    return canonical_config_json(cfg) + "\n";
}

inline void save_model_config(const ModelConfig& cfg, const std::string& path) {
    detail::write_file(path, model_config_to_json(cfg));
}

inline ModelConfig model_config_from_json(const std::string& text) {
    using namespace jsonio;
    const json doc = parse_document(text);
    ModelConfig cfg;
    cfg.n_layers = get_size(member(doc, "n_layers", ""), "n_layers");
    cfg.n_query_heads = get_size(member(doc, "n_query_heads", ""), "n_query_heads");
    cfg.n_kv_heads = get_size(member(doc, "n_kv_heads", ""), "n_kv_heads");
    cfg.d_model = get_size(member(doc, "d_model", ""), "d_model");
    cfg.d_k = get_size(member(doc, "d_k", ""), "d_k");
    cfg.max_seq = get_size(member(doc, "max_seq", ""), "max_seq");
    cfg.seed = get_u64(member(doc, "seed", ""), "seed");
    validate(cfg);
    return cfg;
}

inline ModelConfig load_model_config(const std::string& path) {
    return model_config_from_json(detail::read_file(path));
}

// ---- Projection bank ------------------------------------------------------

inline std::string bank_to_json(const ProjectionBank& bank) {
    std::string out = "{\"format_version\":1,\"fingerprint\":" + std::to_string(bank.fingerprint);
    out += ",\"gamma\":";
    detail::emit_double(out, bank.gamma, "bank gamma");
    out += ",\"entries\":[";
    for (std::size_t c = 0; c < bank.entries.size(); ++c) {
        const BankEntry& e = bank.entries[c];
        if (c) out += ",";
        out += "{\"layer\":" + std::to_string(c / bank.n_kv_heads);
        out += ",\"kv_head\":" + std::to_string(c % bank.n_kv_heads);
        out += ",\"k_pos\":" + std::to_string(e.k_pos);
        out += ",\"k_neg\":" + std::to_string(e.k_neg);
        out += ",\"head_distance\":";
        detail::emit_double(out, e.head_distance, "head_distance");
        out += ",\"U_pos\":";
        detail::emit_matrix(out, e.u_pos, "U_pos");
        out += ",\"S_pos\":";
        detail::emit_vector(out, e.s_pos, "S_pos");
        out += ",\"U_neg\":";
        detail::emit_matrix(out, e.u_neg, "U_neg");
        out += ",\"S_neg\":";
        detail::emit_vector(out, e.s_neg, "S_neg");
        out += "}";
    }
    out += "]}\n";
    return out;
}

inline void save_bank(const ProjectionBank& bank, const std::string& path) {
    detail::write_file(path, bank_to_json(bank));
}

inline ProjectionBank bank_from_json(const std::string& text) {
    using namespace jsonio;
    const json doc = parse_document(text);
    check_version(doc, "");
    ProjectionBank bank;
    bank.fingerprint = get_u64(member(doc, "fingerprint", ""), "fingerprint");
    bank.gamma = get_double(member(doc, "gamma", ""), "gamma");
    const json& entries = get_array(member(doc, "entries", ""), "entries");
    if (entries.empty()) throw SchemaError("bank has no entries", "entries");

    struct Parsed {
        std::size_t layer, kv_head;
        BankEntry entry;
    };
    std::vector<Parsed> parsed;
    std::size_t max_layer = 0, max_head = 0;
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const std::string p = index("entries", i);
        const json& e = entries[i];
        Parsed pe;
        pe.layer = get_size(member(e, "layer", p), join(p, "layer"));
        pe.kv_head = get_size(member(e, "kv_head", p), join(p, "kv_head"));
        pe.entry.k_pos = get_size(member(e, "k_pos", p), join(p, "k_pos"));
        pe.entry.k_neg = get_size(member(e, "k_neg", p), join(p, "k_neg"));
        pe.entry.head_distance = get_double(member(e, "head_distance", p), join(p, "head_distance"));
        pe.entry.u_pos = get_matrix(member(e, "U_pos", p), join(p, "U_pos"));
        pe.entry.s_pos = get_vector(member(e, "S_pos", p), join(p, "S_pos"));
        pe.entry.u_neg = get_matrix(member(e, "U_neg", p), join(p, "U_neg"));
        pe.entry.s_neg = get_vector(member(e, "S_neg", p), join(p, "S_neg"));

        const std::size_t d = pe.entry.u_pos.rows;
        if (pe.entry.u_pos.cols != d || pe.entry.u_neg.rows != d || pe.entry.u_neg.cols != d)
            throw SchemaError("U matrices must be square with matching size", p);
        if (pe.entry.s_pos.size() != d || pe.entry.s_neg.size() != d)
            throw SchemaError("S length must match U dimension", p);
        if (pe.entry.k_pos > d || pe.entry.k_neg > d)
            throw SchemaError("rank exceeds d_k", p);
        if (!(pe.entry.head_distance >= 0.0) || !std::isfinite(pe.entry.head_distance))
            throw SchemaError("head_distance must be finite and nonnegative", join(p, "head_distance"));
        detail::check_orthonormal(pe.entry.u_pos, 1e-8, join(p, "U_pos"));
        detail::check_orthonormal(pe.entry.u_neg, 1e-8, join(p, "U_neg"));
        detail::check_descending(pe.entry.s_pos, join(p, "S_pos"));
        detail::check_descending(pe.entry.s_neg, join(p, "S_neg"));
        if (bank.d_k == 0) bank.d_k = d;
        if (d != bank.d_k) throw SchemaError("inconsistent d_k across entries", p);
        max_layer = std::max(max_layer, pe.layer);
        max_head = std::max(max_head, pe.kv_head);
        parsed.push_back(std::move(pe));
    }
    bank.n_layers = max_layer + 1;
    bank.n_kv_heads = max_head + 1;
    bank.entries.assign(bank.n_layers * bank.n_kv_heads, BankEntry());
    std::vector<char> seen(bank.entries.size(), 0);
    for (auto& pe : parsed) {
        const std::size_t c = pe.layer * bank.n_kv_heads + pe.kv_head;
        if (seen[c]) throw SchemaError("duplicate (layer, kv_head) entry", "entries");
        seen[c] = 1;
        bank.entries[c] = std::move(pe.entry);
    }
    for (std::size_t c = 0; c < seen.size(); ++c)
        if (!seen[c])
            throw SchemaError("missing entry for layer " + std::to_string(c / bank.n_kv_heads) +
                                  ", kv_head " + std::to_string(c % bank.n_kv_heads),
                              "entries");
    return bank;
}

inline ProjectionBank load_bank(const std::string& path) {
    return bank_from_json(detail::read_file(path));
}

// ---- Expert bank ----------------------------------------------------------

inline std::string expert_bank_to_json(const ExpertBank& bank) {
    std::string out = "{\"format_version\":1,\"fingerprint\":" + std::to_string(bank.fingerprint);
    out += ",\"K\":" + std::to_string(bank.top_k);
    out += ",\"experts\":[";
    for (std::size_t m = 0; m < bank.experts.size(); ++m) {
        if (m) out += ",";
        const Expert& ex = bank.experts[m];
        out += "{\"name\":\"" + detail::json_escape(ex.name) + "\",\"entries\":[";
        for (std::size_t c = 0; c < ex.entries.size(); ++c) {
            if (c) out += ",";
            out += "{\"layer\":" + std::to_string(c / bank.n_kv_heads);
            out += ",\"kv_head\":" + std::to_string(c % bank.n_kv_heads);
            out += ",\"U\":";
            detail::emit_matrix(out, ex.entries[c].u, "expert U");
            out += ",\"S\":";
            detail::emit_vector(out, ex.entries[c].s, "expert S");
            out += "}";
        }
        out += "]}";
    }
    out += "]}\n";
    return out;
}

inline void save_expert_bank(const ExpertBank& bank, const std::string& path) {
    detail::write_file(path, expert_bank_to_json(bank));
}

inline ExpertBank expert_bank_from_json(const std::string& text) {
    using namespace jsonio;
    const json doc = parse_document(text);
    check_version(doc, "");
    ExpertBank bank;
    bank.fingerprint = get_u64(member(doc, "fingerprint", ""), "fingerprint");
    bank.top_k = get_size(member(doc, "K", ""), "K");
    if (bank.top_k == 0) throw SchemaError("K must be >= 1", "K");
    const json& experts = get_array(member(doc, "experts", ""), "experts");
    if (experts.empty()) throw SchemaError("no experts", "experts");

    for (std::size_t m = 0; m < experts.size(); ++m) {
        const std::string ep = index("experts", m);
        const json& je = experts[m];
        Expert ex;
        ex.name = get_string(member(je, "name", ep), join(ep, "name"));
        const json& entries = get_array(member(je, "entries", ep), join(ep, "entries"));
        if (entries.empty()) throw SchemaError("expert has no entries", join(ep, "entries"));

        struct Parsed {
            std::size_t layer, kv_head;
            ExpertEntry entry;
        };
        std::vector<Parsed> parsed;
        std::size_t max_layer = 0, max_head = 0;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            const std::string p = index(join(ep, "entries"), i);
            const json& e = entries[i];
            Parsed pe;
            pe.layer = get_size(member(e, "layer", p), join(p, "layer"));
            pe.kv_head = get_size(member(e, "kv_head", p), join(p, "kv_head"));
            pe.entry.u = get_matrix(member(e, "U", p), join(p, "U"));
            pe.entry.s = get_vector(member(e, "S", p), join(p, "S"));
            if (pe.entry.u.cols != bank.top_k)
                throw SchemaError("U must have K columns", join(p, "U"));
            if (pe.entry.s.size() != bank.top_k)
                throw SchemaError("S must have K values", join(p, "S"));
            detail::check_orthonormal(pe.entry.u, 1e-8, join(p, "U"));
            detail::check_descending(pe.entry.s, join(p, "S"));
            if (bank.d_k == 0) bank.d_k = pe.entry.u.rows;
            if (pe.entry.u.rows != bank.d_k)
                throw SchemaError("inconsistent d_k across entries", join(p, "U"));
            max_layer = std::max(max_layer, pe.layer);
            max_head = std::max(max_head, pe.kv_head);
            parsed.push_back(std::move(pe));
        }
        const std::size_t n_layers = max_layer + 1, n_heads = max_head + 1;
        if (bank.n_layers == 0) {
            bank.n_layers = n_layers;
            bank.n_kv_heads = n_heads;
        } else if (bank.n_layers != n_layers || bank.n_kv_heads != n_heads) {
            throw SchemaError("experts disagree on the (layer, kv_head) grid", ep);
        }
        ex.entries.assign(n_layers * n_heads, ExpertEntry());
        std::vector<char> seen(ex.entries.size(), 0);
        for (auto& pe : parsed) {
            const std::size_t c = pe.layer * n_heads + pe.kv_head;
            if (seen[c]) throw SchemaError("duplicate (layer, kv_head) entry", join(ep, "entries"));
            seen[c] = 1;
            ex.entries[c] = std::move(pe.entry);
        }
        for (std::size_t c = 0; c < seen.size(); ++c)
            if (!seen[c]) throw SchemaError("missing entry", join(ep, "entries"));
        for (const Expert& prev : bank.experts)
            if (prev.name == ex.name)
                throw SchemaError("duplicate expert name: " + ex.name, join(ep, "name"));
        bank.experts.push_back(std::move(ex));
    }
    if (bank.top_k > bank.d_k) throw SchemaError("K exceeds d_k", "K");
    return bank;
}

inline ExpertBank load_expert_bank(const std::string& path) {
    return expert_bank_from_json(detail::read_file(path));
}

// ---- Samples --------------------------------------------------------------

inline std::string samples_to_json(const std::vector<ContrastiveSample>& samples) {
    std::string out = "{\"samples\":[";
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const ContrastiveSample& s = samples[i];
        if (s.context1.find(s.answer1) == std::string::npos ||
            s.context2.find(s.answer2) == std::string::npos)
            throw InvalidSample("samples[" + std::to_string(i) +
                                "]: answer is not a substring of its context");
        if (i) out += ",";
        out += "{\"context1\":\"" + detail::json_escape(s.context1) + "\"";
        out += ",\"context2\":\"" + detail::json_escape(s.context2) + "\"";
        out += ",\"question1\":\"" + detail::json_escape(s.question1) + "\"";
        out += ",\"answer1\":\"" + detail::json_escape(s.answer1) + "\"";
        out += ",\"question2\":\"" + detail::json_escape(s.question2) + "\"";
        out += ",\"answer2\":\"" + detail::json_escape(s.answer2) + "\"";
        out += "}";
    }
    out += "]}\n";
    return out;
}

inline void save_samples(const std::vector<ContrastiveSample>& samples, const std::string& path) {
    detail::write_file(path, samples_to_json(samples));
}

inline std::vector<ContrastiveSample> samples_from_json(const std::string& text) {
    using namespace jsonio;
    const json doc = parse_document(text);
    if (doc.contains("format_version")) check_version(doc, "");
    const json& arr = get_array(member(doc, "samples", ""), "samples");
    std::vector<ContrastiveSample> out;
    out.reserve(arr.size());
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = index("samples", i);
        const json& s = arr[i];
        ContrastiveSample cs;
        cs.context1 = get_string(member(s, "context1", p), join(p, "context1"));
        cs.context2 = get_string(member(s, "context2", p), join(p, "context2"));
        cs.question1 = get_string(member(s, "question1", p), join(p, "question1"));
        cs.answer1 = get_string(member(s, "answer1", p), join(p, "answer1"));
        cs.question2 = get_string(member(s, "question2", p), join(p, "question2"));
        cs.answer2 = get_string(member(s, "answer2", p), join(p, "answer2"));
        if (cs.context1.find(cs.answer1) == std::string::npos)
            throw InvalidSample(p + ": answer1 is not a substring of context1");
        if (cs.context2.find(cs.answer2) == std::string::npos)
            throw InvalidSample(p + ": answer2 is not a substring of context2");
        out.push_back(std::move(cs));
    }
    return out;
}

inline std::vector<ContrastiveSample> load_samples(const std::string& path) {
    return samples_from_json(detail::read_file(path));
}

// ---- Head selection -------------------------------------------------------

inline std::string selection_to_json(const HeadSelection& sel) {
    std::string out = "{\"format_version\":1,\"fingerprint\":" + std::to_string(sel.fingerprint);
    out += ",\"delta_min\":";
    detail::emit_double(out, sel.delta_min, "delta_min");
    out += ",\"selected\":[";
    for (std::size_t i = 0; i < sel.selected.size(); ++i) {
        if (i) out += ",";
        out += "{\"layer\":" + std::to_string(sel.selected[i].first);
        out += ",\"kv_head\":" + std::to_string(sel.selected[i].second) + "}";
    }
    out += "]}\n";
    return out;
}

inline void save_selection(const HeadSelection& sel, const std::string& path) {
    detail::write_file(path, selection_to_json(sel));
}

inline HeadSelection selection_from_json(const std::string& text) {
    using namespace jsonio;
    const json doc = parse_document(text);
    check_version(doc, "");
    HeadSelection sel;
    sel.fingerprint = get_u64(member(doc, "fingerprint", ""), "fingerprint");
    sel.delta_min = get_double(member(doc, "delta_min", ""), "delta_min");
    const json& arr = get_array(member(doc, "selected", ""), "selected");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = index("selected", i);
        sel.selected.emplace_back(get_size(member(arr[i], "layer", p), join(p, "layer")),
                                  get_size(member(arr[i], "kv_head", p), join(p, "kv_head")));
    }
    return sel;
}

inline HeadSelection load_selection(const std::string& path) {
    return selection_from_json(detail::read_file(path));
}

// ---- Expert dataset -------------------------------------------------------

inline std::string expert_dataset_to_json(const ExpertDataset& ds) {
    std::string out = "{\"format_version\":1,\"name\":\"" + detail::json_escape(ds.name) + "\"";
    out += ",\"pairs\":[";
    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        if (i) out += ",";
        const ExpertPair& p = ds.pairs[i];
        out += "{\"neutral_prompt\":\"" + detail::json_escape(p.neutral_prompt) + "\"";
        out += ",\"positive_prompt\":\"" + detail::json_escape(p.positive_prompt) + "\"";
        out += ",\"span_texts\":[";
        for (std::size_t j = 0; j < p.span_texts.size(); ++j) {
            if (j) out += ",";
            out += "\"" + detail::json_escape(p.span_texts[j]) + "\"";
        }
        out += "]}";
    }
    out += "]}\n";
    return out;
}

inline void save_expert_dataset(const ExpertDataset& ds, const std::string& path) {
    detail::write_file(path, expert_dataset_to_json(ds));
}

inline ExpertDataset expert_dataset_from_json(const std::string& text) {
    using namespace jsonio;
    const json doc = parse_document(text);
    check_version(doc, "");
    ExpertDataset ds;
    ds.name = get_string(member(doc, "name", ""), "name");
    const json& arr = get_array(member(doc, "pairs", ""), "pairs");
    if (arr.empty()) throw SchemaError("no pairs", "pairs");
    for (std::size_t i = 0; i < arr.size(); ++i) {
        const std::string p = index("pairs", i);
        ExpertPair pair;
        pair.neutral_prompt =
            get_string(member(arr[i], "neutral_prompt", p), join(p, "neutral_prompt"));
        pair.positive_prompt =
            get_string(member(arr[i], "positive_prompt", p), join(p, "positive_prompt"));
        const std::string sp = join(p, "span_texts");
        const json& spans = get_array(member(arr[i], "span_texts", p), sp);
        if (spans.empty()) throw SchemaError("span_texts is empty", sp);
        for (std::size_t j = 0; j < spans.size(); ++j)
            pair.span_texts.push_back(get_string(spans[j], index(sp, j)));
        ds.pairs.push_back(std::move(pair));
    }
    return ds;
}

inline ExpertDataset load_expert_dataset(const std::string& path) {
    return expert_dataset_from_json(detail::read_file(path));
}

}  // namespace seka

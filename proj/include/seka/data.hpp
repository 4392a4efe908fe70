#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "seka/model.hpp"

namespace seka {

/// Two contexts, each with a question whose answer is a contiguous substring
/// of its own context.
struct ContrastiveSample {
    std::string context1;
    std::string context2;
    std::string question1;
    std::string answer1;
    std::string question2;
    std::string answer2;
};

/// Prompt variants share one context; they differ only in the question line
/// (matching, mismatched, or absent). Layout is always the question line
/// first, then the context line.
struct PromptTriplet {
    std::string neutral_prompt;
    std::string positive_prompt;
    std::string negative_prompt;
    std::string span_text;
};

struct HighlightedPrompt {
    std::string clean_text;
    std::vector<std::size_t> highlight_spans;  // token indices, sorted
};

struct ExpertPair {
    std::string neutral_prompt;
    std::string positive_prompt;
    std::vector<std::string> span_texts;
};

struct ExpertDataset {
    std::string name;
    std::vector<ExpertPair> pairs;
};

/// Strips balanced ** markers and reports which tokens of the cleaned text
/// they covered. A token counts as highlighted if its character range
/// overlaps a marked region.
inline HighlightedPrompt parse_highlights(const std::string& text) {
    HighlightedPrompt out;
    std::vector<std::pair<std::size_t, std::size_t>> regions;  // clean-text char ranges
    bool open = false;
    std::size_t region_begin = 0;
    std::size_t last_marker_offset = 0;
    for (std::size_t i = 0; i < text.size();) {
        if (i + 1 < text.size() && text[i] == '*' && text[i + 1] == '*') {
            last_marker_offset = i;
            if (open) {
                regions.emplace_back(region_begin, out.clean_text.size());
            } else {
                region_begin = out.clean_text.size();
            }
            open = !open;
            i += 2;
        } else {
            out.clean_text.push_back(text[i]);
            ++i;
        }
    }
    if (open) throw ParseError("parse_highlights: unbalanced ** marker", last_marker_offset);

    const TokenSequence seq = tokenize(out.clean_text);
    std::set<std::size_t> spans;
    for (std::size_t t = 0; t < seq.texts.size(); ++t) {
        const auto [tb, te] = seq.offsets[t];
        for (const auto& [rb, re] : regions)
            if (tb < re && rb < te) spans.insert(t);
    }
    out.highlight_spans.assign(spans.begin(), spans.end());
    if (!regions.empty() && out.highlight_spans.empty())
        warn("parse_highlights: markers cover no tokens");
    return out;
}

namespace detail {

/// Token index where the context region begins: just past the leftmost
/// "context"+":" token pair, or 0 when the prompt has no such marker.
inline std::size_t context_region_start(const TokenSequence& seq) {
    for (std::size_t i = 0; i + 1 < seq.texts.size(); ++i)
        if (seq.texts[i] == "context" && seq.texts[i + 1] == ":") return i + 2;
    return 0;
}

}  // namespace detail

/// Leftmost occurrence of span_text's token sequence within the context
/// region of seq. Throws InvalidInput when the span does not resolve.
inline TokenSpan resolve_span(const TokenSequence& seq, const std::string& span_text) {
    const TokenSequence span = tokenize(span_text);
    const std::size_t start = detail::context_region_start(seq);
    const std::size_t len = span.texts.size();
    std::size_t found = seq.texts.size();
    std::size_t matches = 0;
    for (std::size_t p = start; p + len <= seq.texts.size(); ++p) {
        bool hit = true;
        for (std::size_t j = 0; j < len && hit; ++j)
            hit = (seq.texts[p + j] == span.texts[j]);
        if (hit) {
            if (matches == 0) found = p;
            ++matches;
        }
    }
    if (matches == 0)
        throw InvalidInput("resolve_span: span text not found in context region: " + span_text);
    if (matches > 1) warn("resolve_span: multiple matches for \"" + span_text + "\", using leftmost");
    return TokenSpan{found, found + len};
}

/// Expands one sample into its two supervision triplets. Triplet 1 keeps
/// context 1 and contrasts question 1 (positive) against question 2
/// (negative); triplet 2 is symmetric.
inline std::pair<PromptTriplet, PromptTriplet> expand_triplets(const ContrastiveSample& s) {
    if (s.context1.find(s.answer1) == std::string::npos)
        throw InvalidSample("expand_triplets: answer1 is not a substring of context1");
    if (s.context2.find(s.answer2) == std::string::npos)
        throw InvalidSample("expand_triplets: answer2 is not a substring of context2");
    if (s.question1 == s.question2)
        warn("expand_triplets: identical questions make positive and negative prompts equal");

    auto make = [](const std::string& ctx, const std::string& pos_q, const std::string& neg_q,
                   const std::string& answer) {
        PromptTriplet t;
        t.neutral_prompt = "Context: " + ctx;
        t.positive_prompt = "Question: " + pos_q + "\nContext: " + ctx;
        t.negative_prompt = "Question: " + neg_q + "\nContext: " + ctx;
        t.span_text = answer;
        return t;
    };
    return {make(s.context1, s.question1, s.question2, s.answer1),
            make(s.context2, s.question2, s.question1, s.answer2)};
}

namespace detail {

struct VerbForms {
    const char* third;
    const char* base;
};

inline const std::array<const char*, 44>& agent_bank() {
    static const std::array<const char*, 44> bank = {
        "archivist",  "beekeeper",  "cartographer", "glassblower", "innkeeper",
        "locksmith",  "surveyor",   "apothecary",   "blacksmith",  "chandler",
        "cooper",     "falconer",   "harbormaster", "jeweler",     "miller",
        "netmaker",   "orchardist", "printer",      "quarryman",   "ropemaker",
        "saddler",    "tanner",     "weaver",       "wheelwright", "vintner",
        "stonemason", "shepherd",   "brewer",       "potter",      "clockmaker",
        "engraver",   "furrier",    "gilder",       "hatter",      "illustrator",
        "joiner",     "lapidary",   "mason",        "navigator",   "optician",
        "plumber",    "roofer",     "tailor",       "tinsmith"};
    return bank;
}

inline const std::array<VerbForms, 44>& verb_bank() {
    static const std::array<VerbForms, 44> bank = {{
        {"catalogues", "catalogue"}, {"restores", "restore"},   {"inspects", "inspect"},
        {"assembles", "assemble"},   {"polishes", "polish"},    {"measures", "measure"},
        {"repairs", "repair"},       {"arranges", "arrange"},   {"delivers", "deliver"},
        {"examines", "examine"},     {"prepares", "prepare"},   {"collects", "collect"},
        {"organizes", "organize"},   {"sharpens", "sharpen"},   {"paints", "paint"},
        {"stores", "store"},         {"labels", "label"},       {"binds", "bind"},
        {"weighs", "weigh"},         {"sorts", "sort"},         {"packs", "pack"},
        {"cleans", "clean"},         {"counts", "count"},       {"displays", "display"},
        {"grades", "grade"},         {"mixes", "mix"},          {"mounts", "mount"},
        {"records", "record"},       {"seals", "seal"},         {"ships", "ship"},
        {"stacks", "stack"},         {"tests", "test"},         {"trims", "trim"},
        {"tunes", "tune"},           {"varnishes", "varnish"},  {"wraps", "wrap"},
        {"curates", "curate"},       {"brushes", "brush"},      {"carves", "carve"},
        {"dries", "dry"},            {"etches", "etch"},        {"filters", "filter"},
        {"hones", "hone"},           {"irons", "iron"},
    }};
    return bank;
}

inline const std::array<const char*, 44>& object_bank() {
    static const std::array<const char*, 44> bank = {
        "copper kettles",  "velvet ribbons",  "cedar planks",   "porcelain bowls",
        "brass hinges",    "woolen blankets", "silver spoons",  "oak barrels",
        "glass beads",     "linen sheets",    "marble tiles",   "ivory combs",
        "pewter mugs",     "leather satchels", "bronze bells",  "quartz crystals",
        "walnut frames",   "ceramic vases",   "iron nails",     "silk banners",
        "amber pendants",  "bamboo flutes",   "birch canoes",   "canvas tents",
        "clay pipes",      "cotton sails",    "felt hats",      "granite slabs",
        "hemp ropes",      "jade figurines",  "maple desks",    "nickel coins",
        "obsidian blades", "paper lanterns",  "reed baskets",   "sandstone arches",
        "teak benches",    "tin whistles",    "wicker chairs",  "zinc plates",
        "crystal goblets", "damask curtains", "ebony chessmen", "flannel coats"};
    return bank;
}

inline const std::array<const char*, 44>& setting_bank() {
    static const std::array<const char*, 44> bank = {
        "for the spring auction",    "inside the northern annex", "before the morning market",
        "behind the old granary",    "near the harbor gate",      "under the slate roof",
        "within the walled garden",  "beside the mill pond",      "along the river quay",
        "above the cellar stairs",   "at the county fair",        "during the winter festival",
        "for the museum exhibit",    "inside the guild hall",     "near the lighthouse path",
        "under the woven awning",    "behind the ticket booth",   "within the storage loft",
        "beside the kiln shed",      "along the orchard fence",   "above the workshop bench",
        "at the village square",     "during the harvest sale",   "for the royal commission",
        "inside the customs house",  "near the ferry landing",    "under the stone bridge",
        "behind the market stalls",  "within the barrel yard",    "beside the tram depot",
        "along the towpath",         "above the print room",      "at the auction hall",
        "during the trade fair",     "for the garrison stores",   "inside the boat shed",
        "near the postal depot",     "under the arched gateway",  "behind the chapel wall",
        "within the botanical court", "beside the signal tower",  "along the cliff road",
        "above the counting room",   "at the freight yard"};
    return bank;
}

struct SlotDraw {
    std::size_t agent, verb, object, setting;
    bool operator==(const SlotDraw& o) const {
        return agent == o.agent && verb == o.verb && object == o.object && setting == o.setting;
    }
};

inline SlotDraw draw_slots(SplitMix64& rng) {
    SlotDraw d;
    d.agent = rng.next() % agent_bank().size();
    d.verb = rng.next() % verb_bank().size();
    d.object = rng.next() % object_bank().size();
    d.setting = rng.next() % setting_bank().size();
    return d;
}

inline std::string slot_context(const SlotDraw& d) {
    std::string s = "The ";
    s += agent_bank()[d.agent];
    s += " ";
    s += verb_bank()[d.verb].third;
    s += " ";
    s += object_bank()[d.object];
    s += " ";
    s += setting_bank()[d.setting];
    s += ".";
    return s;
}

inline std::string slot_question(const SlotDraw& d) {
    std::string s = "What does the ";
    s += agent_bank()[d.agent];
    s += " ";
    s += verb_bank()[d.verb].base;
    s += "?";
    return s;
}

}  // namespace detail

/// Fills slot templates from seeded draws. No two emitted samples share a
/// (context1, context2) pair, and every answer is the object phrase of its
/// context, so the substring invariant holds by construction.
inline std::vector<ContrastiveSample> generate_synthetic(std::size_t n, std::uint64_t seed) {
    if (n < 1) throw InvalidInput("generate_synthetic: n must be >= 1");
    const std::uint64_t single =
        static_cast<std::uint64_t>(detail::agent_bank().size()) * detail::verb_bank().size() *
        detail::object_bank().size() * detail::setting_bank().size();
    const std::uint64_t capacity = single * (single - 1);
    if (n > capacity) throw CapacityError("generate_synthetic: n exceeds unique pair capacity");

    SplitMix64 rng(seed);
    std::set<std::pair<std::string, std::string>> seen;
    std::vector<ContrastiveSample> out;
    out.reserve(n);
    std::size_t stale_attempts = 0;
    while (out.size() < n) {
        if (++stale_attempts > 10000)
            throw CapacityError("generate_synthetic: could not find a fresh sample");
        const detail::SlotDraw d1 = detail::draw_slots(rng);
        const detail::SlotDraw d2 = detail::draw_slots(rng);
        if (d1 == d2) continue;
        ContrastiveSample s;
        s.context1 = detail::slot_context(d1);
        s.context2 = detail::slot_context(d2);
        if (!seen.emplace(s.context1, s.context2).second) continue;
        s.question1 = detail::slot_question(d1);
        s.question2 = detail::slot_question(d2);
        s.answer1 = detail::object_bank()[d1.object];
        s.answer2 = detail::object_bank()[d2.object];
        out.push_back(std::move(s));
        stale_attempts = 0;
    }
    return out;
}

inline std::vector<PromptTriplet> triplets_from_samples(const std::vector<ContrastiveSample>& samples) {
    std::vector<PromptTriplet> out;
    out.reserve(samples.size() * 2);
    for (const auto& s : samples) {
        auto [t1, t2] = expand_triplets(s);
        out.push_back(std::move(t1));
        out.push_back(std::move(t2));
    }
    return out;
}

/// Positive sides of the expanded triplets, as expert learning pairs.
inline ExpertDataset expert_dataset_from_samples(const std::vector<ContrastiveSample>& samples,
                                                 std::string name) {
    ExpertDataset ds;
    ds.name = std::move(name);
    for (const auto& s : samples) {
        auto [t1, t2] = expand_triplets(s);
        ds.pairs.push_back({t1.neutral_prompt, t1.positive_prompt, {t1.span_text}});
        ds.pairs.push_back({t2.neutral_prompt, t2.positive_prompt, {t2.span_text}});
    }
    return ds;
}

}  // namespace seka

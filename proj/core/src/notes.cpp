#include "icumort/notes.hpp"
#include "icumort/defaults.hpp"
#include "icumort/errors.hpp"
#include "icumort/rng.hpp"

#include <fmt/core.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>

namespace icumort::notes {

namespace {

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

std::vector<std::string> whitespace_tokens(const std::string& text) {
    std::vector<std::string> tokens;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && is_space(text[i])) ++i;
        std::size_t j = i;
        while (j < text.size() && !is_space(text[j])) ++j;
        if (j > i) tokens.emplace_back(text.substr(i, j - i));
        i = j;
    }
    return tokens;
}

const char* kPunct = ".,;:!?()[]{}<>\"'`~@#$%^&*-_=+|\\/";

bool is_punct(char c) { return std::strchr(kPunct, c) != nullptr; }

} // namespace

NotesConfig NotesConfig::from_json(const json& doc, const std::string& origin) {
    NotesConfig c;
    for (const auto& h : doc.at("section_headings")) c.section_headings.push_back(h.get<std::string>());
    for (const auto& t : doc.at("terminators")) c.terminators.push_back(t.get<std::string>());
    for (const auto& a : doc.value("protected_abbreviations", json::array())) {
        const std::string abbr = a.get<std::string>();
        if (abbr.size() < 3) {
            throw config_error(
                fmt::format("{}: abbreviation '{}' is shorter than three characters", origin, abbr));
        }
        c.protected_abbreviations.push_back(lower(abbr));
    }
    c.min_sentence_words = doc.value("min_sentence_words", 10);
    c.max_chunk_tokens = doc.value("max_chunk_tokens", 512);
    c.min_overflow_tokens = doc.value("min_overflow_tokens", 75);
    return c;
}

NotesConfig NotesConfig::defaults() {
    return from_json(parse_json_text(std::string(defaults::notes_config_json()), "notes_config"),
                     "notes_config");
}

std::string mask_phi(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text.compare(i, 3, "[**") == 0) {
            const std::size_t close = text.find("**]", i + 3);
            if (close != std::string::npos) {
                out.push_back(' ');
                i = close + 3;
                continue;
            }
        }
        out.push_back(text[i]);
        ++i;
    }
    return out;
}

std::string truncate_terminators(const std::string& text, const NotesConfig& cfg) {
    const std::string hay = lower(text);
    std::size_t cut = std::string::npos;
    for (const auto& term : cfg.terminators) {
        const std::size_t pos = hay.find(lower(term));
        if (pos != std::string::npos) cut = std::min(cut, pos);
    }
    return cut == std::string::npos ? text : text.substr(0, cut);
}

std::string fold_accents(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            ++i;
            continue;
        }
        // two-byte UTF-8 for the Latin-1 supplement
        if ((c == 0xC3) && i + 1 < text.size()) {
            const unsigned char d = static_cast<unsigned char>(text[i + 1]);
            const unsigned int cp = 0xC0 + (d - 0x80);
            static const struct {
                unsigned int lo, hi;
                char ascii;
            } kFold[] = {
                {0xC0, 0xC5, 'A'}, {0xC8, 0xCB, 'E'}, {0xCC, 0xCF, 'I'}, {0xD2, 0xD6, 'O'},
                {0xD9, 0xDC, 'U'}, {0xC7, 0xC7, 'C'}, {0xD1, 0xD1, 'N'}, {0xDD, 0xDD, 'Y'},
                {0xE0, 0xE5, 'a'}, {0xE8, 0xEB, 'e'}, {0xEC, 0xEF, 'i'}, {0xF2, 0xF6, 'o'},
                {0xF9, 0xFC, 'u'}, {0xE7, 0xE7, 'c'}, {0xF1, 0xF1, 'n'}, {0xFD, 0xFF, 'y'},
            };
            char folded = 0;
            for (const auto& f : kFold) {
                if (cp >= f.lo && cp <= f.hi) {
                    folded = f.ascii;
                    break;
                }
            }
            if (folded) out.push_back(folded);
            i += 2;
            continue;
        }
        // other non-ascii bytes are dropped
        ++i;
    }
    return out;
}

std::string strip_punctuation(const std::string& text, const NotesConfig& cfg) {
    std::string out;
    out.reserve(text.size());
    for (const auto& word : whitespace_tokens(text)) {
        if (!out.empty()) out.push_back(' ');
        const std::string lw = lower(word);
        bool is_protected = false;
        for (const auto& abbr : cfg.protected_abbreviations) {
            if (lw == abbr) {
                is_protected = true;
                break;
            }
        }
        if (is_protected) {
            out += word;
            continue;
        }
        for (char c : word) {
            if (is_punct(c)) {
                out.push_back(' ');
            } else {
                out.push_back(c);
            }
        }
    }
    return out;
}

std::string condense_whitespace(const std::string& text) {
    std::string out;
    out.reserve(text.size());
    bool pending_space = false;
    for (char c : text) {
        if (is_space(c)) {
            pending_space = !out.empty();
            continue;
        }
        if (pending_space) {
            out.push_back(' ');
            pending_space = false;
        }
        out.push_back(c);
    }
    return out;
}

std::string clean_note(const std::string& text, const NotesConfig& cfg) {
    return condense_whitespace(
        strip_punctuation(fold_accents(truncate_terminators(mask_phi(text), cfg)), cfg));
}

std::vector<Section> extract_sections(const std::string& text, const NotesConfig& cfg) {
    struct Match {
        std::size_t pos;
        std::size_t end;
        std::string heading;
    };
    std::vector<Match> matches;
    for (const auto& heading : cfg.section_headings) {
        std::size_t from = 0;
        while (true) {
            const std::size_t pos = text.find(heading, from);
            if (pos == std::string::npos) break;
            const bool word_start = pos == 0 || !std::isalnum(static_cast<unsigned char>(text[pos - 1]));
            std::size_t end = pos + heading.size();
            const bool word_end = end >= text.size() || !std::isalnum(static_cast<unsigned char>(text[end]));
            if (word_start && word_end) {
                if (end < text.size() && text[end] == ':') ++end;
                matches.push_back({pos, end, heading});
            }
            from = pos + heading.size();
        }
    }
    if (matches.empty()) {
        return {{std::string{}, text}};
    }
    std::sort(matches.begin(), matches.end(),
              [](const Match& a, const Match& b) { return a.pos < b.pos; });

    std::vector<Section> sections;
    for (std::size_t k = 0; k < matches.size(); ++k) {
        const std::size_t body_start = matches[k].end;
        const std::size_t body_end = k + 1 < matches.size() ? matches[k + 1].pos : text.size();
        std::string body = text.substr(body_start, body_end - body_start);
        const bool only_ws =
            std::all_of(body.begin(), body.end(), [](char c) { return is_space(c); });
        if (only_ws) continue; // whitespace-only body carries no content
        sections.push_back({matches[k].heading, std::move(body)});
    }
    return sections;
}

std::string filter_sentences(const std::string& text, int min_words) {
    std::vector<std::pair<std::size_t, std::size_t>> sentences; // [start, end)
    std::size_t start = 0;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        if (c == '.' || c == '!' || c == '?') {
            std::size_t j = i;
            while (j + 1 < text.size() &&
                   (text[j + 1] == '.' || text[j + 1] == '!' || text[j + 1] == '?')) {
                ++j;
            }
            if (j + 1 >= text.size() || is_space(text[j + 1])) {
                sentences.emplace_back(start, j + 1);
                start = j + 1;
                i = j + 1;
                continue;
            }
            i = j + 1;
            continue;
        }
        ++i;
    }
    if (start < text.size()) sentences.emplace_back(start, text.size());

    std::string out;
    for (const auto& [s, e] : sentences) {
        const std::string sentence = text.substr(s, e - s);
        if (static_cast<int>(whitespace_tokens(sentence).size()) < min_words) continue;
        if (!out.empty()) out.push_back(' ');
        std::size_t b = 0;
        while (b < sentence.size() && is_space(sentence[b])) ++b;
        out += sentence.substr(b);
    }
    return out;
}

std::vector<NoteChunk> chunk_tokens(const std::string& cleaned_text, const NotesConfig& cfg) {
    const std::vector<std::string> tokens = whitespace_tokens(cleaned_text);
    std::vector<NoteChunk> chunks;
    std::size_t i = 0;
    int index = 0;
    while (i < tokens.size()) {
        const std::size_t take =
            std::min<std::size_t>(tokens.size() - i, static_cast<std::size_t>(cfg.max_chunk_tokens));
        NoteChunk c;
        c.chunk_index = index;
        c.tokens.assign(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                        tokens.begin() + static_cast<std::ptrdiff_t>(i + take));
        const bool overflow_chunk = index > 0;
        if (!(overflow_chunk && take < static_cast<std::size_t>(cfg.min_overflow_tokens))) {
            chunks.push_back(std::move(c));
        }
        i += take;
        ++index;
    }
    return chunks;
}

std::vector<NoteChunk> process_note(const std::string& raw_text, const NotesConfig& cfg) {
    const std::string masked = fold_accents(truncate_terminators(mask_phi(raw_text), cfg));
    const auto sections = extract_sections(masked, cfg);
    std::string body;
    for (const auto& sec : sections) {
        const std::string kept = filter_sentences(sec.body, cfg.min_sentence_words);
        if (kept.empty()) continue;
        if (!body.empty()) body.push_back(' ');
        body += kept;
    }
    const std::string cleaned = condense_whitespace(strip_punctuation(body, cfg));
    return chunk_tokens(cleaned, cfg);
}

std::pair<std::vector<double>, bool> note_bag_features(const std::vector<NoteChunk>& chunks,
                                                       std::size_t dim) {
    if (dim < 64) throw usage_error("note_bag_features: dim must be at least 64");
    std::vector<double> vec(dim, 0.0);
    bool any = false;
    for (const auto& chunk : chunks) {
        for (const auto& token : chunk.tokens) {
            vec[fnv1a64(token) % dim] += 1.0;
            any = true;
        }
    }
    if (any) {
        double norm = 0.0;
        for (double v : vec) norm += v * v;
        norm = std::sqrt(norm);
        for (double& v : vec) v /= norm;
    }
    return {std::move(vec), any};
}

} // namespace icumort::notes

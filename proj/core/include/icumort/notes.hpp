#pragma once

#include "icumort/jsonio.hpp"

#include <string>
#include <vector>

namespace icumort::notes {

struct NotesConfig {
    std::vector<std::string> section_headings;
    std::vector<std::string> terminators;
    std::vector<std::string> protected_abbreviations;
    int min_sentence_words = 10;
    int max_chunk_tokens = 512;
    int min_overflow_tokens = 75;

    static NotesConfig from_json(const json& doc, const std::string& origin);
    static NotesConfig defaults();
};

// Individual pipeline steps; clean_note composes the text-normalization ones.
std::string mask_phi(const std::string& text);                       // [** ... **] -> space
std::string truncate_terminators(const std::string& text, const NotesConfig& cfg);
std::string fold_accents(const std::string& text);                   // utf-8 latin -> ascii
std::string strip_punctuation(const std::string& text, const NotesConfig& cfg);
std::string condense_whitespace(const std::string& text);

// mask -> truncate -> fold -> strip punctuation (protected abbreviations keep
// their periods) -> condense whitespace. Idempotent.
std::string clean_note(const std::string& text, const NotesConfig& cfg);

struct Section {
    std::string heading; // empty for the unnamed whole-text section
    std::string body;
};

// Heading matches own the span up to the next heading; whitespace-only bodies
// are dropped. No headings at all -> one unnamed section with the whole text.
std::vector<Section> extract_sections(const std::string& text, const NotesConfig& cfg);

// Sentences with fewer than min_words whitespace tokens are removed. Runs on
// text that still has its sentence punctuation.
std::string filter_sentences(const std::string& text, int min_words);

struct NoteChunk {
    std::string stay_id;
    int note_index = 0;
    int chunk_index = 0;
    std::vector<std::string> tokens;
};

// Contiguous chunks of at most max_chunk_tokens whitespace tokens; trailing
// overflow chunks under min_overflow_tokens are dropped (the first chunk is
// exempt).
std::vector<NoteChunk> chunk_tokens(const std::string& cleaned_text, const NotesConfig& cfg);

// Full per-note pipeline: PHI, terminators, accents, sections, sentence
// filter, punctuation, chunking.
std::vector<NoteChunk> process_note(const std::string& raw_text, const NotesConfig& cfg);

// Hashed bag-of-tokens: 64-bit FNV-1a modulo dim, L2-normalized. Stands in
// for the out-of-scope pretrained text encoder so the fusion pathway has a
// working notes block. Returns (vector, any_tokens).
std::pair<std::vector<double>, bool> note_bag_features(const std::vector<NoteChunk>& chunks,
                                                       std::size_t dim);

} // namespace icumort::notes

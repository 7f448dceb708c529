#include "icumort/errors.hpp"
#include "icumort/notes.hpp"
#include "icumort/rng.hpp"

#include <doctest.h>

#include <sstream>

using namespace icumort;
using namespace icumort::notes;

namespace {
const NotesConfig& cfg() {
    static const NotesConfig c = NotesConfig::defaults();
    return c;
}

std::string join_words(int n, const char* w = "word") {
    std::string out;
    for (int i = 0; i < n; ++i) {
        if (i) out.push_back(' ');
        out += w;
    }
    return out;
}
} // namespace

TEST_CASE("clean_note masks PHI, truncates terminators, strips punctuation") {
    SUBCASE("PHI spans are removed and punctuation dropped") {
        CHECK(clean_note("Seen by [**Name**] today.", cfg()) == "Seen by today");
    }
    SUBCASE("text after a terminator is removed") {
        CHECK(clean_note("Stable. Electronically signed by X", cfg()) == "Stable");
    }
    SUBCASE("accented characters fold to ascii") {
        CHECK(clean_note("caf\xc3\xa9 au lait", cfg()) == "cafe au lait");
    }
    SUBCASE("protected abbreviations keep their periods") {
        CHECK(clean_note("insulin b.i.d. given", cfg()) == "insulin b.i.d. given");
    }
    SUBCASE("idempotent") {
        const std::string noisy =
            "HISTORY: Pt [**Name**] stable, on b.i.d. dosing!  Multiple  spaces.\n"
            "Electronically signed by [**MD**]";
        const std::string once = clean_note(noisy, cfg());
        CHECK(clean_note(once, cfg()) == once);
    }
}

TEST_CASE("section extraction") {
    SUBCASE("two named sections") {
        const auto sections = extract_sections("FINDINGS: a. IMPRESSION: b.", cfg());
        REQUIRE(sections.size() == 2);
        CHECK(sections[0].heading == "FINDINGS");
        CHECK(sections[0].body == " a. ");
        CHECK(sections[1].heading == "IMPRESSION");
    }
    SUBCASE("whitespace-only bodies are dropped") {
        const auto sections = extract_sections("FINDINGS:    IMPRESSION: real text", cfg());
        REQUIRE(sections.size() == 1);
        CHECK(sections[0].heading == "IMPRESSION");
    }
    SUBCASE("no headings yields one unnamed section") {
        const auto sections = extract_sections("just a flat note", cfg());
        REQUIRE(sections.size() == 1);
        CHECK(sections[0].heading.empty());
        CHECK(sections[0].body == "just a flat note");
    }
}

TEST_CASE("sentence filtering removes sentences under ten words") {
    SUBCASE("a five-word sentence disappears") {
        CHECK(filter_sentences("This one is too short.", 10).empty());
    }
    SUBCASE("a ten-word sentence survives the boundary") {
        const std::string ten = join_words(10) + ".";
        CHECK_FALSE(filter_sentences(ten, 10).empty());
    }
    SUBCASE("a nine-word sentence does not") {
        const std::string nine = join_words(9) + ".";
        CHECK(filter_sentences(nine, 10).empty());
    }
    SUBCASE("empty text stays empty") {
        CHECK(filter_sentences("", 10).empty());
    }
    SUBCASE("mixed text keeps only the long sentence") {
        const std::string text = "Too short. " + join_words(12) + ". Again short!";
        const std::string kept = filter_sentences(text, 10);
        CHECK(kept.find(join_words(12)) != std::string::npos);
        CHECK(kept.find("short") == std::string::npos);
    }
}

TEST_CASE("token chunking follows the 512/75 rule") {
    SUBCASE("600 tokens become chunks of 512 and 88") {
        const auto chunks = chunk_tokens(join_words(600), cfg());
        REQUIRE(chunks.size() == 2);
        CHECK(chunks[0].tokens.size() == 512);
        CHECK(chunks[1].tokens.size() == 88);
    }
    SUBCASE("560 tokens: the 48-token overflow is dropped") {
        const auto chunks = chunk_tokens(join_words(560), cfg());
        REQUIRE(chunks.size() == 1);
        CHECK(chunks[0].tokens.size() == 512);
    }
    SUBCASE("100 tokens stay one chunk; the first chunk is exempt from the 75 rule") {
        const auto a = chunk_tokens(join_words(100), cfg());
        REQUIRE(a.size() == 1);
        CHECK(a[0].tokens.size() == 100);
        const auto b = chunk_tokens(join_words(10), cfg());
        REQUIRE(b.size() == 1);
        CHECK(b[0].tokens.size() == 10);
    }
    SUBCASE("chunk invariants and token conservation over random lengths") {
        Rng rng(6);
        for (int trial = 0; trial < 40; ++trial) {
            const int n = static_cast<int>(rng.index(1400));
            const std::string text = join_words(n);
            const auto chunks = chunk_tokens(text, cfg());
            std::size_t kept = 0;
            for (std::size_t k = 0; k < chunks.size(); ++k) {
                CHECK(chunks[k].tokens.size() <= 512);
                if (chunks[k].chunk_index > 0) CHECK(chunks[k].tokens.size() >= 75);
                kept += chunks[k].tokens.size();
            }
            // retained + dropped = total tokens of the cleaned text
            std::size_t dropped = 0;
            if (n > 0) {
                const std::size_t tail = static_cast<std::size_t>(n) % 512;
                if (n > 512 && tail > 0 && tail < 75) dropped = tail;
            }
            CHECK(kept + dropped == static_cast<std::size_t>(n));
        }
    }
    SUBCASE("the pipeline is deterministic byte for byte") {
        const std::string text = "HISTORY: " + join_words(700, "alpha") +
                                 ". IMPRESSION: " + join_words(80, "beta") + ".";
        const auto a = process_note(text, cfg());
        const auto b = process_note(text, cfg());
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a[i].tokens == b[i].tokens);
        }
    }
}

TEST_CASE("hashed note bag") {
    SUBCASE("empty chunk list: zero vector and absent flag") {
        const auto [vec, any] = note_bag_features({}, 128);
        CHECK_FALSE(any);
        for (double v : vec) CHECK(v == 0.0);
    }
    SUBCASE("identical notes give identical vectors") {
        NoteChunk c;
        c.tokens = {"alpha", "beta", "beta"};
        const auto a = note_bag_features({c}, 128);
        const auto b = note_bag_features({c}, 128);
        CHECK(a.first == b.first);
    }
    SUBCASE("doubling every count leaves the normalized vector unchanged") {
        NoteChunk c;
        c.tokens = {"alpha", "beta", "beta", "gamma"};
        NoteChunk doubled;
        for (int k = 0; k < 2; ++k) {
            for (const auto& t : c.tokens) doubled.tokens.push_back(t);
        }
        const auto a = note_bag_features({c}, 128);
        const auto b = note_bag_features({doubled}, 128);
        for (std::size_t i = 0; i < a.first.size(); ++i) {
            CHECK(a.first[i] == doctest::Approx(b.first[i]).epsilon(1e-12));
        }
    }
    SUBCASE("dimension below 64 is rejected") {
        CHECK_THROWS_AS(note_bag_features({}, 32), usage_error);
    }
}

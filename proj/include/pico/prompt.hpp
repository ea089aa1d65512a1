#pragma once

#include <filesystem>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace pico {

/// Lowercased word tokens of a prompt. Token positions are 1-based in the
/// attention convention: position 0 is the implicit SOT symbol and p+1 the
/// implicit EOT symbol.
struct TokenizedPrompt {
    std::string raw;
    std::vector<std::string> tokens;
    /// comma_after[i] is set when a comma separated tokens[i] from tokens[i+1].
    std::vector<bool> comma_after;

    std::size_t length() const noexcept { return tokens.size(); }
    /// Tokens joined with single spaces.
    std::string normalized() const;
    /// Token at 1-based position.
    const std::string& token(std::size_t position) const { return tokens.at(position - 1); }
};

/// Inclusive 1-based token range a..b.
struct TokenSpan {
    std::size_t first = 0;
    std::size_t last = 0;

    std::size_t size() const noexcept { return last - first + 1; }
    bool contains(std::size_t position) const noexcept { return position >= first && position <= last; }
    bool overlaps(const TokenSpan& o) const noexcept { return first <= o.last && o.first <= last; }

    friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

struct Concept {
    std::string text;
    std::vector<std::string> attributes;
    std::string noun;
    TokenSpan span;

    friend bool operator==(const Concept&, const Concept&) = default;
};

/// Words that may act as attributes (colours, shapes, textures, materials).
class AttributeLexicon {
public:
    AttributeLexicon() = default;
    explicit AttributeLexicon(std::set<std::string, std::less<>> words) : words_(std::move(words)) {}

    /// The lexicon shipped with the project.
    static const AttributeLexicon& builtin();
    /// One lowercase word per line; '#' starts a comment.
    static AttributeLexicon load(const std::filesystem::path& path);
    static AttributeLexicon parse(std::string_view text);

    bool contains(std::string_view word) const { return words_.find(word) != words_.end(); }
    void add(std::string word) { words_.insert(std::move(word)); }
    std::size_t size() const noexcept { return words_.size(); }

private:
    std::set<std::string, std::less<>> words_;
};

TokenizedPrompt tokenize(std::string_view text);

/// Parses  PROMPT := NP (("and" | ",") NP)* ;  NP := article? ADJ* NOUN
/// Spans cover ADJ* NOUN and exclude the article. Throws a parse error when
/// the prompt does not fit the grammar.
std::vector<Concept> extract_concepts(const TokenizedPrompt& tp, const AttributeLexicon& lexicon = AttributeLexicon::builtin());

} // namespace pico

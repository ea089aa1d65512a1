#include "pico/prompt.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "pico/error.hpp"

namespace pico {

namespace {

// Kept in sync with data/attributes.txt (checked by the prompt tests).
constexpr std::string_view builtin_lexicon_text = R"(# colours
red
green
blue
yellow
orange
purple
pink
brown
black
white
gray
grey
cyan
magenta
gold
silver
# shapes
round
square
rectangular
triangular
circular
oval
spherical
cubic
cylindrical
# textures
fluffy
furry
smooth
rough
fuzzy
glossy
shiny
metallic
# materials
wooden
plastic
leather
glass
metal
rubber
stone
ceramic
paper
fabric
)";

bool is_article(std::string_view w)
{
    return w == "a" || w == "an" || w == "the";
}

bool is_reserved(std::string_view w)
{
    return is_article(w) || w == "and";
}

} // namespace

std::string TokenizedPrompt::normalized() const
{
    std::string out;
    for (const auto& t : tokens) {
        if (!out.empty()) {
            out.push_back(' ');
        }
        out += t;
    }
    return out;
}

const AttributeLexicon& AttributeLexicon::builtin()
{
    static const AttributeLexicon lexicon = parse(builtin_lexicon_text);
    return lexicon;
}

AttributeLexicon AttributeLexicon::parse(std::string_view text)
{
    std::set<std::string, std::less<>> words;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.erase(hash);
        }
        std::istringstream fields(line);
        std::string word;
        if (!(fields >> word)) {
            continue;
        }
        std::transform(word.begin(), word.end(), word.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
        words.insert(std::move(word));
    }
    return AttributeLexicon(std::move(words));
}

AttributeLexicon AttributeLexicon::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorKind::config, "cannot read attribute lexicon " + path.string());
    }
    std::stringstream buffer;
    buffer << in.rdbuf();
    return parse(buffer.str());
}

TokenizedPrompt tokenize(std::string_view text)
{
    TokenizedPrompt tp;
    tp.raw = std::string(text);
    std::string current;
    auto flush = [&] {
        if (!current.empty()) {
            tp.tokens.push_back(std::move(current));
            tp.comma_after.push_back(false);
            current.clear();
        }
    };
    for (unsigned char c : text) {
        if (std::isalnum(c)) {
            current.push_back(static_cast<char>(std::tolower(c)));
            continue;
        }
        flush();
        if (c == ',' && !tp.tokens.empty()) {
            tp.comma_after.back() = true;
        }
    }
    flush();
    if (tp.tokens.empty()) {
        throw Error(ErrorKind::parse, "empty prompt");
    }
    tp.comma_after.back() = false;
    return tp;
}

std::vector<Concept> extract_concepts(const TokenizedPrompt& tp, const AttributeLexicon& lexicon)
{
    const auto& toks = tp.tokens;
    const std::size_t p = toks.size();
    std::vector<Concept> concepts;

    auto fail = [&](std::size_t index, const std::string& why) -> Error {
        std::string at = index < p ? "'" + toks[index] + "' at token " + std::to_string(index + 1) : "end of prompt";
        return Error(ErrorKind::parse, "prompt does not fit the concept grammar (" + why + ", " + at + ")");
    };

    std::size_t i = 0;
    while (true) {
        if (i < p && is_article(toks[i])) {
            ++i;
        }
        const std::size_t start = i;
        // ADJ* is greedy but stops at a phrase boundary; if it swallows the
        // noun position (e.g. "a blue orange") the last attribute becomes
        // the noun.
        while (i < p && lexicon.contains(toks[i]) && !(i > start && tp.comma_after[i - 1])) {
            ++i;
        }
        std::size_t noun = i;
        const bool at_boundary = i >= p || is_reserved(toks[i]) || (i > start && tp.comma_after[i - 1]);
        if (at_boundary) {
            if (i == start) {
                throw fail(i, concepts.empty() ? "no concepts" : "expected a noun phrase");
            }
            noun = i - 1;
        } else {
            ++i;
        }

        Concept c;
        c.span = {start + 1, noun + 1};
        for (std::size_t k = start; k < noun; ++k) {
            c.attributes.push_back(toks[k]);
        }
        c.noun = toks[noun];
        for (std::size_t k = start; k <= noun; ++k) {
            if (k > start) {
                c.text.push_back(' ');
            }
            c.text += toks[k];
        }
        concepts.push_back(std::move(c));
        i = noun + 1;

        if (i >= p) {
            break;
        }
        if (toks[i] == "and") {
            ++i;
        } else if (!tp.comma_after[noun]) {
            throw fail(i, "expected 'and' or ',' between noun phrases");
        } else if (i < p && toks[i] == "and") {
            ++i;
        }
        if (i >= p) {
            throw fail(i, "dangling conjunction");
        }
    }
    return concepts;
}

} // namespace pico

#include "bigen/text.hpp"

#include <cctype>

namespace bigen::text {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_joiner(char c) { return c == '-' || c == '/' || c == '.'; }

}  // namespace

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

std::vector<std::string> tokenize(std::string_view raw) {
    const std::string s = lowercase(raw);
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < s.size()) {
        if (is_space(s[i])) {
            ++i;
            continue;
        }
        if (is_alnum(s[i])) {
            std::size_t j = i + 1;
            while (j < s.size()) {
                if (is_alnum(s[j])) {
                    ++j;
                } else if (is_joiner(s[j]) && j + 1 < s.size() && is_alnum(s[j + 1])) {
                    j += 2;
                } else {
                    break;
                }
            }
            out.emplace_back(s.substr(i, j - i));
            i = j;
        } else {
            out.emplace_back(1, s[i]);
            ++i;
        }
    }
    return out;
}

bool is_punctuation(std::string_view token) { return token.size() == 1 && !is_alnum(token[0]); }

std::vector<std::string> words(std::string_view text) {
    auto toks = tokenize(text);
    std::erase_if(toks, [](const std::string& t) { return is_punctuation(t); });
    return toks;
}

std::string detokenize(const std::vector<std::string>& tokens) {
    std::string out;
    bool suppress_space = true;
    for (const auto& t : tokens) {
        const bool closing = t == "." || t == "," || t == ";" || t == ":" || t == ")" || t == "?" || t == "!";
        if (!suppress_space && !closing) out += ' ';
        out += t;
        suppress_space = t == "(";
    }
    return out;
}

}  // namespace bigen::text

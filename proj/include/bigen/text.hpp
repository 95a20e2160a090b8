#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace bigen::text {

// Lowercases and splits into word and punctuation tokens. A word is a run of
// alphanumerics that may continue through '-', '/' or '.' when the next
// character is alphanumeric again, so "m-8500/3", "her-2" and "1.5" stay whole.
std::vector<std::string> tokenize(std::string_view text);

// tokenize() with punctuation tokens dropped; the unit of every text metric.
std::vector<std::string> words(std::string_view text);

// Inverse of tokenize() for canonical text: single spaces between words, no
// space before closing punctuation.
std::string detokenize(const std::vector<std::string>& tokens);

bool is_punctuation(std::string_view token);

std::string lowercase(std::string_view s);

}  // namespace bigen::text

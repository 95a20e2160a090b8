#include "bigen/vocab.hpp"

#include <fstream>
#include <map>

#include "bigen/error.hpp"
#include "bigen/text.hpp"

namespace bigen {

namespace {
const std::vector<std::string> kSpecials = {"<pad>", "<bos>", "<eos>", "<unk>"};
}

Vocab::Vocab() {
    for (const auto& t : kSpecials) {
        index_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
    if (tokens.size() < kSpecials.size() || !std::equal(kSpecials.begin(), kSpecials.end(), tokens.begin())) {
        throw DataError("vocab must start with the special tokens <pad> <bos> <eos> <unk>");
    }
    Vocab v;
    v.tokens_.clear();
    v.index_.clear();
    for (const auto& t : tokens) {
        if (!v.index_.emplace(t, static_cast<int>(v.tokens_.size())).second) {
            throw DataError("vocab: duplicate token '" + t + "'");
        }
        v.tokens_.push_back(t);
    }
    return v;
}

Vocab Vocab::build(const std::vector<std::string>& reports, int min_freq) {
    std::map<std::string, int> counts;
    for (const auto& r : reports)
        for (auto& t : text::tokenize(r)) ++counts[t];
    std::vector<std::string> tokens = kSpecials;
    for (const auto& [tok, n] : counts)
        if (n >= min_freq) tokens.push_back(tok);
    return from_tokens(tokens);
}

int Vocab::id(std::string_view token) const {
    auto it = index_.find(std::string(token));
    return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
        throw DataError("vocab: unknown token id " + std::to_string(id));
    }
    return tokens_[id];
}

std::vector<int> Vocab::encode(std::string_view text) const {
    std::vector<int> ids{kBos};
    for (const auto& t : text::tokenize(text)) ids.push_back(id(t));
    ids.push_back(kEos);
    return ids;
}

std::string Vocab::decode(std::span<const int> ids) const {
    std::vector<std::string> words;
    for (int id : ids) {
        const auto& t = token(id);
        if (id == kEos) break;
        if (id == kBos || id == kPad) continue;
        words.push_back(t);
    }
    return text::detokenize(words);
}

void Vocab::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot open '" + path.string() + "' for writing");
    for (const auto& t : tokens_) out << t << '\n';
}

Vocab Vocab::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab '" + path.string() + "'");
    std::vector<std::string> tokens;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) tokens.push_back(line);
    return from_tokens(tokens);
}

}  // namespace bigen

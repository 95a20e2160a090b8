#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace bigen {

// Word-level report vocabulary. Ids are dense from 0; the four special tokens
// occupy ids 0..3.
class Vocab {
   public:
    static constexpr int kPad = 0;
    static constexpr int kBos = 1;
    static constexpr int kEos = 2;
    static constexpr int kUnk = 3;
    static constexpr int kSpecialCount = 4;

    Vocab();

    // Built from training reports only. Tokens seen fewer than min_freq times
    // are left out and encode to kUnk.
    static Vocab build(const std::vector<std::string>& reports, int min_freq = 1);
    static Vocab from_tokens(const std::vector<std::string>& tokens);

    std::size_t size() const noexcept { return tokens_.size(); }
    int id(std::string_view token) const;
    const std::string& token(int id) const;
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }

    // BOS + token ids + EOS.
    std::vector<int> encode(std::string_view text) const;
    // Drops BOS/PAD, stops at EOS. Throws on ids outside the vocabulary.
    std::string decode(std::span<const int> ids) const;

    void save(const std::filesystem::path& path) const;
    static Vocab load(const std::filesystem::path& path);

    bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

   private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

}  // namespace bigen

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace harmony {

using TokenId = std::size_t;

namespace tokens {
inline constexpr TokenId pad = 0;
inline constexpr TokenId bos = 1;
inline constexpr TokenId eos = 2;
inline constexpr TokenId boi = 3;
inline constexpr TokenId eoi = 4;
inline constexpr TokenId img_slot = 5;
inline constexpr TokenId reserved_count = 6;
}  // namespace tokens

// Token strings with greedy longest-match tokenization. Ids 0..5 are the
// reserved specials <PAD> <BOS> <EOS> <BOI> <EOI> <IMG_SLOT>; the rest are
// single characters or multi-character phrases from the prompt templates.
class Vocabulary {
public:
    explicit Vocabulary(std::vector<std::string> entries);

    // Built-in vocabulary covering every string the synthetic world emits.
    static Vocabulary standard();
    // Newline-separated token strings; the first six lines must be the specials.
    static Vocabulary load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::size_t size() const { return entries_.size(); }
    const std::string& token(TokenId id) const;
    std::optional<TokenId> find(std::string_view s) const;

    // Throws VocabularyError naming the first character no entry covers.
    std::vector<TokenId> encode(std::string_view text) const;
    // Concatenates token strings; specials are skipped.
    std::string decode(std::span<const TokenId> ids) const;

private:
    std::vector<std::string> entries_;
    std::unordered_map<std::string, TokenId> index_;
    std::size_t longest_ = 1;
};

}  // namespace harmony

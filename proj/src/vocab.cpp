#include "harmony/vocab.hpp"

#include <algorithm>
#include <fstream>

#include "harmony/errors.hpp"

namespace harmony {

namespace {

const char* const kSpecials[] = {"<PAD>", "<BOS>", "<EOS>", "<BOI>", "<EOI>", "<IMG_SLOT>"};

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> entries) : entries_(std::move(entries)) {
    if (entries_.size() < tokens::reserved_count) {
        throw VocabularyError("vocabulary needs the six reserved specials first");
    }
    for (TokenId i = 0; i < tokens::reserved_count; ++i) {
        if (entries_[i] != kSpecials[i]) {
            throw VocabularyError("reserved id " + std::to_string(i) + " must be " + kSpecials[i] +
                                  ", found '" + entries_[i] + "'");
        }
    }
    for (TokenId i = 0; i < entries_.size(); ++i) {
        if (entries_[i].empty()) throw VocabularyError("empty token at id " + std::to_string(i));
        if (!index_.emplace(entries_[i], i).second) {
            throw VocabularyError("duplicate token '" + entries_[i] + "'");
        }
        if (i >= tokens::reserved_count) longest_ = std::max(longest_, entries_[i].size());
    }
}

Vocabulary Vocabulary::standard() {
    std::vector<std::string> e(std::begin(kSpecials), std::end(kSpecials));
    for (const char* phrase : {
             "Answer the following question based on the image. ",
             " Question: ",
             " Answer: ",
             "What is the text in ",
             " in this image?",
             "Where is ",
             "Extract all the text in this image.",
             "Locate all the text in this image.",
             "Locate and extract all the text in this image.",
             "How many words are in this image?",
             "How many letters are in this image?",
             "What is the first letter?",
             "Generate an image according to the caption.",
             "Fill the masked part in this image with ",
             " text: ",
             " at ",
             "; ",
         })
        e.emplace_back(phrase);
    for (int v = 10; v <= 16; ++v) e.push_back(std::to_string(v));
    for (char c = 'A'; c <= 'P'; ++c) e.emplace_back(1, c);
    for (char c = '0'; c <= '9'; ++c) e.emplace_back(1, c);
    for (char c : std::string(" <>,();:?.")) e.emplace_back(1, c);
    return Vocabulary(std::move(e));
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw VocabularyError("cannot read vocabulary file " + path.string());
    std::vector<std::string> entries;
    std::string line;
    while (std::getline(in, line)) entries.push_back(line);
    return Vocabulary(std::move(entries));
}

void Vocabulary::save(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write vocabulary file " + path.string());
    for (const auto& e : entries_) out << e << '\n';
}

const std::string& Vocabulary::token(TokenId id) const {
    if (id >= entries_.size()) {
        throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                         std::to_string(entries_.size()));
    }
    return entries_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view s) const {
    auto it = index_.find(std::string(s));
    if (it == index_.end()) return std::nullopt;
    return it->second;
}

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
    std::vector<TokenId> ids;
    std::size_t pos = 0;
    while (pos < text.size()) {
        bool matched = false;
        for (std::size_t len = std::min(longest_, text.size() - pos); len > 0; --len) {
            auto it = index_.find(std::string(text.substr(pos, len)));
            if (it != index_.end() && it->second >= tokens::reserved_count) {
                ids.push_back(it->second);
                pos += len;
                matched = true;
                break;
            }
        }
        if (!matched) {
            throw VocabularyError("character '" + std::string(1, text[pos]) + "' at offset " +
                                  std::to_string(pos) + " is not in the vocabulary");
        }
    }
    return ids;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids)
        if (id >= tokens::reserved_count) out += token(id);
    return out;
}

}  // namespace harmony

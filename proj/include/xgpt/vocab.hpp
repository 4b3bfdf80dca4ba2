#pragma once

// Word-level vocabulary with fixed reserved entries.  The on-disk format is
// one token per line; the line index is the token id and the first five lines
// must be the reserved tokens in order.

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace xgpt {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kMaskId = 3;
inline constexpr int kUnkId = 4;
inline constexpr int kNumReserved = 5;
inline constexpr std::size_t kMaxSequenceLen = 60;

inline const std::vector<std::string>& reserved_tokens() {
    static const std::vector<std::string> toks = {"[PAD]", "[BOS]", "[EOS]", "[MASK]", "[UNK]"};
    return toks;
}

class Vocabulary {
public:
    // Builds from the word list that follows the reserved block.
    static Vocabulary from_words(const std::vector<std::string>& words) {
        Vocabulary v;
        v.tokens_ = reserved_tokens();
        for (const auto& w : words) v.tokens_.push_back(w);
        v.rebuild_index();
        return v;
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("Vocabulary::load: cannot open " + path);
        Vocabulary v;
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            v.tokens_.push_back(line);
        }
        if (v.tokens_.size() < kNumReserved) {
            throw std::runtime_error("Vocabulary::load: " + path + " holds fewer than " +
                                     std::to_string(kNumReserved) + " tokens");
        }
        for (int i = 0; i < kNumReserved; ++i) {
            if (v.tokens_[i] != reserved_tokens()[i]) {
                throw std::runtime_error("Vocabulary::load: line " + std::to_string(i) +
                                         " must be " + reserved_tokens()[i] + ", found '" +
                                         v.tokens_[i] + "'");
            }
        }
        v.rebuild_index();
        return v;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("Vocabulary::save: cannot open " + path);
        for (const auto& t : tokens_) out << t << "\n";
    }

    int size() const { return static_cast<int>(tokens_.size()); }
    int num_words() const { return size() - kNumReserved; }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) {
            throw std::out_of_range("Vocabulary::token: id " + std::to_string(id) +
                                    " outside vocabulary of " + std::to_string(size()));
        }
        return tokens_[static_cast<std::size_t>(id)];
    }

    int lookup(const std::string& word) const {
        auto it = index_.find(word);
        return it == index_.end() ? kUnkId : it->second;
    }

    bool is_reserved(int id) const { return id >= 0 && id < kNumReserved; }

    // Whitespace tokenization with [UNK] fallback, trimmed to the maximum
    // sequence length.
    std::vector<int> encode(const std::string& text, std::size_t max_len = kMaxSequenceLen) const {
        std::istringstream ss(text);
        std::vector<int> ids;
        std::string w;
        while (ss >> w && ids.size() < max_len) ids.push_back(lookup(w));
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += token(ids[i]);
        }
        return out;
    }

private:
    void rebuild_index() {
        index_.clear();
        for (std::size_t i = 0; i < tokens_.size(); ++i) {
            if (tokens_[i].empty()) {
                throw std::runtime_error("Vocabulary: empty token at line " + std::to_string(i));
            }
            auto [it, inserted] = index_.emplace(tokens_[i], static_cast<int>(i));
            if (!inserted) {
                throw std::runtime_error("Vocabulary: duplicate token '" + tokens_[i] + "' at lines " +
                                         std::to_string(it->second) + " and " + std::to_string(i));
            }
        }
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
};

} // namespace xgpt

#pragma once

// Corpus-level caption metrics: 4-gram BLEU with the brevity penalty and no
// smoothing, and the tf-idf consensus score (10x cosine similarity averaged
// over 1..4-grams and over references).

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace xgpt {

struct CaptionEval {
    std::string image_id;
    std::vector<std::string> hypothesis;
    std::vector<std::vector<std::string>> references;
};

inline std::vector<std::string> tokenize_caption(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

namespace detail {

inline constexpr std::size_t kMaxOrder = 4;

// n-grams keyed by their tokens joined with an unprintable separator.
inline std::map<std::string, std::size_t> ngram_counts(const std::vector<std::string>& tokens,
                                                       std::size_t n) {
    std::map<std::string, std::size_t> counts;
    if (tokens.size() < n) return counts;
    for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
        std::string key;
        for (std::size_t j = 0; j < n; ++j) {
            if (j > 0) key.push_back('\x1f');
            key += tokens[i + j];
        }
        counts[key] += 1;
    }
    return counts;
}

} // namespace detail

inline double bleu4(const std::vector<CaptionEval>& corpus) {
    if (corpus.empty()) throw std::invalid_argument("bleu4: empty corpus");
    for (const CaptionEval& e : corpus) {
        if (e.references.empty()) {
            throw std::invalid_argument("bleu4: image '" + e.image_id + "' has no references");
        }
    }
    double hyp_len = 0.0;
    double ref_len = 0.0;
    std::array<double, detail::kMaxOrder> matched{};
    std::array<double, detail::kMaxOrder> total{};

    for (const CaptionEval& e : corpus) {
        hyp_len += static_cast<double>(e.hypothesis.size());
        // closest reference length; ties go to the shorter reference
        std::size_t best = e.references.front().size();
        for (const auto& ref : e.references) {
            const auto diff = [&](std::size_t len) {
                return len > e.hypothesis.size() ? len - e.hypothesis.size()
                                                 : e.hypothesis.size() - len;
            };
            if (diff(ref.size()) < diff(best) || (diff(ref.size()) == diff(best) && ref.size() < best)) {
                best = ref.size();
            }
        }
        ref_len += static_cast<double>(best);

        for (std::size_t n = 1; n <= detail::kMaxOrder; ++n) {
            auto hyp_counts = detail::ngram_counts(e.hypothesis, n);
            std::map<std::string, std::size_t> cap;
            for (const auto& ref : e.references) {
                for (const auto& [key, count] : detail::ngram_counts(ref, n)) {
                    cap[key] = std::max(cap[key], count);
                }
            }
            for (const auto& [key, count] : hyp_counts) {
                auto it = cap.find(key);
                const std::size_t clip = it == cap.end() ? 0 : it->second;
                matched[n - 1] += static_cast<double>(std::min(count, clip));
                total[n - 1] += static_cast<double>(count);
            }
        }
    }

    double log_precision_sum = 0.0;
    for (std::size_t n = 0; n < detail::kMaxOrder; ++n) {
        if (matched[n] == 0.0 || total[n] == 0.0) return 0.0;  // no smoothing
        log_precision_sum += std::log(matched[n] / total[n]);
    }
    if (hyp_len == 0.0) return 0.0;
    const double bp = hyp_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / hyp_len);
    return bp * std::exp(log_precision_sum / static_cast<double>(detail::kMaxOrder));
}

inline double cider(const std::vector<CaptionEval>& corpus) {
    if (corpus.size() < 2) {
        throw std::invalid_argument("cider: needs at least two images, got " +
                                    std::to_string(corpus.size()));
    }
    for (const CaptionEval& e : corpus) {
        if (e.references.empty()) {
            throw std::invalid_argument("cider: image '" + e.image_id + "' has no references");
        }
    }
    const double log_num_images = std::log(static_cast<double>(corpus.size()));

    // document frequency per order: in how many images' reference sets the
    // n-gram appears (counted once per image)
    std::array<std::map<std::string, double>, detail::kMaxOrder> df;
    for (const CaptionEval& e : corpus) {
        for (std::size_t n = 1; n <= detail::kMaxOrder; ++n) {
            std::map<std::string, std::size_t> seen;
            for (const auto& ref : e.references) {
                for (const auto& [key, count] : detail::ngram_counts(ref, n)) seen[key] = 1;
            }
            for (const auto& [key, one] : seen) df[n - 1][key] += 1.0;
        }
    }

    auto tfidf = [&](const std::vector<std::string>& tokens, std::size_t n) {
        std::map<std::string, double> vec;
        for (const auto& [key, count] : detail::ngram_counts(tokens, n)) {
            auto it = df[n - 1].find(key);
            const double freq = it == df[n - 1].end() ? 0.0 : it->second;
            vec[key] = static_cast<double>(count) * (log_num_images - std::log(std::max(1.0, freq)));
        }
        return vec;
    };
    auto cosine = [](const std::map<std::string, double>& a, const std::map<std::string, double>& b) {
        double dot = 0.0;
        double na = 0.0;
        double nb = 0.0;
        for (const auto& [key, va] : a) {
            na += va * va;
            auto it = b.find(key);
            if (it != b.end()) dot += va * it->second;
        }
        for (const auto& [key, vb] : b) nb += vb * vb;
        if (na == 0.0 || nb == 0.0) return 0.0;
        return dot / (std::sqrt(na) * std::sqrt(nb));
    };

    double corpus_score = 0.0;
    for (const CaptionEval& e : corpus) {
        double image_score = 0.0;
        for (std::size_t n = 1; n <= detail::kMaxOrder; ++n) {
            auto hyp_vec = tfidf(e.hypothesis, n);
            double order_score = 0.0;
            for (const auto& ref : e.references) {
                order_score += cosine(hyp_vec, tfidf(ref, n));
            }
            image_score += order_score / static_cast<double>(e.references.size());
        }
        corpus_score += 10.0 * image_score / static_cast<double>(detail::kMaxOrder);
    }
    return corpus_score / static_cast<double>(corpus.size());
}

} // namespace xgpt

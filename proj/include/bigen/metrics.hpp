#pragma once

// Report-generation metrics. Every text metric works on text::words(), i.e.
// lowercased words with punctuation removed and codes such as "m-8500/3" kept
// whole. METEOR and Fact_ent are simplified stand-ins and carry a
// "_simplified" suffix wherever they are printed.

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bigen::metrics {

using Texts = std::vector<std::string>;

// Corpus-level BLEU of order n (1..4): clipped n-gram precision with brevity
// penalty, geometric mean of orders 1..n. An order n >= 2 whose corpus match
// count is zero uses (0 + 1) / (total + 1). Zero unigram matches give 0.
double bleu(const Texts& candidates, const Texts& references, int n);

// LCS F-measure with beta = 1.2, averaged over cases.
double rouge_l(const Texts& candidates, const Texts& references);

// Light suffix stripper used for METEOR stem matches.
std::string stem(std::string_view word);

// Per-case unigram alignment (exact matches weigh 1, stem matches 0.6),
// Fmean = PR / (0.9 P + 0.1 R), penalty 0.5 * ((chunks - 1) / matches)^3,
// averaged over cases.
double meteor_simplified(const Texts& candidates, const Texts& references);
double meteor_sentence(std::string_view candidate, std::string_view reference);

// Longest-match dictionary entities, left to right.
std::vector<std::string> extract_entities(std::string_view text, const std::vector<std::string>& dictionary);
// Micro F1 over entity multisets. 1.0 when neither side mentions any entity.
double fact_ent(const Texts& candidates, const Texts& references, const std::vector<std::string>& dictionary);

// "her-2" followed by "positive" or "negative" before the sentence ends.
std::optional<bool> her2_status(std::string_view text);

struct Her2Scores {
    double precision = 0, recall = 0, f1 = 0;
    int tp = 0, fp = 0, fn = 0, tn = 0;
};

// Positive status is the positive class. A candidate without a parseable
// status counts as a negative prediction; a reference without one throws.
// Precision (recall) is 1 when nothing was predicted (present) positive.
Her2Scores her2_metrics(const Texts& candidates, const Texts& references);

struct MetricReport {
    std::array<double, 4> bleu{};
    double meteor = 0;
    double rouge_l = 0;
    double fact_ent = 0;
    Her2Scores her2;

    // Human-readable two-column table.
    std::string table() const;
    // "key=value" lines.
    std::string key_values() const;
    // (key, value) pairs in output order.
    std::vector<std::pair<std::string, double>> fields() const;
};

MetricReport evaluate(const Texts& candidates, const Texts& references, const std::vector<std::string>& dictionary);

}  // namespace bigen::metrics

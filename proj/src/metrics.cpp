#include "bigen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

#include "bigen/error.hpp"
#include "bigen/text.hpp"

namespace bigen::metrics {

namespace {

void check_corpus(const char* metric, const Texts& c, const Texts& r) {
    if (c.empty()) throw DataError(std::string(metric) + ": empty corpus");
    if (c.size() != r.size()) {
        throw DataError(std::string(metric) + ": " + std::to_string(c.size()) + " candidates vs " +
                        std::to_string(r.size()) + " references");
    }
}

using Words = std::vector<std::string>;

std::map<Words, int> ngram_counts(const Words& w, int n) {
    std::map<Words, int> out;
    for (std::size_t i = 0; i + n <= w.size(); ++i) ++out[Words(w.begin() + i, w.begin() + i + n)];
    return out;
}

std::size_t lcs_length(const Words& a, const Words& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

}  // namespace

double bleu(const Texts& candidates, const Texts& references, int n) {
    check_corpus("bleu", candidates, references);
    if (n < 1 || n > 4) throw UsageError("bleu order must be in 1..4, got " + std::to_string(n));
    std::vector<double> matches(n, 0), totals(n, 0);
    double cand_len = 0, ref_len = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = text::words(candidates[i]);
        const auto r = text::words(references[i]);
        cand_len += double(c.size());
        ref_len += double(r.size());
        for (int k = 1; k <= n; ++k) {
            const auto cc = ngram_counts(c, k);
            const auto rc = ngram_counts(r, k);
            for (const auto& [gram, count] : cc) {
                totals[k - 1] += count;
                if (auto it = rc.find(gram); it != rc.end()) matches[k - 1] += std::min(count, it->second);
            }
        }
    }
    if (cand_len == 0 || matches[0] == 0) return 0.0;
    double log_sum = 0;
    for (int k = 0; k < n; ++k) {
        double m = matches[k], t = totals[k];
        if (k > 0 && m == 0) {
            m += 1;
            t += 1;
        }
        log_sum += std::log(m / t);
    }
    const double bp = cand_len > ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
    return bp * std::exp(log_sum / n);
}

double rouge_l(const Texts& candidates, const Texts& references) {
    check_corpus("rouge_l", candidates, references);
    constexpr double beta2 = 1.2 * 1.2;
    double sum = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto c = text::words(candidates[i]);
        const auto r = text::words(references[i]);
        if (c.empty() && r.empty()) {
            sum += 1.0;
            continue;
        }
        const double lcs = double(lcs_length(c, r));
        if (lcs == 0) continue;
        const double p = lcs / double(c.size()), rec = lcs / double(r.size());
        sum += (1 + beta2) * p * rec / (rec + beta2 * p);
    }
    return sum / double(candidates.size());
}

std::string stem(std::string_view word) {
    std::string w(word);
    auto strip = [&](std::string_view suffix, std::string_view repl) {
        if (ends_with(w, suffix) && w.size() - suffix.size() + repl.size() >= 3) {
            w = w.substr(0, w.size() - suffix.size()) + std::string(repl);
            return true;
        }
        return false;
    };
    if (strip("ies", "y") || strip("ing", "") || strip("ed", "") || strip("ly", "")) return w;
    if (ends_with(w, "es") && !ends_with(w, "ses") && strip("es", "")) return w;
    if (ends_with(w, "s") && !ends_with(w, "ss")) strip("s", "");
    return w;
}

double meteor_sentence(std::string_view candidate, std::string_view reference) {
    const auto c = text::words(candidate);
    const auto r = text::words(reference);
    if (c.empty() && r.empty()) return 1.0;
    if (c.empty() || r.empty()) return 0.0;

    // align[i] = reference position matched by candidate word i, or -1.
    std::vector<int> align(c.size(), -1);
    std::vector<bool> used(r.size(), false);
    double weighted = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (!used[j] && c[i] == r[j]) {
                align[i] = int(j);
                used[j] = true;
                weighted += 1.0;
                break;
            }
        }
    }
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (align[i] >= 0) continue;
        const auto cs = stem(c[i]);
        for (std::size_t j = 0; j < r.size(); ++j) {
            if (!used[j] && cs == stem(r[j])) {
                align[i] = int(j);
                used[j] = true;
                weighted += 0.6;
                break;
            }
        }
    }
    int matches = 0, chunks = 0, prev = -2;
    for (int a : align) {
        if (a < 0) {
            prev = -2;
            continue;
        }
        ++matches;
        if (a != prev + 1) ++chunks;
        prev = a;
    }
    if (matches == 0) return 0.0;
    const double p = weighted / double(c.size()), rec = weighted / double(r.size());
    const double fmean = p * rec / (0.9 * p + 0.1 * rec);
    const double frag = double(chunks - 1) / double(matches);
    return fmean * (1.0 - 0.5 * std::pow(frag, 3.0));
}

double meteor_simplified(const Texts& candidates, const Texts& references) {
    check_corpus("meteor_simplified", candidates, references);
    double sum = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) sum += meteor_sentence(candidates[i], references[i]);
    return sum / double(candidates.size());
}

std::vector<std::string> extract_entities(std::string_view text, const std::vector<std::string>& dictionary) {
    if (dictionary.empty()) throw DataError("fact_ent: empty entity dictionary");
    std::vector<Words> entries;
    for (const auto& e : dictionary) {
        auto w = text::words(e);
        if (!w.empty()) entries.push_back(std::move(w));
    }
    const auto words = text::words(text);
    std::vector<std::string> out;
    for (std::size_t i = 0; i < words.size();) {
        const Words* best = nullptr;
        for (const auto& e : entries) {
            if (i + e.size() > words.size()) continue;
            if (!std::equal(e.begin(), e.end(), words.begin() + i)) continue;
            if (best == nullptr || e.size() > best->size()) best = &e;
        }
        if (best == nullptr) {
            ++i;
            continue;
        }
        std::string joined;
        for (const auto& w : *best) joined += (joined.empty() ? "" : " ") + w;
        out.push_back(std::move(joined));
        i += best->size();
    }
    return out;
}

double fact_ent(const Texts& candidates, const Texts& references, const std::vector<std::string>& dictionary) {
    check_corpus("fact_ent", candidates, references);
    if (dictionary.empty()) throw DataError("fact_ent: empty entity dictionary");
    double tp = 0, n_cand = 0, n_ref = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        std::map<std::string, int> c, r;
        for (auto& e : extract_entities(candidates[i], dictionary)) ++c[e];
        for (auto& e : extract_entities(references[i], dictionary)) ++r[e];
        for (const auto& [e, n] : c) {
            n_cand += n;
            if (auto it = r.find(e); it != r.end()) tp += std::min(n, it->second);
        }
        for (const auto& [e, n] : r) n_ref += n;
    }
    if (n_cand == 0 && n_ref == 0) return 1.0;
    if (tp == 0) return 0.0;
    const double p = tp / n_cand, rec = tp / n_ref;
    return 2 * p * rec / (p + rec);
}

std::optional<bool> her2_status(std::string_view text) {
    const auto tokens = text::tokenize(text);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (tokens[i] != "her-2") continue;
        for (std::size_t j = i + 1; j < tokens.size(); ++j) {
            if (tokens[j] == "." || tokens[j] == ";") break;
            if (tokens[j] == "positive") return true;
            if (tokens[j] == "negative") return false;
        }
    }
    return std::nullopt;
}

Her2Scores her2_metrics(const Texts& candidates, const Texts& references) {
    check_corpus("her2_metrics", candidates, references);
    Her2Scores s;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        const auto truth = her2_status(references[i]);
        if (!truth) throw DataError("her2_metrics: reference " + std::to_string(i) + " has no parseable Her-2 status");
        const bool pred = her2_status(candidates[i]).value_or(false);
        if (pred && *truth) ++s.tp;
        else if (pred) ++s.fp;
        else if (*truth) ++s.fn;
        else ++s.tn;
    }
    s.precision = s.tp + s.fp == 0 ? 1.0 : double(s.tp) / double(s.tp + s.fp);
    s.recall = s.tp + s.fn == 0 ? 1.0 : double(s.tp) / double(s.tp + s.fn);
    s.f1 = s.precision + s.recall == 0 ? 0.0 : 2 * s.precision * s.recall / (s.precision + s.recall);
    return s;
}

std::vector<std::pair<std::string, double>> MetricReport::fields() const {
    return {{"bleu_1", bleu[0]},
            {"bleu_2", bleu[1]},
            {"bleu_3", bleu[2]},
            {"bleu_4", bleu[3]},
            {"meteor_simplified", meteor},
            {"rouge_l", rouge_l},
            {"fact_ent_simplified", fact_ent},
            {"her2_precision", her2.precision},
            {"her2_recall", her2.recall},
            {"her2_f1", her2.f1}};
}

std::string MetricReport::table() const {
    std::ostringstream o;
    char buf[64];
    o << "metric               value\n";
    o << "-------------------  ------\n";
    for (const auto& [k, v] : fields()) {
        std::snprintf(buf, sizeof buf, "%-19s  %.4f\n", k.c_str(), v);
        o << buf;
    }
    return o.str();
}

std::string MetricReport::key_values() const {
    std::ostringstream o;
    o.precision(10);
    for (const auto& [k, v] : fields()) o << k << '=' << v << '\n';
    return o.str();
}

MetricReport evaluate(const Texts& candidates, const Texts& references, const std::vector<std::string>& dictionary) {
    MetricReport m;
    for (int n = 1; n <= 4; ++n) m.bleu[n - 1] = bleu(candidates, references, n);
    m.meteor = meteor_simplified(candidates, references);
    m.rouge_l = rouge_l(candidates, references);
    m.fact_ent = fact_ent(candidates, references, dictionary);
    m.her2 = her2_metrics(candidates, references);
    return m;
}

}  // namespace bigen::metrics

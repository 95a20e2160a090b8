#pragma once

// Beam search over an abstract incremental scorer.
//
// `Step` is callable as `std::vector<double>(State&, int token)`: it feeds
// `token` into the state and returns log-probabilities for the next token.
// Hypotheses are ranked by cumulative log-probability while they grow and by
// log-probability per token (EOS included) once finished. Ties resolve to the
// lower hypothesis index, then the lower token id, so results are stable.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <vector>

#include "bigen/error.hpp"

namespace bigen {

struct Hypothesis {
    std::vector<int> tokens;          // generated tokens, EOS included when finished
    std::vector<double> logprobs;     // one per token
    double score = 0.0;               // sum of logprobs
    bool finished = false;

    double normalized() const { return tokens.empty() ? score : score / double(tokens.size()); }
};

struct DecodeLimits {
    int bos = 1;
    int eos = 2;
    int max_len = 60;
    std::vector<int> forbidden;  // never generated (e.g. PAD, BOS)
};

namespace detail {

inline bool allowed(const DecodeLimits& lim, int token) {
    return std::find(lim.forbidden.begin(), lim.forbidden.end(), token) == lim.forbidden.end();
}

}  // namespace detail

template <class State, class Step>
Hypothesis greedy_search(State state, const DecodeLimits& lim, Step&& step) {
    if (lim.max_len < 1) throw UsageError("max_len must be >= 1");
    Hypothesis h;
    std::vector<double> lp = step(state, lim.bos);
    while (true) {
        int best = -1;
        for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
            if (!detail::allowed(lim, t)) continue;
            if (best < 0 || lp[t] > lp[best]) best = t;
        }
        if (best < 0) throw DataError("greedy search: every token is forbidden");
        h.tokens.push_back(best);
        h.logprobs.push_back(lp[best]);
        h.score += lp[best];
        if (best == lim.eos) {
            h.finished = true;
            break;
        }
        if (static_cast<int>(h.tokens.size()) >= lim.max_len) break;
        lp = step(state, best);
    }
    return h;
}

template <class State, class Step>
Hypothesis beam_search(State state, int beam, const DecodeLimits& lim, Step&& step) {
    if (beam < 1) throw UsageError("beam width must be >= 1, got " + std::to_string(beam));
    if (lim.max_len < 1) throw UsageError("max_len must be >= 1");

    struct Live {
        Hypothesis hyp;
        State state;
        std::vector<double> next;
    };
    struct Candidate {
        std::size_t from;
        int token;
        double score;
        double logprob;
    };

    std::vector<Live> live;
    {
        auto lp = step(state, lim.bos);
        live.push_back({Hypothesis{}, std::move(state), std::move(lp)});
    }
    std::vector<Hypothesis> finished;

    while (!live.empty() && static_cast<int>(finished.size()) < beam) {
        std::vector<Candidate> cands;
        for (std::size_t i = 0; i < live.size(); ++i) {
            const auto& lp = live[i].next;
            for (int t = 0; t < static_cast<int>(lp.size()); ++t) {
                if (detail::allowed(lim, t)) cands.push_back({i, t, live[i].hyp.score + lp[t], lp[t]});
            }
        }
        if (cands.empty()) throw DataError("beam search: every token is forbidden");
        const std::size_t keep = std::min<std::size_t>(beam, cands.size());
        std::partial_sort(cands.begin(), cands.begin() + keep, cands.end(), [](const Candidate& a, const Candidate& b) {
            if (a.score != b.score) return a.score > b.score;
            if (a.from != b.from) return a.from < b.from;
            // Rounding in the sum can tie distinct log-probs of one hypothesis.
            if (a.logprob != b.logprob) return a.logprob > b.logprob;
            return a.token < b.token;
        });
        cands.resize(keep);

        std::vector<Live> next;
        for (const auto& c : cands) {
            const Live& src = live[c.from];
            Hypothesis h = src.hyp;
            h.tokens.push_back(c.token);
            h.logprobs.push_back(c.logprob);
            h.score = c.score;
            if (c.token == lim.eos) {
                h.finished = true;
                finished.push_back(std::move(h));
            } else if (static_cast<int>(h.tokens.size()) >= lim.max_len) {
                finished.push_back(std::move(h));
            } else {
                State s = src.state;
                auto lp = step(s, c.token);
                next.push_back({std::move(h), std::move(s), std::move(lp)});
            }
        }
        live = std::move(next);
    }

    const Hypothesis* best = nullptr;
    for (const auto& h : finished)
        if (best == nullptr || h.normalized() > best->normalized()) best = &h;
    if (best == nullptr) throw DataError("beam search produced no hypothesis");
    return *best;
}

}  // namespace bigen

#pragma once

#include <random>
#include <vector>

#include "mutelab/eval/wer.hpp"

namespace mutelab::testing {

// Enumerates every monotone alignment path. Among minimal-cost paths, picks
// the one whose op sequence read from the end is lexicographically smallest
// with diagonal < insert < delete.
struct Enumerated {
    std::size_t cost = 0;
    std::vector<int> reversed;  // 0 diagonal, 1 insert, 2 delete
    EditCounts counts;
};

inline void walk(const std::vector<int>& ref, const std::vector<int>& hyp, std::size_t i, std::size_t j,
          std::vector<int>& path, EditCounts& counts, std::size_t cost, Enumerated& best, bool& have) {
    if (i == ref.size() && j == hyp.size()) {
        std::vector<int> rev(path.rbegin(), path.rend());
        if (!have || cost < best.cost || (cost == best.cost && rev < best.reversed)) {
            best = {cost, rev, counts};
            have = true;
        }
        return;
    }
    if (i < ref.size() && j < hyp.size()) {
        const bool same = ref[i] == hyp[j];
        path.push_back(0);
        counts.substitutions += !same;
        walk(ref, hyp, i + 1, j + 1, path, counts, cost + !same, best, have);
        counts.substitutions -= !same;
        path.pop_back();
    }
    if (j < hyp.size()) {
        path.push_back(1);
        ++counts.insertions;
        walk(ref, hyp, i, j + 1, path, counts, cost + 1, best, have);
        --counts.insertions;
        path.pop_back();
    }
    if (i < ref.size()) {
        path.push_back(2);
        ++counts.deletions;
        walk(ref, hyp, i + 1, j, path, counts, cost + 1, best, have);
        --counts.deletions;
        path.pop_back();
    }
}

inline Enumerated enumerate(const std::vector<int>& ref, const std::vector<int>& hyp) {
    Enumerated best;
    bool have = false;
    std::vector<int> path;
    EditCounts counts;
    walk(ref, hyp, 0, 0, path, counts, 0, best, have);
    best.counts.reference_words = ref.size();
    return best;
}

inline std::vector<int> random_words(std::mt19937_64& rng, std::size_t max_len, int alphabet) {
    std::uniform_int_distribution<std::size_t> len(0, max_len);
    std::uniform_int_distribution<int> word(0, alphabet - 1);
    std::vector<int> v(len(rng));
    for (auto& w : v) w = word(rng);
    return v;
}

}  // namespace mutelab::testing

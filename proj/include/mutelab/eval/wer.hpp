#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

namespace mutelab {

enum class EditOp { match, substitute, insert, remove };

struct EditCounts {
    std::size_t reference_words = 0;
    std::size_t substitutions = 0;
    std::size_t insertions = 0;
    std::size_t deletions = 0;

    std::size_t errors() const { return substitutions + insertions + deletions; }

    EditCounts& operator+=(const EditCounts& o) {
        reference_words += o.reference_words;
        substitutions += o.substitutions;
        insertions += o.insertions;
        deletions += o.deletions;
        return *this;
    }
};

// Percentages of the reference length. `defined` is false for an empty
// reference; such pairs are excluded and counted by the caller.
struct WerBreakdown {
    bool defined = false;
    double wer = 0.0;
    double ins = 0.0;
    double del = 0.0;
    double sub = 0.0;
    EditCounts counts;
};

inline WerBreakdown to_breakdown(const EditCounts& c) {
    WerBreakdown b;
    b.counts = c;
    if (c.reference_words == 0) return b;
    const double n = static_cast<double>(c.reference_words);
    b.defined = true;
    b.ins = 100.0 * static_cast<double>(c.insertions) / n;
    b.del = 100.0 * static_cast<double>(c.deletions) / n;
    b.sub = 100.0 * static_cast<double>(c.substitutions) / n;
    b.wer = b.ins + b.del + b.sub;
    return b;
}

inline void to_json(nlohmann::json& j, const WerBreakdown& b) {
    if (!b.defined) {
        j = {{"defined", false}};
        return;
    }
    j = {{"defined", true},
         {"wer", b.wer},
         {"ins", b.ins},
         {"del", b.del},
         {"sub", b.sub},
         {"reference_words", b.counts.reference_words},
         {"substitutions", b.counts.substitutions},
         {"insertions", b.counts.insertions},
         {"deletions", b.counts.deletions}};
}

// Levenshtein alignment with unit costs. Among optimal alignments the
// backtrace (from the end) prefers the diagonal move, then insertion, then
// deletion. Returned ops are in forward order.
template <typename Word>
std::vector<EditOp> align_words(const std::vector<Word>& ref, const std::vector<Word>& hyp) {
    const std::size_t n = ref.size(), m = hyp.size();
    std::vector<std::size_t> d((n + 1) * (m + 1));
    auto at = [&](std::size_t i, std::size_t j) -> std::size_t& { return d[i * (m + 1) + j]; };
    for (std::size_t i = 0; i <= n; ++i) at(i, 0) = i;
    for (std::size_t j = 0; j <= m; ++j) at(0, j) = j;
    for (std::size_t i = 1; i <= n; ++i) {
        for (std::size_t j = 1; j <= m; ++j) {
            const std::size_t diag = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
            at(i, j) = std::min({diag, at(i, j - 1) + 1, at(i - 1, j) + 1});
        }
    }
    std::vector<EditOp> ops;
    std::size_t i = n, j = m;
    while (i > 0 || j > 0) {
        if (i > 0 && j > 0) {
            const bool same = ref[i - 1] == hyp[j - 1];
            if (at(i, j) == at(i - 1, j - 1) + (same ? 0 : 1)) {
                ops.push_back(same ? EditOp::match : EditOp::substitute);
                --i;
                --j;
                continue;
            }
        }
        if (j > 0 && at(i, j) == at(i, j - 1) + 1) {
            ops.push_back(EditOp::insert);
            --j;
        } else {
            ops.push_back(EditOp::remove);
            --i;
        }
    }
    return {ops.rbegin(), ops.rend()};
}

template <typename Word>
EditCounts edit_counts(const std::vector<Word>& ref, const std::vector<Word>& hyp) {
    EditCounts c;
    c.reference_words = ref.size();
    for (EditOp op : align_words(ref, hyp)) {
        if (op == EditOp::substitute) ++c.substitutions;
        else if (op == EditOp::insert) ++c.insertions;
        else if (op == EditOp::remove) ++c.deletions;
    }
    return c;
}

template <typename Word>
WerBreakdown wer_breakdown(const std::vector<Word>& ref, const std::vector<Word>& hyp) {
    return to_breakdown(edit_counts(ref, hyp));
}

}  // namespace mutelab

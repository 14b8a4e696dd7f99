#include "masp/mining.hpp"

#include <algorithm>
#include <set>

#include "masp/errors.hpp"
#include "masp/rng.hpp"

namespace masp {

WindowCounts count_windows(std::span<const Trajectory> corpus, std::size_t l_min, std::size_t l_max) {
    WindowCounts counts;
    for (const auto& t : corpus) {
        for (std::size_t len = l_min; len <= l_max && len <= t.size(); ++len) {
            for (std::size_t start = 0; start + len <= t.size(); ++start) {
                ++counts[std::vector<ActionId>(t.begin() + static_cast<std::ptrdiff_t>(start),
                                                t.begin() + static_cast<std::ptrdiff_t>(start + len))];
            }
        }
    }
    return counts;
}

void merge_counts(WindowCounts& into, const WindowCounts& from) {
    for (const auto& [seq, n] : from) into[seq] += n;
}

std::vector<MacroAction> select_top_k(const WindowCounts& counts, std::size_t k) {
    std::vector<std::pair<const std::vector<ActionId>*, std::uint64_t>> ranked;
    ranked.reserve(counts.size());
    for (const auto& [seq, n] : counts) ranked.emplace_back(&seq, n);
    auto better = [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        if (a.first->size() != b.first->size()) return a.first->size() < b.first->size();
        return *a.first < *b.first;
    };
    const std::size_t take = std::min(k, ranked.size());
    std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(take), ranked.end(), better);
    std::vector<MacroAction> out;
    out.reserve(take);
    for (std::size_t i = 0; i < take; ++i) out.push_back({*ranked[i].first});
    return out;
}

std::vector<MacroAction> mine_macros(std::span<const Trajectory> corpus, const MiningParams& params) {
    if (params.k < 1) throw ValidationError("k must be at least 1");
    if (params.l_min < 2 || params.l_min > params.l_max)
        throw ValidationError("macro lengths must satisfy 2 <= l_min <= l_max");
    if (corpus.empty()) throw EmptyCorpusError("trajectory corpus is empty");
    return select_top_k(count_windows(corpus, params.l_min, params.l_max), params.k);
}

std::vector<Trajectory> action_sequences(std::span<const EpisodeRecord> episodes) {
    std::vector<Trajectory> out;
    out.reserve(episodes.size());
    for (const auto& e : episodes) out.push_back(e.actions);
    return out;
}

AugmentedActionSpace::AugmentedActionSpace(std::vector<std::string> primitive_names,
                                           std::vector<MacroAction> macros)
    : primitive_names_(std::move(primitive_names)), macros_(std::move(macros)) {}

std::vector<ActionId> AugmentedActionSpace::decode(std::size_t index) const {
    if (index >= size()) throw ContractViolation("augmented action index " + std::to_string(index) + " out of range");
    if (is_primitive(index)) return {static_cast<ActionId>(index)};
    return macros_[index - num_primitives()].sequence;
}

std::optional<std::size_t> AugmentedActionSpace::encode(std::span<const ActionId> sequence) const {
    if (sequence.size() == 1) {
        if (sequence[0] >= 0 && static_cast<std::size_t>(sequence[0]) < num_primitives())
            return static_cast<std::size_t>(sequence[0]);
        return std::nullopt;
    }
    for (std::size_t m = 0; m < macros_.size(); ++m)
        if (std::ranges::equal(macros_[m].sequence, sequence)) return num_primitives() + m;
    return std::nullopt;
}

std::vector<std::string> AugmentedActionSpace::labels() const {
    std::vector<std::string> out = primitive_names_;
    for (const auto& m : macros_) {
        std::string label;
        for (std::size_t i = 0; i < m.sequence.size(); ++i) {
            if (i) label += '+';
            label += primitive_names_[static_cast<std::size_t>(m.sequence[i])];
        }
        out.push_back(std::move(label));
    }
    return out;
}

ActionSpaceBuild build_action_space(std::vector<std::string> primitive_names,
                                    std::span<const MacroAction> macros) {
    const std::size_t n = primitive_names.size();
    if (n == 0) throw ValidationError("action space needs at least one primitive");
    ActionSpaceBuild result;
    std::vector<MacroAction> kept;
    std::set<std::vector<ActionId>> seen;
    for (const auto& m : macros) {
        if (m.sequence.empty()) throw ValidationError("macro with empty sequence");
        for (ActionId a : m.sequence)
            if (a < 0 || static_cast<std::size_t>(a) >= n)
                throw ValidationError("macro references unknown primitive " + std::to_string(a));
        if (m.sequence.size() == 1) {
            ++result.dropped_single;
            continue;
        }
        if (!seen.insert(m.sequence).second) {
            ++result.dropped_duplicates;
            continue;
        }
        kept.push_back(m);
    }
    result.space = AugmentedActionSpace(std::move(primitive_names), std::move(kept));
    return result;
}

std::vector<MacroAction> inject_noise(std::span<const MacroAction> macros, double p_replace,
                                      std::uint64_t seed, std::size_t num_primitives) {
    if (!(p_replace >= 0.0 && p_replace <= 1.0)) throw ValidationError("p_replace must lie in [0, 1]");
    if (num_primitives == 0) throw ValidationError("noise needs at least one primitive");
    Rng rng = Rng::substream(seed, Stream::noise);
    std::vector<MacroAction> out(macros.begin(), macros.end());
    for (auto& m : out) {
        if (!rng.bernoulli(p_replace)) continue;
        for (auto& a : m.sequence) a = static_cast<ActionId>(rng.below(num_primitives));
    }
    return out;
}

}  // namespace masp

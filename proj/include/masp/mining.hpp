#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "masp/envs.hpp"

namespace masp {

struct MacroAction {
    std::vector<ActionId> sequence;

    std::size_t length() const { return sequence.size(); }
    bool operator==(const MacroAction&) const = default;
    auto operator<=>(const MacroAction&) const = default;
};

using Trajectory = std::vector<ActionId>;

struct MiningParams {
    std::size_t k = 8;
    std::size_t l_min = 2;
    std::size_t l_max = 4;
};

// Occurrence counts of every contiguous window with length in [l_min, l_max].
// Overlapping windows are counted separately. Counts from disjoint corpus
// partitions combine with merge_counts in any order.
using WindowCounts = std::map<std::vector<ActionId>, std::uint64_t>;

WindowCounts count_windows(std::span<const Trajectory> corpus, std::size_t l_min, std::size_t l_max);
void merge_counts(WindowCounts& into, const WindowCounts& from);

// Top-k windows by count; ties go to shorter sequences, then lexicographically
// smaller ones. Throws EmptyCorpusError on an empty corpus.
std::vector<MacroAction> mine_macros(std::span<const Trajectory> corpus, const MiningParams& params);
std::vector<MacroAction> select_top_k(const WindowCounts& counts, std::size_t k);

std::vector<Trajectory> action_sequences(std::span<const EpisodeRecord> episodes);

// Primitive actions followed by macros under one contiguous index.
class AugmentedActionSpace {
public:
    AugmentedActionSpace() = default;
    AugmentedActionSpace(std::vector<std::string> primitive_names, std::vector<MacroAction> macros);

    std::size_t size() const { return primitive_names_.size() + macros_.size(); }
    std::size_t num_primitives() const { return primitive_names_.size(); }
    std::size_t num_macros() const { return macros_.size(); }
    const std::vector<std::string>& primitive_names() const { return primitive_names_; }
    const std::vector<MacroAction>& macros() const { return macros_; }

    bool is_primitive(std::size_t index) const { return index < num_primitives(); }
    // Primitive sequence executed by an augmented action.
    std::vector<ActionId> decode(std::size_t index) const;
    // Inverse of decode; length-1 sequences map to their primitive.
    std::optional<std::size_t> encode(std::span<const ActionId> sequence) const;
    std::vector<std::string> labels() const;

private:
    std::vector<std::string> primitive_names_;
    std::vector<MacroAction> macros_;
};

struct ActionSpaceBuild {
    AugmentedActionSpace space;
    std::size_t dropped_duplicates = 0;
    std::size_t dropped_single = 0;
};

// Validates macros against the primitive set, then drops duplicates and
// single-primitive macros, keeping first occurrences in order.
ActionSpaceBuild build_action_space(std::vector<std::string> primitive_names,
                                    std::span<const MacroAction> macros);

// Replaces each macro, independently with probability p_replace, by a uniform
// random primitive sequence of the same length. Order and lengths are kept;
// duplicates introduced here are left in place.
std::vector<MacroAction> inject_noise(std::span<const MacroAction> macros, double p_replace,
                                      std::uint64_t seed, std::size_t num_primitives);

}  // namespace masp

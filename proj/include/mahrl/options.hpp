#pragma once

#include <optional>
#include <vector>

#include "mahrl/gridworld.hpp"

namespace mahrl {

/// A landmark option: a relative subgoal offset within Chebyshev radius L.
struct OptionId {
  int index = 0;
  int dx = 0;
  int dy = 0;

  auto operator<=>(const OptionId&) const = default;
};

/// An option selected by an agent, bound to an absolute destination.
struct OptionInstance {
  OptionId id;
  Cell subgoal;
  int selected_at = 0;

  bool operator==(const OptionInstance&) const = default;
};

namespace options {

/// (2L+1)^2 - 1
int option_count(int radius);

/// All nonzero offsets with max(|dx|,|dy|) <= L, row-major by dy then dx
/// (dy = -L first, dx ascending within a row).
std::vector<OptionId> option_set(int radius);

/// Index of offset (dx, dy); nullopt for (0,0) or offsets outside the radius.
std::optional<int> index_of(int dx, int dy, int radius);
OptionId option_at(int index, int radius);

/// Subgoal = agent_cell + offset, clamped per axis into the grid.
OptionInstance bind(const OptionId& id, Cell agent_cell, GridDims dims, int t = 0);

/// Greedy Manhattan navigation: Stay at the subgoal, otherwise step along the
/// axis with the larger remaining distance, x on ties.
Action policy_action(Cell subgoal, Cell agent_cell);
inline Action policy_action(const OptionInstance& inst, Cell agent_cell) {
  return policy_action(inst.subgoal, agent_cell);
}

/// beta^o: 1 exactly at the subgoal.
inline bool natural_termination(const OptionInstance& inst, Cell agent_cell) {
  return inst.subgoal == agent_cell;
}

/// Index of the option that, bound at `agent_cell`, reproduces `subgoal`
/// exactly. nullopt when the agent already stands on the subgoal.
std::optional<int> relative_index(Cell subgoal, Cell agent_cell, int radius);

/// Options whose instance bound at `agent_cell` emits `action`. Enumerates
/// the option set.
std::vector<int> consistent_options(Cell agent_cell, Action action, int radius, GridDims dims);

/// Precomputed consistent_options for every (cell, action) of one grid.
class ConsistencyTable {
 public:
  ConsistencyTable(int radius, GridDims dims);

  const std::vector<int>& at(Cell c, Action a) const {
    return sets_[static_cast<std::size_t>(dims_.index(c) * 5 + static_cast<int>(a))];
  }
  int radius() const { return radius_; }
  GridDims dims() const { return dims_; }

 private:
  int radius_;
  GridDims dims_;
  std::vector<std::vector<int>> sets_;
};

}  // namespace options
}  // namespace mahrl

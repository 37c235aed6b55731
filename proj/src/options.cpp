#include "mahrl/options.hpp"

#include <cstdlib>
#include <stdexcept>

namespace mahrl::options {

int option_count(int radius) { return (2 * radius + 1) * (2 * radius + 1) - 1; }

std::vector<OptionId> option_set(int radius) {
  if (radius < 1) throw std::invalid_argument("option radius must be at least 1");
  std::vector<OptionId> out;
  out.reserve(static_cast<std::size_t>(option_count(radius)));
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx != 0 || dy != 0) out.push_back({static_cast<int>(out.size()), dx, dy});
  return out;
}

std::optional<int> index_of(int dx, int dy, int radius) {
  if ((dx == 0 && dy == 0) || std::abs(dx) > radius || std::abs(dy) > radius) return std::nullopt;
  const int side = 2 * radius + 1;
  const int raw = (dy + radius) * side + (dx + radius);
  const int center = radius * side + radius;
  return raw > center ? raw - 1 : raw;
}

OptionId option_at(int index, int radius) {
  if (index < 0 || index >= option_count(radius)) throw std::out_of_range("option index out of range");
  const int side = 2 * radius + 1;
  const int center = radius * side + radius;
  const int raw = index >= center ? index + 1 : index;
  return {index, raw % side - radius, raw / side - radius};
}

OptionInstance bind(const OptionId& id, Cell agent_cell, GridDims dims, int t) {
  return {id, dims.clamp({agent_cell.x + id.dx, agent_cell.y + id.dy}), t};
}

Action policy_action(Cell subgoal, Cell agent_cell) {
  const int dx = subgoal.x - agent_cell.x;
  const int dy = subgoal.y - agent_cell.y;
  if (dx == 0 && dy == 0) return Action::Stay;
  if (std::abs(dx) >= std::abs(dy)) return dx > 0 ? Action::E : Action::W;
  return dy > 0 ? Action::N : Action::S;
}

std::optional<int> relative_index(Cell subgoal, Cell agent_cell, int radius) {
  return index_of(subgoal.x - agent_cell.x, subgoal.y - agent_cell.y, radius);
}

std::vector<int> consistent_options(Cell agent_cell, Action action, int radius, GridDims dims) {
  std::vector<int> out;
  for (const OptionId& id : option_set(radius))
    if (policy_action(bind(id, agent_cell, dims), agent_cell) == action) out.push_back(id.index);
  return out;
}

ConsistencyTable::ConsistencyTable(int radius, GridDims dims) : radius_(radius), dims_(dims) {
  sets_.resize(static_cast<std::size_t>(dims.cells() * 5));
  for (int i = 0; i < dims.cells(); ++i)
    for (Action a : kAllActions)
      sets_[static_cast<std::size_t>(i * 5 + static_cast<int>(a))] =
          consistent_options(dims.cell(i), a, radius, dims);
}

}  // namespace mahrl::options

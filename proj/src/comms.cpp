#include "mahrl/comms.hpp"

#include <stdexcept>
#include <string>

namespace mahrl {

BroadcastBoard::BroadcastBoard(int n_agents)
    : live_(static_cast<std::size_t>(n_agents)),
      frozen_(static_cast<std::size_t>(n_agents)),
      last_announce_step_(static_cast<std::size_t>(n_agents), -1) {}

void BroadcastBoard::announce(int agent, const OptionInstance& option, int t) {
  auto& last = last_announce_step_.at(static_cast<std::size_t>(agent));
  if (last == t)
    throw std::logic_error("agent " + std::to_string(agent) + " announced twice in step " +
                           std::to_string(t));
  last = t;
  live_[static_cast<std::size_t>(agent)] = {option, t};
  log_.push_back({t, agent, option});
}

void BroadcastBoard::end_of_step(int /*t*/) { frozen_ = live_; }

DelayedView BroadcastBoard::view(int agent) const {
  DelayedView out;
  out.reserve(frozen_.size());
  for (std::size_t j = 0; j < frozen_.size(); ++j) {
    if (static_cast<int>(j) == agent) continue;
    out.push_back({static_cast<int>(j), frozen_[j].option, frozen_[j].announced_at});
  }
  return out;
}

std::vector<Cell> destinations(const DelayedView& view) {
  std::vector<Cell> out;
  for (const auto& e : view)
    if (e.option) out.push_back(e.option->subgoal);
  return out;
}

}  // namespace mahrl

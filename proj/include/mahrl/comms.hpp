#pragma once

#include <optional>
#include <vector>

#include "mahrl/options.hpp"

namespace mahrl {

struct ViewEntry {
  int agent = 0;
  std::optional<OptionInstance> option;
  /// Step of the announcement behind `option`; -1 when none.
  int announced_at = -1;
};

using DelayedView = std::vector<ViewEntry>;

struct Announcement {
  int t = 0;
  int agent = 0;
  OptionInstance option;
};

/// Reliable broadcast channel with exactly one step of delay. Announcements
/// go to live entries; readers only ever see the snapshot frozen by the last
/// end_of_step().
class BroadcastBoard {
 public:
  explicit BroadcastBoard(int n_agents);

  /// Throws std::logic_error if `agent` already announced during step `t`.
  void announce(int agent, const OptionInstance& option, int t);
  void end_of_step(int t);

  /// Frozen snapshot excluding `agent`, ordered by agent id.
  DelayedView view(int agent) const;

  int n_agents() const { return static_cast<int>(live_.size()); }
  const std::vector<Announcement>& log() const { return log_; }

 private:
  struct Entry {
    std::optional<OptionInstance> option;
    int announced_at = -1;
  };

  std::vector<Entry> live_;
  std::vector<Entry> frozen_;
  std::vector<int> last_announce_step_;
  std::vector<Announcement> log_;
};

/// Destination cells of the options present in a view.
std::vector<Cell> destinations(const DelayedView& view);

}  // namespace mahrl

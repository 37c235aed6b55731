#include <doctest.h>

#include <stdexcept>

#include <algorithm>
#include <set>

#include "mahrl/options.hpp"
#include "mahrl/rng.hpp"

using namespace mahrl;

TEST_CASE("option set sizes and order") {
  CHECK(options::option_count(1) == 8);
  CHECK(options::option_count(3) == 48);
  CHECK(options::option_set(1).size() == 8);
  const auto set = options::option_set(3);
  REQUIRE(set.size() == 48);
  CHECK(set == options::option_set(3));
  CHECK(set.front().dx == -3);
  CHECK(set.front().dy == -3);
  CHECK(set[1].dx == -2);
  CHECK(set[1].dy == -3);
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(set[i].index == static_cast<int>(i));
    CHECK_FALSE((set[i].dx == 0 && set[i].dy == 0));
    CHECK(options::index_of(set[i].dx, set[i].dy, 3) == static_cast<int>(i));
    CHECK(options::option_at(static_cast<int>(i), 3) == set[i]);
    if (i > 0) CHECK(std::make_pair(set[i - 1].dy, set[i - 1].dx) < std::make_pair(set[i].dy, set[i].dx));
  }
  CHECK_FALSE(options::index_of(0, 0, 3).has_value());
  CHECK_FALSE(options::index_of(4, 0, 3).has_value());
  CHECK_THROWS_AS(options::option_set(0), std::invalid_argument);
}

TEST_CASE("bind adds and clamps") {
  const GridDims g19{19, 19};
  auto id = [](int dx, int dy) { return options::option_at(*options::index_of(dx, dy, 3), 3); };
  CHECK(options::bind(id(2, -1), {5, 5}, g19).subgoal == Cell{7, 4});
  CHECK(options::bind(id(-3, -3), {0, 0}, g19).subgoal == Cell{0, 0});
  CHECK(options::bind(id(3, 0), {18, 18}, g19).subgoal == Cell{18, 18});
  const auto inst = options::bind(id(1, 1), {2, 2}, g19, 7);
  CHECK(inst.selected_at == 7);
  CHECK(inst.id == id(1, 1));
}

TEST_CASE("policy action examples") {
  CHECK(options::policy_action(Cell{5, 2}, Cell{2, 2}) == Action::E);
  CHECK(options::policy_action(Cell{2, 2}, Cell{2, 2}) == Action::Stay);
  CHECK(options::policy_action(Cell{2, 3}, Cell{0, 0}) == Action::N);
  CHECK(options::policy_action(Cell{2, 2}, Cell{0, 0}) == Action::E);
  CHECK(options::policy_action(Cell{0, 0}, Cell{0, 2}) == Action::S);
  CHECK(options::policy_action(Cell{0, 1}, Cell{3, 1}) == Action::W);
}

TEST_CASE("natural termination") {
  const GridDims g{8, 8};
  const auto inst = options::bind(options::option_at(*options::index_of(1, 0, 3), 3), {3, 3}, g);
  CHECK_FALSE(options::natural_termination(inst, {3, 3}));
  CHECK_FALSE(options::natural_termination(inst, {5, 3}));
  CHECK(options::natural_termination(inst, {4, 3}));
}

TEST_CASE("navigation arrives in exactly the Manhattan distance") {
  const GridDims g{8, 8};
  for (int a = 0; a < g.cells(); ++a)
    for (int b = 0; b < g.cells(); ++b) {
      Cell cur = g.cell(a);
      const Cell goal = g.cell(b);
      const int d = manhattan(cur, goal);
      for (int k = 0; k < d; ++k) {
        const Cell step = displacement(options::policy_action(goal, cur));
        const Cell next{cur.x + step.x, cur.y + step.y};
        REQUIRE(manhattan(next, goal) == manhattan(cur, goal) - 1);
        cur = next;
      }
      CHECK(cur == goal);
    }
}

TEST_CASE("relative index reproduces the destination") {
  const GridDims g{8, 8};
  CHECK_FALSE(options::relative_index({3, 3}, {3, 3}, 3).has_value());
  CHECK_FALSE(options::relative_index({7, 3}, {3, 3}, 3).has_value());
  for (int a = 0; a < g.cells(); ++a)
    for (int b = 0; b < g.cells(); ++b) {
      const Cell cell = g.cell(a), goal = g.cell(b);
      const auto idx = options::relative_index(goal, cell, 3);
      const bool in_reach = cell != goal && std::abs(goal.x - cell.x) <= 3 && std::abs(goal.y - cell.y) <= 3;
      CHECK(idx.has_value() == in_reach);
      if (idx) CHECK(options::bind(options::option_at(*idx, 3), cell, g).subgoal == goal);
    }
}

namespace {

std::set<int> brute_force(Cell cell, Action action, int radius, GridDims dims) {
  std::set<int> out;
  int index = 0;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx) {
      if (dx == 0 && dy == 0) continue;
      const Cell goal{std::clamp(cell.x + dx, 0, dims.width - 1), std::clamp(cell.y + dy, 0, dims.height - 1)};
      Action expected = Action::Stay;
      const int ex = goal.x - cell.x, ey = goal.y - cell.y;
      if (ex != 0 || ey != 0) {
        if (std::abs(ex) >= std::abs(ey))
          expected = ex > 0 ? Action::E : Action::W;
        else
          expected = ey > 0 ? Action::N : Action::S;
      }
      if (expected == action) out.insert(index);
      ++index;
    }
  return out;
}

}  // namespace

TEST_CASE("consistent options match brute force") {
  const GridDims g19{19, 19};
  const auto east = options::consistent_options({0, 0}, Action::E, 3, g19);
  CHECK(std::set<int>(east.begin(), east.end()) == brute_force({0, 0}, Action::E, 3, g19));
  Rng rng(11);
  for (int size : {5, 8, 19}) {
    const GridDims g{size, size};
    for (int i = 0; i < 200; ++i) {
      const Cell c = g.cell(rng.below(g.cells()));
      const Action a = kAllActions[static_cast<std::size_t>(rng.below(5))];
      const auto got = options::consistent_options(c, a, 3, g);
      CHECK(std::set<int>(got.begin(), got.end()) == brute_force(c, a, 3, g));
      CHECK(std::is_sorted(got.begin(), got.end()));
    }
  }
}

TEST_CASE("interior stay is empty; corner stay holds the aliased options") {
  const GridDims g{8, 8};
  CHECK(options::consistent_options({4, 4}, Action::Stay, 3, g).empty());
  const auto corner = options::consistent_options({0, 0}, Action::Stay, 3, g);
  for (int o : corner) CHECK(options::bind(options::option_at(o, 3), {0, 0}, g).subgoal == Cell{0, 0});
  CHECK(corner.size() == 15);
}

TEST_CASE("consistency sets partition the option set") {
  for (const GridDims g : {GridDims{5, 5}, GridDims{8, 6}}) {
    const options::ConsistencyTable table(3, g);
    for (int i = 0; i < g.cells(); ++i) {
      std::vector<int> all;
      for (Action a : kAllActions) {
        const auto& s = table.at(g.cell(i), a);
        CHECK(s == options::consistent_options(g.cell(i), a, 3, g));
        all.insert(all.end(), s.begin(), s.end());
      }
      std::sort(all.begin(), all.end());
      REQUIRE(all.size() == 48);
      for (int k = 0; k < 48; ++k) CHECK(all[static_cast<std::size_t>(k)] == k);
    }
  }
}

#include "mahrl/agents.hpp"

#include <stdexcept>

namespace mahrl {

std::string to_string(AgentKind kind) {
  switch (kind) {
    case AgentKind::OptionTerm: return "option";
    case AgentKind::GreedyTerm: return "greedy";
    case AgentKind::DynamicTerm: return "dynamic";
    case AgentKind::IqlGreedy: return "iql_greedy";
    case AgentKind::IqlDynamic: return "iql_dynamic";
  }
  return "?";
}

AgentKind parse_agent_kind(const std::string& s) {
  if (s == "option" || s == "option_term") return AgentKind::OptionTerm;
  if (s == "greedy" || s == "greedy_term") return AgentKind::GreedyTerm;
  if (s == "dynamic" || s == "dynamic_term") return AgentKind::DynamicTerm;
  if (s == "iql_greedy") return AgentKind::IqlGreedy;
  if (s == "iql_dynamic" || s == "iql_delta") return AgentKind::IqlDynamic;
  throw std::invalid_argument("unknown agent family '" + s + "'");
}

int argmax_option(std::span<const double> qoutput) {
  if (qoutput.size() < 2) throw std::invalid_argument("Q output needs option heads and T");
  const std::size_t n = qoutput.size() - 1;
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (qoutput[i] > qoutput[best]) best = i;
  return static_cast<int>(best);
}

int argmax_option_incumbent(std::span<const double> qoutput, int incumbent) {
  const int best = argmax_option(qoutput);
  const auto inc = static_cast<std::size_t>(incumbent);
  return qoutput[inc] >= qoutput[static_cast<std::size_t>(best)] ? incumbent : best;
}

Decision decide(const AgentFamily& family, std::span<const double> qoutput,
                std::optional<int> current, bool natural_terminated) {
  const auto select = [&] { return Decision{true, argmax_option(qoutput)}; };
  if (!current) return select();

  switch (family.kind) {
    case AgentKind::OptionTerm:
      return natural_terminated ? select() : Decision{};
    case AgentKind::GreedyTerm:
    case AgentKind::IqlGreedy: {
      const int pick = argmax_option_incumbent(qoutput, *current);
      return pick == *current ? Decision{} : Decision{true, pick};
    }
    case AgentKind::DynamicTerm:
    case AgentKind::IqlDynamic: {
      if (family.force_reselect_at_subgoal && natural_terminated) return select();
      const double q_term = qoutput.back();
      if (q_term > qoutput[static_cast<std::size_t>(*current)]) return select();
      return {};
    }
  }
  return {};
}

}  // namespace mahrl

#pragma once

#include <optional>
#include <span>
#include <string>

namespace mahrl {

enum class AgentKind { OptionTerm, GreedyTerm, DynamicTerm, IqlGreedy, IqlDynamic };

struct AgentFamily {
  AgentKind kind = AgentKind::DynamicTerm;
  /// Termination price; only read by the dynamic kinds.
  double delta = 0.0;
  /// Dynamic kinds re-select when the current option reaches its subgoal.
  bool force_reselect_at_subgoal = true;
  /// Option-termination only: force a re-selection every this many steps
  /// (0 = never). Used by the interrupt sweep.
  int interrupt_every = 0;

  bool broadcast_enabled() const {
    return kind != AgentKind::IqlGreedy && kind != AgentKind::IqlDynamic;
  }
  bool is_dynamic() const { return kind == AgentKind::DynamicTerm || kind == AgentKind::IqlDynamic; }
  /// Greedy-style kinds re-evaluate their option every step.
  bool is_greedy() const { return kind == AgentKind::GreedyTerm || kind == AgentKind::IqlGreedy; }
};

/// "option", "greedy", "dynamic", "iql_greedy", "iql_dynamic".
std::string to_string(AgentKind kind);
AgentKind parse_agent_kind(const std::string& s);

/// Lowest index wins ties. Looks only at the option heads.
int argmax_option(std::span<const double> qoutput);

/// Argmax over the option heads where `incumbent` wins ties.
int argmax_option_incumbent(std::span<const double> qoutput, int incumbent);

struct Decision {
  bool switch_option = false;
  int option = -1;
};

/// Pure decision rule over one Q output (|O| option heads followed by T).
/// `current` is the head of the option being executed, or nullopt when there
/// is none (first step, or its subgoal was reached and it has no head).
Decision decide(const AgentFamily& family, std::span<const double> qoutput,
                std::optional<int> current, bool natural_terminated);

}  // namespace mahrl

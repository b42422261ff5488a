from tcavoidsrc.safety.critic import (
    SafetyCritic,
    SafetyDataset,
    bellman_target,
    fit_safety_critic,
    monte_carlo_safety_value,
    safety_critic_loss,
    safety_targets,
    tabular_value_iteration,
)
from tcavoidsrc.safety.proxy import ClearanceSafetyProxy
from tcavoidsrc.safety.switching import SafetySwitch, SafetyValues, aggregate, switch_decision

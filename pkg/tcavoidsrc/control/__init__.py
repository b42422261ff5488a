from tcavoidsrc.control.constraints import (
    ConstraintLimits,
    KinematicTransition,
    body_collision,
    constraint_costs,
    tool_corner_violation,
)
from tcavoidsrc.control.controller import (
    Command,
    ControllerSettings,
    ControllerState,
    HybridController,
    HybridOutput,
    Policy,
    ZeroPolicy,
    build_policy_observation,
    hybrid_step,
    nominal_step,
    policy_step,
)
from tcavoidsrc.control.telemetry import TelemetryRecord, TelemetryWriter, write_telemetry

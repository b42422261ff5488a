from tcavoidsrc.kinematics.chain import BodySphere, Pose, SerialChain
from tcavoidsrc.kinematics.solver import (
    IkResult,
    body_spheres_world,
    clamp_to_limits,
    dls_ik_step,
    forward_kinematics,
    jacobian,
    rate_limit,
    solve_ik,
)
from tcavoidsrc.kinematics.tool_region import ToolRegion

from tcavoidsrc.world.scene import (
    Footprint,
    ObstacleSpec,
    Scenario,
    ScenarioRanges,
    Scene,
    Workspace,
    rasterize,
    sample_scenario,
    scene_clearance,
    step_obstacles,
)
from tcavoidsrc.world.voxel_grid import (
    VoxelGrid,
    brute_force_esdf,
    compute_esdf,
    esdf_gradient,
    esdf_sample,
    esdf_sample_with_gradient,
)

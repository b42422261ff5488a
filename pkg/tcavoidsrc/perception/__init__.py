from tcavoidsrc.perception.camera import CameraModel, depth_to_cloud, render_depth, write_pgm
from tcavoidsrc.perception.handoff import LatestSlot
from tcavoidsrc.perception.model import CollidableRegionNet, PerceptionOutput, build_grid_input, build_proprio
from tcavoidsrc.perception.observation import (
    Label,
    ObservationGrid,
    filter_self,
    fuse_memory,
    make_training_labels,
    voxelize_observation,
)

from tcavoidsrc.baselines.apf import ApfConfig, apf_forces, apf_step, repulsive_force
from tcavoidsrc.baselines.clearance import (
    PERCEPTION_KINDS,
    ClearanceSource,
    EsdfClearance,
    GroundTruthClearance,
    TrackClearance,
    box_distance,
    clearance_from_esdf,
    clearance_from_gt,
    clearance_from_tracks,
)
from tcavoidsrc.baselines.mppi import MppiConfig, MppiPlanner, MppiResult, mppi_weights
from tcavoidsrc.baselines.tracking import (
    ObstacleTrack,
    Tracker,
    TrackerSettings,
    cloud_to_occupancy,
    cluster_and_track,
    extract_clusters,
)

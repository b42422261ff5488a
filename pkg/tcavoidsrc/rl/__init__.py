from tcavoidsrc.rl.env import ReachEnv, RewardTerms, orientation_reward, reach_reward
from tcavoidsrc.rl.metrics import VoxelIoU
from tcavoidsrc.rl.observations import (
    OBSERVATION_KINDS,
    FusedMemoryObservation,
    LatentObservation,
    ObservationBuilder,
    RawGridObservation,
    SensorRig,
    StepContext,
    build_observation,
    observation_layout,
)
from tcavoidsrc.rl.policy import ActorCritic, TorchPolicy
from tcavoidsrc.rl.ppo import (
    CmdpConfig,
    P3OTrainer,
    RolloutBatch,
    RolloutCollector,
    UpdateStats,
    collect_rollouts,
    evaluate_policy,
    gae,
    p3o_update,
)
from tcavoidsrc.rl.toy_envs import ForbiddenStripEnv

from tcavoidsrc.netcore.checkpoint import load_checkpoint, load_grid, save_checkpoint, save_grid
from tcavoidsrc.netcore.engine import (
    adam_step,
    backward,
    check_gradients,
    enable_determinism,
    gradient_error,
    set_precision,
)
from tcavoidsrc.netcore.layers import (
    GaussianPolicyHead,
    Mlp,
    VoxelDecoder,
    VoxelEncoder,
    gaussian_entropy,
    gaussian_logprob,
    gaussian_sample,
)
from tcavoidsrc.netcore.stateful import CheckpointStateful, Stateful

"""Neural-network building blocks with exact gradients."""
from .mlp import Mlp, DenseLayer, MlpTape, mean_squared, prefixed, zero_like_grads
from .lstm import LstmStack, LstmState
from .optim import Adam, AdamState, adam_step
from .gradcheck import grad_check
from .checkpoint import (
    save_checkpoint,
    load_checkpoint,
    write_sidecar,
    read_sidecar,
    parameter_checksum,
)

from .tensor import (
    Tape,
    Tensor,
    absolute,
    add,
    as_tensor,
    clip,
    concat,
    conv2d,
    cos,
    cross,
    div,
    exp,
    is_grad_enabled,
    l1_loss,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    power,
    relu,
    reshape,
    sin,
    softmax,
    sqrt,
    stack,
    sub,
    tanh,
    transpose,
    tsum,
    where,
)
from .nn import MLP, CompactCNN, Conv2d, Linear, Module, bilinear_gather, global_avg_pool
from .optim import Adam, StepSchedule
from .checkpoint import assign_parameters, load_checkpoint, save_checkpoint
from .gradcheck import finite_difference_grad, check_gradient

__all__ = [name for name in dir() if not name.startswith("_")]

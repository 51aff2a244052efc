from .autograd import Var, backward
from .losses import bce, bce_mean, box_alignment_penalty
from .net import (BackboneSpec, forward_backbone, forward_conv_head,
                  forward_mlp, init_backbone, init_conv_head, init_mlp)
from .params import (ModelParams, fan_in_uniform, load_weights, save_weights,
                     sgd_step)

__all__ = [
    "Var", "backward", "bce", "bce_mean", "box_alignment_penalty",
    "BackboneSpec", "forward_backbone", "forward_conv_head", "forward_mlp",
    "init_backbone", "init_conv_head", "init_mlp",
    "ModelParams", "fan_in_uniform", "load_weights", "save_weights", "sgd_step",
]

from mmdfr.nn.checkpoint import load_network, save_network
from mmdfr.nn.gradcheck import gradient_check
from mmdfr.nn.losses import select_triplets, triplet_loss
from mmdfr.nn.network import Network, build_network
from mmdfr.nn.spec import (VARIANTS, LayerSpec, NetSpec, format_netspec, make_ablation_variant,
                           parse_netspec, shipped_spec, trace_shapes)
from mmdfr.nn.train import (TrainConfig, finetune_stage_triplet, lr_at_epoch, sgd_step,
                            train_stage_softmax)

__all__ = [
    "LayerSpec", "NetSpec", "Network", "TrainConfig", "VARIANTS", "build_network",
    "finetune_stage_triplet", "format_netspec", "gradient_check", "load_network",
    "lr_at_epoch", "make_ablation_variant", "parse_netspec", "save_network", "select_triplets",
    "sgd_step", "shipped_spec", "trace_shapes", "train_stage_softmax", "triplet_loss",
]

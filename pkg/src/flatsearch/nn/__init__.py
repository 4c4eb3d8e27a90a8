from .data import (LabeledDataset, area_resize, make_random_labels, make_rings,
                   read_cifar_binary, write_cifar_binary)
from .network import (build_network, layer_plan, logits, loss_and_grad, macs, param_count,
                      predict, weight_layout)
from .train import TrainConfig, asam_perturbation, eval_error, train

__all__ = [
    "LabeledDataset", "TrainConfig", "area_resize", "asam_perturbation", "build_network",
    "eval_error", "layer_plan", "logits", "loss_and_grad", "macs", "make_random_labels",
    "make_rings", "param_count", "predict", "read_cifar_binary", "train", "weight_layout",
    "write_cifar_binary",
]

from owapool.nn.checkpoint import load_checkpoint, save_checkpoint
from owapool.nn.layers import Conv2d, Dense, Dropout, Flatten, Layer, Pool, Relu, conv2d_forward
from owapool.nn.network import (LossParts, Network, finite_diff_grad_check, network_forward_backward,
                                network_loss, softmax_cross_entropy)
from owapool.nn.nin import Variant, build_nin, build_small_net, freeze_degenerate, make_pool
from owapool.nn.optim import SGD, TrainConfig, sgd_step, train

__all__ = [
    "Conv2d", "Dense", "Dropout", "Flatten", "Layer", "LossParts", "Network", "Pool", "Relu",
    "SGD", "TrainConfig", "Variant", "build_nin", "build_small_net", "conv2d_forward",
    "finite_diff_grad_check", "freeze_degenerate", "load_checkpoint", "make_pool",
    "network_forward_backward", "network_loss", "save_checkpoint", "sgd_step",
    "softmax_cross_entropy", "train",
]

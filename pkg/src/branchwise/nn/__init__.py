from .gradcheck import numerical_gradient, relative_error
from .layers import (LayerSpec, conv2d, dense, dropout, flatten, maxpool2d, relu, softmax,
                     output_shape)
from .losses import batch_cross_entropy, cross_entropy, per_sample_cross_entropy
from .network import (Network, ForwardCache, backward, build_network, evaluate, forward, freeze,
                      init_parameters, per_sample_losses, predict_proba, shape_chain)
from .optim import OptimizerConfig, PlateauScheduler, apply_gradients
from .params import ParameterStore

__all__ = [
    "LayerSpec", "conv2d", "dense", "dropout", "flatten", "maxpool2d", "relu", "softmax",
    "output_shape", "batch_cross_entropy", "cross_entropy", "per_sample_cross_entropy",
    "Network", "ForwardCache", "backward", "build_network", "evaluate", "forward", "freeze",
    "init_parameters", "per_sample_losses", "predict_proba", "shape_chain",
    "OptimizerConfig", "PlateauScheduler", "apply_gradients", "ParameterStore",
    "numerical_gradient", "relative_error",
]

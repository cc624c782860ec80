"""E-swish activation, a numpy neural-network core and the experiments built on it."""
from .activations import (
    ActivationSpec,
    Kind,
    activation_forward,
    activation_grad,
    eswish,
    eswish_grad,
    eswish_min,
    sigmoid_stable,
    swish,
)
from .network import Network, grad_check, softmax_cross_entropy

__version__ = "0.1.0"

"""Complex-valued reconfigurable diffractive optical neural networks.

Simulation with two free-space propagators, Gumbel-Softmax training of
discrete SLM grey levels, and complex-gradient adversarial inputs (C-FGSM).
"""

from .field import ComplexField, GridSpec, intensity, total_energy, zeros
from .propagation import Method, adjoint_propagate, build_kernel, propagate
from .slm import DeviceLUT, EncodedImage, GumbelLayer, builtin_lut, encode_image, load_lut
from .network import DetectorLayout, Mode, NetworkModel, forward, mse_loss, readout
from .autodiff import TrainConfig, adam_step, backward, train
from .adversarial import AttackConfig, attack_report, cfgsm

__version__ = "0.1.0"

__all__ = [
    "AttackConfig", "ComplexField", "DetectorLayout", "DeviceLUT", "EncodedImage", "GridSpec",
    "GumbelLayer", "Method", "Mode", "NetworkModel", "TrainConfig", "adam_step", "adjoint_propagate",
    "attack_report", "backward", "build_kernel", "builtin_lut", "cfgsm", "encode_image", "forward", "intensity",
    "load_lut", "mse_loss", "propagate", "readout", "total_energy", "train", "zeros",
]

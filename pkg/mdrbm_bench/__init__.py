"""Multi-layered discriminative RBMs with an untrained probabilistic-ELM layer.

This package provides the DRBM, PELM, GBRBM and MDRBM models, the comparison baselines and
a harness that measures classification accuracy under additive input noise.
"""

from .config import ExperimentConfig
from .core_math import RngStream
from .data import Dataset
from .drbm import DrbmParams
from .gbrbm import GbrbmParams
from .mdrbm import MdrbmModel
from .pelm import PelmParams

__version__ = "0.1.0"
__all__ = ["DrbmParams", "Dataset", "ExperimentConfig", "GbrbmParams", "MdrbmModel", "PelmParams", "RngStream"]

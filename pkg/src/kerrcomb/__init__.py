"""Quantum noise of Kerr microresonator combs: coupled-mode steady states,
linearized fluctuations, an exact Fock-space oracle and a photocurrent
processing pipeline."""

from .fluctuations import *  # noqa: F401,F403
from .fock import *  # noqa: F401,F403
from .model import *  # noqa: F401,F403
from .params import *  # noqa: F401,F403
from .steady import *  # noqa: F401,F403

__version__ = "0.1.0"

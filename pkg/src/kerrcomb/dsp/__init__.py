"""Photocurrent processing: traces, spectra, balancing and calibration."""

from .balance import *  # noqa: F401,F403
from .balance import __all__ as _balance_all
from .spectral import *  # noqa: F401,F403
from .spectral import __all__ as _spectral_all
from .traces import *  # noqa: F401,F403
from .traces import __all__ as _traces_all

__all__ = [*_traces_all, *_spectral_all, *_balance_all]

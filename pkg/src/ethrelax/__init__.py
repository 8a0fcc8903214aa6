"""Typicality-based ETH diagnostics for energy exchange between coupled spin systems."""

__version__ = "0.1.0"

from .kernels import BACKEND  # noqa: E402
from .model import ModelSpec, Geometry, build_model  # noqa: E402
from .funcfilter import EnergyWindow  # noqa: E402
from .estimator import EthReport, compose_report, fit_power_law  # noqa: E402
from .moddyn import ModSpec, prepare_mod_state, relaxation_trace  # noqa: E402

__all__ = [
    "__version__",
    "BACKEND",
    "ModelSpec",
    "Geometry",
    "build_model",
    "EnergyWindow",
    "EthReport",
    "compose_report",
    "fit_power_law",
    "ModSpec",
    "prepare_mod_state",
    "relaxation_trace",
]

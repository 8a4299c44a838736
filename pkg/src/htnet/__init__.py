"""Bandwidth-sharing networks in heavy traffic: allocation, fluid and diffusion analysis."""

__version__ = "0.1.0"

from .allocation import AllocationResult, UtilitySpec, solve_allocation  # noqa: E402
from .costfix import CostModel, duality_roundtrip, fixed_point  # noqa: E402
from .desim import DistributionSpec, PolicySpec, SamplePath, simulate  # noqa: E402
from .errors import (  # noqa: E402
    ConfigError,
    HeavyTrafficError,
    HtnetError,
    NumericalError,
    PreconditionError,
    SingleBottleneckError,
)
from .fluid import FluidTrajectory, integrate_fluid  # noqa: E402
from .model import NetworkTopology, ScalingSequenceSpec, TrafficProfile, classify_links  # noqa: E402
from .planning import check_resource_pooling, solve_static_lp  # noqa: E402
from .scaling import ScaledPath, diffusion_scale, skorohod_1d  # noqa: E402

__all__ = [
    "AllocationResult", "ConfigError", "CostModel", "DistributionSpec", "FluidTrajectory",
    "HeavyTrafficError", "HtnetError", "NetworkTopology", "NumericalError", "PolicySpec",
    "PreconditionError", "SamplePath", "ScaledPath", "ScalingSequenceSpec", "SingleBottleneckError",
    "TrafficProfile", "UtilitySpec", "check_resource_pooling", "classify_links", "diffusion_scale",
    "duality_roundtrip", "fixed_point", "integrate_fluid", "simulate", "skorohod_1d", "solve_allocation",
    "solve_static_lp",
]

"""Desk-scale simulator and analysis library for cell-free ISAC networks."""

__version__ = "0.1.0"

from .scenario import (
    SystemConfig,
    TargetSpec,
    SystemGeometry,
    place_entities,
    pathloss_linear,
    noise_power_watts,
    load_config,
)
from .channel import (
    ChannelSet,
    HardeningStats,
    sample_channels,
    hardening_stats,
    favorable_propagation_stats,
)
from .beamforming import (
    PrecoderSet,
    SymbolBlock,
    mrt_precoders,
    mrc_combiners,
    steering_vector,
    isac_superposition,
    normalize_per_ap_power,
)

__all__ = [
    "SystemConfig",
    "TargetSpec",
    "SystemGeometry",
    "place_entities",
    "pathloss_linear",
    "noise_power_watts",
    "load_config",
    "ChannelSet",
    "HardeningStats",
    "sample_channels",
    "hardening_stats",
    "favorable_propagation_stats",
    "PrecoderSet",
    "SymbolBlock",
    "mrt_precoders",
    "mrc_combiners",
    "steering_vector",
    "isac_superposition",
    "normalize_per_ap_power",
]

"""Intensity-correlation characterization for decoy-state QKD sources.

The package measures how the mean photon number of a modulated pulsed
source depends on the recently emitted intensity settings, quantifies the
deviation, and propagates it into decoy-state security bounds.
"""

from .errors import (
    ConfigError,
    CorrkitError,
    DataError,
    DomainError,
    InfeasibleError,
)
from .model import (
    ExperimentConfig,
    IntensityLabel,
    SourceSpec,
    decode_pattern,
    encode_pattern,
    parse_config,
    pattern_name,
)
from .photon_stats import (
    AfterPulseModel,
    click_probability,
    invert_click_rate,
    linearity_report,
)

__version__ = "0.1.0"

__all__ = [
    "AfterPulseModel",
    "ConfigError",
    "CorrkitError",
    "DataError",
    "DomainError",
    "ExperimentConfig",
    "InfeasibleError",
    "IntensityLabel",
    "SourceSpec",
    "click_probability",
    "decode_pattern",
    "encode_pattern",
    "invert_click_rate",
    "linearity_report",
    "parse_config",
    "pattern_name",
    "__version__",
]

"""Inference-time dropout-rate adaptation driven by information-loss feedback."""

from ratein.adapt import RateInConfig, RateInReport, SiteResult, adapt_rates, adapt_rates_batch
from ratein.info import InfoLossSpec, MIEstimatorConfig, measure_loss
from ratein.mc import McSummary, mc_classify, mc_run
from ratein.nn import LayerSpec, Network, forward, init_network, regression_arch
from ratein.policies import DropoutPolicy

__all__ = [
    "DropoutPolicy",
    "InfoLossSpec",
    "LayerSpec",
    "McSummary",
    "MIEstimatorConfig",
    "Network",
    "RateInConfig",
    "RateInReport",
    "SiteResult",
    "adapt_rates",
    "adapt_rates_batch",
    "forward",
    "init_network",
    "mc_classify",
    "mc_run",
    "measure_loss",
    "regression_arch",
]

__version__ = "0.1.0"

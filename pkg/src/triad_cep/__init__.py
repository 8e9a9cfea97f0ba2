"""Cause/traffic/effect event aggregation and correlation for industrial networks."""

from .correlate import CorrelationConfig, EndpointMatch, burst_split, correlate
from .aggregate import aggregate_flows, build_cause_trace, build_effect_trace
from .topology import build_topology, degree_profile
from .rules import RuleConfig, run_all_rules
from .pipeline import analyze, run_pipeline, PipelineInputs
from .scenario import AnomalyKind, AnomalySpec, Profile, ScenarioSpec, generate

__version__ = "0.1.0"

__all__ = [
    "CorrelationConfig",
    "EndpointMatch",
    "burst_split",
    "correlate",
    "aggregate_flows",
    "build_cause_trace",
    "build_effect_trace",
    "build_topology",
    "degree_profile",
    "RuleConfig",
    "run_all_rules",
    "analyze",
    "run_pipeline",
    "PipelineInputs",
    "AnomalyKind",
    "AnomalySpec",
    "Profile",
    "ScenarioSpec",
    "generate",
]

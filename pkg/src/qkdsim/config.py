"""Flat key-value run configuration files (YAML mapping of scalars).

Every key is optional and defaults to the characterised desk-scale values;
unknown keys are rejected so typos cannot silently fall back to defaults.
The parsed mapping is echoed into reports for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import yaml

from .finite_key import SecurityBudget
from .session import SessionConfig
from .source import SourceModel

_SOURCE_KEYS = ("clock_rate", "p_det", "multiphoton_ratio", "dark_count_prob",
                "pol_error_prob", "mu", "g2_0", "i_sat", "p_sat")
_SESSION_KEYS = ("block_pulses", "target_valid_bits", "t_transmit",
                 "t_process", "qber_sample_fraction", "n_block", "code_rate",
                 "ldpc_seed", "degree_distribution", "max_decode_iters",
                 "workers", "check_len", "max_blocks")
_SECURITY_KEYS = ("eps_total", "eps_smooth", "eps_pa", "eps_ec", "eps_pe")
_RUN_KEYS = ("seed", "session_id")

_INT_KEYS = {"block_pulses", "target_valid_bits", "n_block", "ldpc_seed",
             "max_decode_iters", "workers", "check_len", "max_blocks",
             "seed", "session_id"}


@dataclass(frozen=True)
class RunConfig:
    model: SourceModel
    session: SessionConfig
    seed: int = 0
    session_id: int = 0
    raw: dict = field(default_factory=dict)


def parse_run_config(mapping: dict | None) -> RunConfig:
    mapping = dict(mapping or {})
    known = set(_SOURCE_KEYS) | set(_SESSION_KEYS) | set(_SECURITY_KEYS) \
        | set(_RUN_KEYS)
    unknown = set(mapping) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")

    def take(keys):
        out = {}
        for k in keys:
            if k in mapping:
                v = mapping[k]
                out[k] = int(v) if k in _INT_KEYS else v
        return out

    security = SecurityBudget(**take(_SECURITY_KEYS))
    session = SessionConfig(security=security, **take(_SESSION_KEYS))
    model = SourceModel(**take(_SOURCE_KEYS))
    return RunConfig(model=model, session=session,
                     seed=int(mapping.get("seed", 0)),
                     session_id=int(mapping.get("session_id", 0)),
                     raw=mapping)


def load_run_config(path) -> RunConfig:
    with open(path) as fh:
        mapping = yaml.safe_load(fh)
    if mapping is not None and not isinstance(mapping, dict):
        raise ValueError("config file must be a flat key-value mapping")
    return parse_run_config(mapping)

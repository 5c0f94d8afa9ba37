"""Built-in experiment scenarios.

A two-class baseline pool plus eleven quadratic variations (volatility,
terminal wealth weight, premium loading, income, and fee compositions) and
one shifted-HARA scenario. The serialized table is pinned by a golden file in
the test suite so parameter drift cannot pass silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

from .deepbsde import TrainingConfig
from .model import HaraMixture, MarketParams, Quadratic, build_market, reward_from_config

__all__ = ["CaseSpec", "CASE_IDS", "case_table", "case_table_json", "make_case",
           "penalty_default", "training_profile"]

_BASE_MARKET = {
    "H": 2,
    "r": 0.03,
    "T": 1.0,
    "kappa": [0.5, 0.5],
    "sigma": [0.3, 0.3],
    "d": [0.05, 0.05],
    "e": [0.01, 0.01],
    "net_income": [0.02, 0.02],
    "omega": [0.5, 0.5],
    "xi_mean": [2.0, 2.0],
    "xi_var": [0.0, 0.0],
}

_BASE_REWARD = {
    "type": "quadratic",
    "Q": [1.0, 1.0],
    "P": [1.0, 1.0],
    "R": [0.1, 0.1],
    "S": [0.6, 0.6],
    "gamma": [1.0, 1.0],
}

_CASE_MARKET_DELTAS = {
    "1a": {"sigma": [0.1, 0.3]},
    "1b": {"sigma": [0.1, 0.3], "omega": [0.8, 0.2]},
    "1c": {"sigma": [0.1, 0.3], "omega": [0.2, 0.8]},
    "2a": {},
    "2b": {"omega": [0.8, 0.2]},
    "2c": {"omega": [0.2, 0.8]},
    "3a": {"kappa": [0.1, 0.5]},
    "3b": {"kappa": [0.1, 0.5]},
    "4a": {"net_income": [0.02, 0.1]},
    "4b": {"net_income": [0.02, 0.1], "e": [0.1, 0.01]},
    "4c": {"net_income": [0.02, 0.1], "e": [0.01, 0.1]},
    "5": {"kappa": [0.08, 0.08]},
}

_CASE_REWARD_DELTAS = {
    "1a": {},
    "1b": {},
    "1c": {},
    "2a": {"gamma": [1.0, 1.6]},
    "2b": {"gamma": [1.0, 1.6]},
    "2c": {"gamma": [1.0, 1.6]},
    "3a": {"gamma": [1.6, 1.6]},
    "3b": {"gamma": [1.0, 1.0]},
    "4a": {},
    "4b": {},
    "4c": {},
    "5": {
        "type": "hara_mixture",
        "gamma": [0.5, 3.0],
        "a": [1.0, 1.0],
        "b": [5.0, 5.0],
        "Q": [1.0, 1.0],
        "P": [1.0, 1.0],
        "R": [0.1, 0.1],
        "B": [2.5, 2.5],
    },
}

_PENALTY_DEFAULTS = {"1a": 10.0, "1b": 10.0, "1c": 10.0, "4b": 10.0, "4c": 10.0}

CASE_IDS = tuple(_CASE_MARKET_DELTAS)
QUADRATIC_CASE_IDS = tuple(c for c in CASE_IDS if c != "5")


def penalty_default(case_id: str) -> float:
    return _PENALTY_DEFAULTS.get(case_id, 1.0)


def case_table() -> dict:
    """Full scenario table: market record, reward record, penalty weight."""
    table = {}
    for cid in CASE_IDS:
        market = dict(_BASE_MARKET)
        market.update(_CASE_MARKET_DELTAS[cid])
        reward = dict(_BASE_REWARD)
        delta = _CASE_REWARD_DELTAS[cid]
        if delta.get("type") == "hara_mixture":
            reward = dict(delta)
        else:
            reward.update(delta)
        table[cid] = {"market": market, "reward": reward,
                      "penalty": _PENALTY_DEFAULTS.get(cid, 1.0)}
    return table


def case_table_json() -> str:
    """Canonical serialization (pinned byte-for-byte by the golden file)."""
    return json.dumps(case_table(), sort_keys=True, indent=2) + "\n"


@dataclass(frozen=True)
class CaseSpec:
    case_id: str
    constrained: bool = True
    overrides: dict = field(default_factory=dict)

    def build(self):
        """Returns (MarketParams, reward, default penalty weight)."""
        if self.case_id not in CASE_IDS:
            raise KeyError(f"unknown case {self.case_id!r}; known: {', '.join(CASE_IDS)}")
        entry = case_table()[self.case_id]
        market = dict(entry["market"])
        market.update({k: v for k, v in self.overrides.items() if k in _BASE_MARKET})
        if self.constrained:
            market["constraint"] = [0.0, 1.0]
        params = build_market(market)
        reward_block = dict(entry["reward"])
        reward_block.update(
            {k: v for k, v in self.overrides.items() if k not in _BASE_MARKET}
        )
        reward = reward_from_config(reward_block, params.H, params.T)
        return params, reward, entry["penalty"]


def make_case(case_id: str, constrained: bool = True, overrides: Optional[dict] = None):
    return CaseSpec(case_id, constrained, overrides or {}).build()


def training_profile(name: str, **kwargs) -> TrainingConfig:
    """Named resource profiles: ``desk`` (quick) and ``paper`` (full scale)."""
    if name == "desk":
        base = dict(n_paths=2000, n_steps=100, iterations=300)
    elif name == "paper":
        base = dict(n_paths=10_000, n_steps=100, iterations=1000)
    else:
        raise KeyError(f"unknown profile {name!r}")
    base.update(kwargs)
    return TrainingConfig(**base)

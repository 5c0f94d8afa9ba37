"""Market parameters, reward families, sharing matrices, and solvability checks.

Everything here is immutable after construction and safe for concurrent reads.
All eigenvalue statements about a square matrix A refer to the symmetrized
matrix (A + A^T)/2, and the spectral norm is the largest singular value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

__all__ = [
    "Interval",
    "KappaBelowFee",
    "WeightMismatch",
    "NonPositiveShare",
    "SingularMatrix",
    "DegenerateSurvival",
    "MarketParams",
    "SharingMatrices",
    "Quadratic",
    "HaraMixture",
    "SurvivalSpec",
    "SurvivalCoefficients",
    "WellposednessReport",
    "ConditionEntry",
    "build_market",
    "sharing_matrices",
    "check_wellposedness",
    "survival_transform",
    "load_config",
]


class KappaBelowFee(ValueError):
    """Risk premium rate does not exceed the proportional management fee."""


class WeightMismatch(ValueError):
    """Share weights do not satisfy sum_h pi^h omega^h = 1."""


class NonPositiveShare(ValueError):
    """A surplus share weight pi^h is not strictly positive."""


class SingularMatrix(ArithmeticError):
    """Rank-one update denominator degenerate; cannot occur for valid parameters."""


class DegenerateSurvival(ValueError):
    """Survival weights collapse: sum_l pi^l omega^l s^l(t) <= 0 or s^h(t) <= 0."""


@dataclass(frozen=True)
class Interval:
    """Closed admissible interval [lo, hi] for the insurance proportion."""

    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError("interval needs lo < hi")

    def clamp(self, x):
        return np.clip(x, self.lo, self.hi)


def _vec(x, H, name) -> np.ndarray:
    out = np.asarray(x, dtype=float)
    if out.ndim == 0:
        out = np.full(H, float(out))
    if out.shape != (H,):
        raise ValueError(f"{name} must be scalar or length {H}")
    if not np.all(np.isfinite(out)):
        raise ValueError(f"{name} contains non-finite entries")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class MarketParams:
    """Per-class economic parameters of the insurance pool.

    kappa is the risk-premium rate (premium loading times expected loss rate),
    net_income the income rate net of expected losses before any pool
    transfers, and l the income rate after membership fees and the expected
    fee redistribution. pi are surplus share weights, omega the adjusted class
    proportions, normalized so that sum_h pi^h omega^h = 1.
    """

    H: int
    r: float
    T: float
    kappa: np.ndarray
    sigma: np.ndarray
    d: np.ndarray
    e: np.ndarray
    d_e: np.ndarray
    net_income: np.ndarray
    pi: np.ndarray
    omega: np.ndarray
    l: np.ndarray
    xi_mean: np.ndarray
    xi_var: np.ndarray
    constraint: Optional[Interval] = None
    zero_sharing: bool = False

    def as_record(self) -> dict:
        """Plain JSON-safe record; build_market(record) reproduces the object."""
        rec = {
            "H": self.H,
            "r": self.r,
            "T": self.T,
            "kappa": list(self.kappa),
            "sigma": list(self.sigma),
            "d": list(self.d),
            "e": list(self.e),
            "d_e": list(self.d_e),
            "net_income": list(self.net_income),
            "pi": list(self.pi),
            "omega": list(self.omega),
            "xi_mean": list(self.xi_mean),
            "xi_var": list(self.xi_var),
            "zero_sharing": self.zero_sharing,
        }
        if self.constraint is not None:
            rec["constraint"] = [self.constraint.lo, self.constraint.hi]
        return rec


def build_market(config: dict) -> MarketParams:
    """Construct validated MarketParams from a raw parameter record.

    When ``pi`` is omitted it is derived from the membership fees as
    pi^h = e^h / sum_k e^k omega^k, and the fixed management fee defaults to
    d_e^h = 0.1 e^h. When ``pi`` is given explicitly it wins and the fees only
    feed the net income rate l.
    """
    cfg = dict(config)
    omega_raw = np.atleast_1d(np.asarray(cfg["omega"], dtype=float))
    H = int(cfg.get("H", omega_raw.shape[0]))
    omega = _vec(cfg["omega"], H, "omega")
    kappa = _vec(cfg["kappa"], H, "kappa")
    sigma = _vec(cfg["sigma"], H, "sigma")
    d = _vec(cfg.get("d", 0.0), H, "d")
    e = _vec(cfg.get("e", 0.0), H, "e")
    d_e = _vec(cfg["d_e"], H, "d_e") if "d_e" in cfg else _vec(0.1 * e, H, "d_e")
    net_income = _vec(cfg.get("net_income", 0.0), H, "net_income")

    if np.any(kappa - d <= 0.0):
        raise KappaBelowFee("kappa^h must exceed d^h for every class")

    if "pi" in cfg and cfg["pi"] is not None:
        pi = _vec(cfg["pi"], H, "pi")
    else:
        denom = float(np.dot(e, omega))
        if denom <= 0.0:
            raise NonPositiveShare("cannot derive pi from zero membership fees")
        pi = _vec(e / denom, H, "pi")

    if np.any(pi <= 0.0):
        raise NonPositiveShare("every pi^h must be strictly positive")
    if abs(float(np.dot(pi, omega)) - 1.0) > 1e-9:
        raise WeightMismatch(
            f"sum pi*omega = {float(np.dot(pi, omega)):.12g}, expected 1"
        )

    l = net_income - e + pi * float(np.dot(omega, e - d_e))

    constraint = None
    if cfg.get("constraint") is not None:
        lo, hi = cfg["constraint"]
        constraint = Interval(float(lo), float(hi))

    return MarketParams(
        H=H,
        r=float(cfg["r"]),
        T=float(cfg["T"]),
        kappa=kappa,
        sigma=sigma,
        d=d,
        e=e,
        d_e=d_e,
        net_income=net_income,
        pi=pi,
        omega=omega,
        l=_vec(l, H, "l"),
        xi_mean=_vec(cfg.get("xi_mean", 0.0), H, "xi_mean"),
        xi_var=_vec(cfg.get("xi_var", 0.0), H, "xi_var"),
        constraint=constraint,
        zero_sharing=bool(cfg.get("zero_sharing", False)),
    )


@dataclass(frozen=True)
class SharingMatrices:
    """Derived matrices of the pool: K, Sigma diagonal, Pi rank one, M = Pi(Pi-K)^-1."""

    K: np.ndarray
    Sigma: np.ndarray
    Pi: np.ndarray
    Pi_minus_K_inv: np.ndarray
    M: np.ndarray

    def __post_init__(self):
        for a in (self.K, self.Sigma, self.Pi, self.Pi_minus_K_inv, self.M):
            a.setflags(write=False)


def sharing_matrices(params: MarketParams) -> SharingMatrices:
    """Build the sharing matrices with a rank-one (Sherman-Morrison) inverse.

    (Pi - K)^-1 = -K^-1 - K^-1 pi v^T K^-1 / (1 - v^T K^-1 pi) with
    v_k = omega^k (kappa^k - d^k); the result is cross-checked against a dense
    inverse to 1e-10.
    """
    H = params.H
    K = np.diag(params.kappa)
    Sigma = np.diag(params.sigma)
    if params.zero_sharing:
        Pi = np.zeros((H, H))
        inv = np.diag(-1.0 / params.kappa)
        M = np.zeros((H, H))
        return SharingMatrices(K, Sigma, Pi, inv, M)

    upsilon = params.omega * (params.kappa - params.d)
    Pi = np.outer(params.pi, upsilon)
    kinv = 1.0 / params.kappa
    denom = 1.0 - float(np.dot(upsilon * kinv, params.pi))
    if denom <= 0.0:
        raise SingularMatrix("v^T K^-1 pi >= 1; excluded by the weight identity")
    inv = -np.diag(kinv) - np.outer(kinv * params.pi, upsilon * kinv) / denom
    residual = (Pi - K) @ inv - np.eye(H)
    if np.max(np.abs(residual)) > 1e-10:
        raise SingularMatrix("rank-one inverse failed its identity check")
    M = Pi @ inv
    return SharingMatrices(K, Sigma, Pi, inv, M)


def sym_min_eig(A) -> float:
    """Smallest eigenvalue of (A + A^T)/2."""
    return float(np.linalg.eigvalsh((A + A.T) / 2.0)[0])


def sym_max_eig(A) -> float:
    """Largest eigenvalue of (A + A^T)/2."""
    return float(np.linalg.eigvalsh((A + A.T) / 2.0)[-1])


def spectral_norm(A) -> float:
    return float(np.linalg.norm(A, 2))


def closed_form_min_eig_I_minus_M(params: MarketParams) -> float:
    """Closed form of the smallest eigenvalue of the symmetrized I - M^T.

    Equals (2 - s - q) / (2 - 2 s) with s = sum_h pi^h omega^h (k^h-d^h)/k^h
    and q = sqrt(sum_h (pi^h)^2) * sqrt(sum_h (omega^h (k^h-d^h)/k^h)^2); the
    denominator is positive whenever kappa > d and the weights are normalized.

    A single class is special: a rank-one update of a 1x1 matrix has no
    kernel, so the smallest eigenvalue of the symmetrized rank-two term is
    2s rather than s - q, giving 1 / (1 - s).
    """
    if params.zero_sharing:
        return 1.0
    ratio = params.omega * (params.kappa - params.d) / params.kappa
    s = float(np.dot(params.pi, ratio))
    if params.H == 1:
        return 1.0 / (1.0 - s)
    q = float(np.sqrt(np.sum(params.pi ** 2) * np.sum(ratio ** 2)))
    return (2.0 - s - q) / (2.0 - 2.0 * s)


# ---------------------------------------------------------------------------
# Reward families
# ---------------------------------------------------------------------------


def _as_curve(x, H) -> Callable[[float], np.ndarray]:
    """Wrap scalars / per-class vectors / callables as a t -> (H,) curve."""
    if callable(x):
        def curve(t, _f=x, _H=H):
            out = np.asarray(_f(t), dtype=float)
            return np.full(_H, float(out)) if out.ndim == 0 else out

        return curve
    const = np.asarray(x, dtype=float)
    if const.ndim == 0:
        const = np.full(H, float(const))
    const.setflags(write=False)
    return lambda t, _c=const: _c


@dataclass(frozen=True)
class Quadratic:
    """Running reward -Q/2 (x - S z)^2 - P/2 (v - R vbar)^2 and terminal
    reward gamma x - Q_T/2 (x - S_T z)^2, with bounded deterministic curves
    Q, P, R, S on [0, T] (constants are wrapped as constant curves)."""

    H: int
    Q: Callable[[float], np.ndarray]
    P: Callable[[float], np.ndarray]
    R: Callable[[float], np.ndarray]
    S: Callable[[float], np.ndarray]
    gamma: np.ndarray
    T: float

    kind = "quadratic"

    @classmethod
    def make(cls, H, Q, P, R, S, gamma, T):
        spec = cls(
            H=H,
            Q=_as_curve(Q, H),
            P=_as_curve(P, H),
            R=_as_curve(R, H),
            S=_as_curve(S, H),
            gamma=_vec(gamma, H, "gamma"),
            T=float(T),
        )
        if np.any(spec.Q(0.0) <= 0.0) or np.any(spec.P(0.0) <= 0.0):
            raise ValueError("Q and P must be strictly positive")
        return spec

    # Running reward gradients; x is (H, n) and z is (H,) or (H, n).
    def running_fx(self, t, x, z):
        return -self.Q(t)[:, None] * (x - self.S(t)[:, None] * np.atleast_2d(z.T).T)

    def running_fxx(self, t, x):
        return -self.Q(t)[:, None] * np.ones_like(x)

    def running_fxz(self, t):
        return self.Q(t) * self.S(t)

    def terminal_gx(self, x, z):
        QT = self.Q(self.T)
        ST = self.S(self.T)
        return self.gamma[:, None] - QT[:, None] * (x - ST[:, None] * np.atleast_2d(z.T).T)

    def terminal_gxx(self, x):
        return -self.Q(self.T)[:, None] * np.ones_like(x)

    def terminal_gxz(self):
        return self.Q(self.T) * self.S(self.T)

    # Reward values (used by the finite-population objective estimator).
    def running_f(self, t, h, x, z, v, vbar):
        return (
            -0.5 * self.Q(t)[h] * (x - self.S(t)[h] * z) ** 2
            - 0.5 * self.P(t)[h] * (v - self.R(t)[h] * vbar) ** 2
        )

    def terminal_g(self, h, x, z):
        return self.gamma[h] * x - 0.5 * self.Q(self.T)[h] * (x - self.S(self.T)[h] * z) ** 2


@dataclass(frozen=True)
class HaraMixture:
    """Shifted HARA utility minus a quadratic wealth anchor, at constant
    coefficients; the strategy channel keeps the -P/2 (v - R vbar)^2 penalty.

    For x >= 0 the utility part is gamma/(1-gamma) ((a x / gamma) + b)^(1-gamma)
    centered to vanish at x = 0; for x < 0 it continues linearly with slope
    a b^-gamma, so the x-gradient is continuous at 0.
    """

    H: int
    gamma: np.ndarray
    a: np.ndarray
    b: np.ndarray
    Qc: np.ndarray
    Pc: np.ndarray
    Rc: np.ndarray
    B: np.ndarray
    T: float

    kind = "hara_mixture"

    @classmethod
    def make(cls, H, gamma, a, b, Q, P, R, B, T):
        spec = cls(
            H=H,
            gamma=_vec(gamma, H, "gamma"),
            a=_vec(a, H, "a"),
            b=_vec(b, H, "b"),
            Qc=_vec(Q, H, "Q"),
            Pc=_vec(P, H, "P"),
            Rc=_vec(R, H, "R"),
            B=_vec(B, H, "B"),
            T=float(T),
        )
        if np.any(spec.b <= 0.0) or np.any(spec.a <= 0.0):
            raise ValueError("a and b must be strictly positive")
        if np.any(spec.gamma == 1.0) or np.any(spec.gamma <= 0.0):
            raise ValueError("gamma must be positive and different from 1")
        return spec

    # Constant curves, same call shape as the quadratic family.
    def Q(self, t):
        return self.Qc

    def P(self, t):
        return self.Pc

    def R(self, t):
        return self.Rc

    def S(self, t):
        return np.zeros(self.H)

    def _utility_slope(self, x):
        g = self.gamma[:, None]
        a = self.a[:, None]
        b = self.b[:, None]
        pos = x >= 0.0
        base = np.where(pos, a * x / g + b, b)
        return np.where(pos, a * base ** (-g), a * b ** (-g) * np.ones_like(x))

    def _utility_curvature(self, x):
        g = self.gamma[:, None]
        a = self.a[:, None]
        b = self.b[:, None]
        pos = x >= 0.0
        base = np.where(pos, a * x / g + b, b)
        return np.where(pos, -(a ** 2) * base ** (-g - 1.0), np.zeros_like(x))

    def running_fx(self, t, x, z):
        return self._utility_slope(x) - self.Qc[:, None] * (x - self.B[:, None])

    def running_fxx(self, t, x):
        return self._utility_curvature(x) - self.Qc[:, None] * np.ones_like(x)

    def running_fxz(self, t):
        return np.zeros(self.H)

    def terminal_gx(self, x, z):
        return self.running_fx(self.T, x, z)

    def terminal_gxx(self, x):
        return self.running_fxx(self.T, x)

    def terminal_gxz(self):
        return np.zeros(self.H)

    def _utility_value(self, h, x):
        g, a, b = self.gamma[h], self.a[h], self.b[h]
        x = np.asarray(x, dtype=float)
        pos = x >= 0.0
        curved = g / (1.0 - g) * ((a * np.where(pos, x, 0.0) / g + b) ** (1.0 - g) - b ** (1.0 - g))
        linear = a * b ** (-g) * x
        return np.where(pos, curved, linear)

    def running_f(self, t, h, x, z, v, vbar):
        return (
            self._utility_value(h, x)
            - 0.5 * self.Qc[h] * (x - self.B[h]) ** 2
            - 0.5 * self.Pc[h] * (v - self.Rc[h] * vbar) ** 2
        )

    def terminal_g(self, h, x, z):
        return self._utility_value(h, x) - 0.5 * self.Qc[h] * (x - self.B[h]) ** 2


# ---------------------------------------------------------------------------
# Survival model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SurvivalSpec:
    """Per-class survival curves s^h(t) with s^h(0) = 1, non-increasing.

    Either constant hazards (exponential curves) or tabulated knots with
    linear interpolation.
    """

    H: int
    hazards: Optional[np.ndarray] = None
    knots_t: Optional[np.ndarray] = None
    knots_s: Optional[np.ndarray] = None  # shape (H, len(knots_t))

    @classmethod
    def exponential(cls, hazards):
        hz = np.atleast_1d(np.asarray(hazards, dtype=float))
        if np.any(hz < 0.0):
            raise ValueError("hazards must be non-negative")
        hz.setflags(write=False)
        return cls(H=hz.shape[0], hazards=hz)

    @classmethod
    def tabulated(cls, knots_t, knots_s):
        t = np.asarray(knots_t, dtype=float)
        s = np.atleast_2d(np.asarray(knots_s, dtype=float))
        if s.shape[1] != t.shape[0]:
            raise ValueError("knots_s must have one row per class, one column per knot")
        if np.any(np.abs(s[:, 0] - 1.0) > 1e-12):
            raise ValueError("s(0) must equal 1")
        if np.any(np.diff(s, axis=1) > 1e-12):
            raise ValueError("survival curves must be non-increasing")
        t.setflags(write=False)
        s.setflags(write=False)
        return cls(H=s.shape[0], knots_t=t, knots_s=s)

    def survival(self, t) -> np.ndarray:
        """s^h(t) for all classes, shape (H,)."""
        if self.hazards is not None:
            return np.exp(-self.hazards * float(t))
        return np.array(
            [np.interp(float(t), self.knots_t, self.knots_s[h]) for h in range(self.H)]
        )


@dataclass(frozen=True)
class SurvivalCoefficients:
    """Effective coefficients of the exit-adjusted model at one time point."""

    l_tilde: np.ndarray   # exit-adjusted income rates
    weight: np.ndarray    # rescaling w^h(t) between E[v] and the mean-field strategy
    s_run: np.ndarray     # running reward scale s^h(t)
    s_T: np.ndarray       # terminal reward scale s^h(T)


def survival_transform(
    params: MarketParams, survival: SurvivalSpec, t: float
) -> SurvivalCoefficients:
    """Exit-adjusted drift constants, mean-field weights, and reward scales.

    l_tilde^h(t) = net_income^h
                   + pi^h sum_k omega^k (e^k - d_e^k) s^k(t) / sum_l pi^l omega^l s^l(t)

    Note the member's own membership outflow -e^h is absent here by
    construction of the exit-adjusted drift; with s == 1 this therefore
    reproduces the base-model income rate plus e^h.
    """
    if not 0.0 <= t <= params.T + 1e-12:
        raise ValueError("t outside [0, T]")
    s = survival.survival(t)
    norm = float(np.dot(params.pi * params.omega, s))
    if norm <= 0.0 or np.any(s <= 0.0):
        raise DegenerateSurvival(f"survival weights degenerate at t={t}")
    l_tilde = params.net_income + params.pi * float(
        np.dot(params.omega, (params.e - params.d_e) * s)
    ) / norm
    s_T = survival.survival(params.T)
    if np.any(s_T <= 0.0):
        raise DegenerateSurvival("survival beyond the horizon must be positive")
    return SurvivalCoefficients(l_tilde=l_tilde, weight=s / norm, s_run=s, s_T=s_T)


# ---------------------------------------------------------------------------
# Well-posedness report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionEntry:
    name: str
    holds: bool
    margin: float
    required: bool

    def as_dict(self):
        return {
            "name": self.name,
            "holds": bool(self.holds),
            "margin": float(self.margin),
            "required": bool(self.required),
        }


@dataclass(frozen=True)
class WellposednessReport:
    entries: tuple

    def __getitem__(self, name):
        for entry in self.entries:
            if entry.name == name:
                return entry
        raise KeyError(name)

    @property
    def all_required_hold(self) -> bool:
        return all(e.holds for e in self.entries if e.required)

    @property
    def all_hold(self) -> bool:
        return all(e.holds for e in self.entries)

    def as_json(self) -> str:
        return json.dumps([e.as_dict() for e in self.entries], indent=2)


def check_wellposedness(
    params: MarketParams, reward, n_time_samples: int = 201
) -> WellposednessReport:
    """Evaluate every solvability condition; failures are entries, not errors.

    Margins are signed: positive means the condition holds with that slack.
    The share-ratio ordering is only sufficient for the spectral conditions
    and is reported as informational.
    """
    sm = sharing_matrices(params)
    H = params.H
    eye = np.eye(H)
    entries = []

    lam_min = sym_min_eig(eye - sm.M)
    entries.append(ConditionEntry("min_eig_identity_minus_share_feedback", lam_min > 0.0, lam_min, True))

    lam_max = sym_max_eig(sm.Pi @ np.diag(1.0 / params.kappa))
    entries.append(ConditionEntry("max_eig_share_over_premium", lam_max < 1.0, 1.0 - lam_max, True))

    if params.zero_sharing:
        s = q = 0.0
    else:
        ratio = params.omega * (params.kappa - params.d) / params.kappa
        s = float(np.dot(params.pi, ratio))
        q = float(np.sqrt(np.sum(params.pi ** 2) * np.sum(ratio ** 2)))
    entries.append(ConditionEntry("scalar_share_bound", s + q < 2.0, 2.0 - (s + q), True))

    if params.zero_sharing:
        ordering = np.inf
    else:
        per_class = (params.pi / params.omega) * params.kappa / (params.kappa - params.d)
        ordering = float(np.min(per_class) - np.max(params.pi / params.omega))
    entries.append(ConditionEntry("share_ratio_ordering", ordering > 0.0, ordering, False))

    closed = closed_form_min_eig_I_minus_M(params)
    entries.append(ConditionEntry("closed_form_min_eig", closed > 0.0, closed, False))

    ts = np.linspace(0.0, params.T, n_time_samples)
    if reward is not None and reward.kind == "quadratic":
        sup_S = max(float(np.max(np.abs(reward.S(t)))) for t in ts)
        entries.append(ConditionEntry("mean_wealth_anchor_bound", sup_S < 1.0, 1.0 - sup_S, True))
        sup_R = max(float(np.max(np.abs(reward.R(t)))) for t in ts)
        entries.append(ConditionEntry("mean_strategy_anchor_bound", sup_R < 1.0, 1.0 - sup_R, True))
        coupled = min(
            sym_min_eig((eye - sm.M.T) @ np.diag(reward.Q(t)) @ (eye - np.diag(reward.S(t))))
            for t in ts
        )
        entries.append(ConditionEntry("coupled_quadratic_coercivity", coupled > 0.0, coupled, True))
    elif reward is not None and reward.kind == "hara_mixture":
        sup_R = float(np.max(np.abs(reward.Rc)))
        entries.append(ConditionEntry("mean_strategy_anchor_bound", sup_R < 1.0, 1.0 - sup_R, True))
        norm_M = spectral_norm(sm.M)
        slack = reward.Qc - norm_M * (
            reward.Qc + reward.a ** 2 / reward.b ** (1.0 + reward.gamma)
        )
        entries.append(
            ConditionEntry("hara_penalty_dominance", bool(np.all(slack > 0.0)), float(np.min(slack)), True)
        )

    return WellposednessReport(entries=tuple(entries))


# ---------------------------------------------------------------------------
# Config ingestion
# ---------------------------------------------------------------------------


def reward_from_config(block: dict, H: int, T: float):
    kind = block.get("type", "quadratic")
    if kind == "quadratic":
        return Quadratic.make(
            H,
            Q=block.get("Q", 1.0),
            P=block.get("P", 1.0),
            R=block.get("R", 0.0),
            S=block.get("S", 0.0),
            gamma=block.get("gamma", 1.0),
            T=T,
        )
    if kind == "hara_mixture":
        return HaraMixture.make(
            H,
            gamma=block["gamma"],
            a=block.get("a", 1.0),
            b=block.get("b", 1.0),
            Q=block.get("Q", 1.0),
            P=block.get("P", 1.0),
            R=block.get("R", 0.0),
            B=block.get("B", 0.0),
            T=T,
        )
    raise ValueError(f"unknown reward type {kind!r}")


def survival_from_config(block: Optional[dict], H: int):
    if block is None:
        return None
    if "hazards" in block:
        hz = np.asarray(block["hazards"], dtype=float)
        if hz.ndim == 0:
            hz = np.full(H, float(hz))
        return SurvivalSpec.exponential(hz)
    return SurvivalSpec.tabulated(block["t"], block["s"])


def load_config(path):
    """Read a JSON scenario file: keys market, reward, constraint, survival?.

    Returns (MarketParams, reward, survival-or-None). The constraint may live
    either at top level or inside the market block; top level wins.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    market_block = dict(raw["market"])
    if "constraint" in raw:
        market_block["constraint"] = raw["constraint"]
    params = build_market(market_block)
    reward = reward_from_config(raw.get("reward", {}), params.H, params.T)
    survival = survival_from_config(raw.get("survival"), params.H)
    return params, reward, survival

"""Finite-population simulator of the shared-surplus insurance pool.

Validates the infinite-population approximation empirically: the per-member
gap between the pool dynamics and the limit dynamics under common noise, the
decay of that gap with class sizes, and the profitability of unilateral
deviations from the limit-equilibrium feedback strategy.

Members interact only through per-class empirical averages, so each step is
vectorized over (replication, member). Increments are counter-addressed per
(member, step, replication), which makes paired designs (same noise, two
strategy profiles) exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .model import MarketParams
from .paths import (
    NonFiniteState,
    STEP_WORD_EXIT_TIME,
    counter_normals,
    counter_uniforms,
)
from .riccati import MeanFieldSolution, coefficient_matrices

__all__ = [
    "InsufficientSamples",
    "Population",
    "GapStatistics",
    "FeedbackStrategy",
    "SolverFeedbackStrategy",
    "ConstantStrategy",
    "DeviantMember",
    "population_counts",
    "population_from_config",
    "simulate_population",
    "mean_field_gap",
    "objective_estimate",
    "epsilon_nash_probe",
]


class InsufficientSamples(ValueError):
    """Monte-Carlo replication count too small for the requested estimate."""


def population_counts(params: MarketParams, scale: int) -> np.ndarray:
    """Class sizes proportional to the adjusted proportions, anchored so the
    largest class has ``scale`` members."""
    ratio = params.omega / np.max(params.omega)
    return np.maximum(1, np.rint(scale * ratio).astype(int))


def _member_normals(seed, n_members, n_steps, rep_ids, draw=0):
    """(n_rep, n_members, n_steps) N(0,1), addressed by (member, step, rep)."""
    n_pairs = (n_steps + 1) // 2
    reps = np.asarray(rep_ids, dtype=np.uint32)[:, None, None]
    members = np.arange(n_members, dtype=np.uint32)[None, :, None]
    pairs = np.arange(n_pairs, dtype=np.uint32)[None, None, :]
    shape = (reps.shape[0], n_members, n_pairs)
    z0, z1 = counter_normals(
        seed,
        np.broadcast_to(members, shape),
        np.broadcast_to(pairs, shape),
        np.broadcast_to(reps, shape),
        np.full(shape, np.uint32(draw), dtype=np.uint32),
    )
    out = np.empty((shape[0], n_members, 2 * n_pairs))
    out[:, :, 0::2] = z0
    out[:, :, 1::2] = z1
    return out[:, :, :n_steps]


def _exit_times(seed, n_members, rep_ids, hazard, draw=0):
    reps = np.asarray(rep_ids, dtype=np.uint32)[:, None]
    members = np.arange(n_members, dtype=np.uint32)[None, :]
    shape = (reps.shape[0], n_members)
    u = counter_uniforms(
        seed,
        np.broadcast_to(members, shape),
        np.full(shape, STEP_WORD_EXIT_TIME, dtype=np.uint32),
        np.broadcast_to(reps, shape),
        np.full(shape, np.uint32(draw), dtype=np.uint32),
    )
    with np.errstate(divide="ignore"):
        return np.where(hazard > 0.0, -np.log(u) / np.maximum(hazard, 1e-300), np.inf)


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


class FeedbackStrategy:
    """Equilibrium feedback from the exact route.

    v = C_t (Gamma_t (y - z_t) + pbar_t) + D_t vbar_t + e_t evaluated at the
    member's own wealth with the deterministic limit curves; clamped to the
    admissible interval when one is configured.
    """

    def __init__(self, params: MarketParams, reward, solution: MeanFieldSolution,
                 n_steps: int):
        self.params = params
        stride = solution.stride_for(n_steps)
        idx = np.arange(n_steps) * stride
        self.z = solution.z[idx]                 # (M, H)
        self.pbar = solution.pbar[idx]
        self.vbar = solution.vbar[idx]
        self.Gamma = solution.Gamma[:, idx]      # (H, M)
        t_nodes = solution.t[idx]
        self.C = np.empty((n_steps, params.H))
        self.D = np.empty((n_steps, params.H))
        self.e = np.empty((n_steps, params.H))
        for i, t in enumerate(t_nodes):
            c = coefficient_matrices(t, self.Gamma[:, i], params, reward)
            self.C[i], self.D[i], self.e[i] = c.C, c.D, c.e

    def values(self, i, t, y_by_class):
        out = []
        for h, y in enumerate(y_by_class):
            p = self.Gamma[h, i] * (y - self.z[i, h]) + self.pbar[i, h]
            v = self.C[i, h] * p + self.D[i, h] * self.vbar[i, h] + self.e[i, h]
            if self.params.constraint is not None:
                v = self.params.constraint.clamp(v)
            out.append(v)
        return out


class SolverFeedbackStrategy:
    """Equilibrium feedback reconstructed from a trained network solver.

    Carries a per-member adjoint state: initialized by the solver's
    initializer nets, advanced with the member's own increments through the
    adjoint recursion, and mapped to a strategy through the trained
    coefficient nets and the clamped strategy-channel inverse.
    """

    def __init__(self, params: MarketParams, reward, solver, n_steps: int):
        if solver.vbar.shape[1] != n_steps:
            raise ValueError("solver grid does not match the simulation grid")
        self.params = params
        self.reward = reward
        self.nets = solver.nets
        self.vbar = solver.vbar          # (H, M)
        self.z = solver.z                # (H, M+1)
        self.dt = params.T / n_steps
        self.p = None

    def begin(self, counts, n_rep):
        offsets, total = _class_offsets(np.asarray(counts, dtype=int))
        self.offsets = offsets
        self.p = np.empty((n_rep, total))
        for h in range(self.params.H):
            sl = slice(offsets[h], offsets[h + 1])
            width = self.offsets[h + 1] - self.offsets[h]
            x0 = np.full(n_rep * width, self.params.xi_mean[h])
            out, _ = self.nets.p0[h].forward(x0[:, None])
            self.p[:, sl] = out.reshape(n_rep, width)

    def _eta(self, i, t, y, h):
        flat = y.reshape(-1)
        inp = np.column_stack((
            np.full(flat.shape[0], t),
            flat,
            np.full(flat.shape[0], self.z[h, i]),
            self.p[:, self.offsets[h]:self.offsets[h + 1]].reshape(-1),
        ))
        out, _ = self.nets.eta[h].forward(inp)
        return out.reshape(y.shape)

    def values(self, i, t, y_by_class):
        out = []
        self._last_eta = []
        for h, y in enumerate(y_by_class):
            eta = self._eta(i, t, y, h)
            self._last_eta.append(eta)
            P = self.reward.P(t)[h]
            R = self.reward.R(t)[h]
            p_blk = self.p[:, self.offsets[h]:self.offsets[h + 1]]
            vraw = (self.params.kappa[h] * p_blk + self.params.sigma[h] * eta) / P \
                + R * self.vbar[h, i]
            if self.params.constraint is not None:
                vraw = self.params.constraint.clamp(vraw)
            out.append(vraw)
        return out

    def advance(self, i, t, y_by_class, dW_by_class):
        H = self.params.H
        for h, y in enumerate(y_by_class):
            sl = slice(self.offsets[h], self.offsets[h + 1])
            flat = y.reshape(1, -1)
            fx = self.reward.running_fx(
                t, np.broadcast_to(flat, (H, flat.shape[1])), self.z[:, i]
            )[h].reshape(y.shape)
            p_blk = self.p[:, sl]
            self.p[:, sl] = p_blk - (self.params.r * p_blk - fx) * self.dt \
                + self._last_eta[h] * dW_by_class[h]


class ConstantStrategy:
    """Same constant proportion for every member of a class."""

    def __init__(self, levels):
        self.levels = np.atleast_1d(np.asarray(levels, dtype=float))

    def values(self, i, t, y_by_class):
        lv = self.levels
        if lv.shape[0] == 1 and len(y_by_class) > 1:
            lv = np.repeat(lv, len(y_by_class))
        return [np.full_like(y, lv[h]) for h, y in enumerate(y_by_class)]


class DeviantMember:
    """Wraps a base profile; one member plays an alternative strategy.

    ``alternative(i, t, y_member, v_base)`` returns the deviant's proportion.
    """

    def __init__(self, base, class_index: int, member_index: int,
                 alternative: Callable):
        self.base = base
        self.h0 = class_index
        self.i0 = member_index
        self.alternative = alternative

    def values(self, i, t, y_by_class):
        out = self.base.values(i, t, y_by_class)
        y0 = y_by_class[self.h0][..., self.i0]
        v0 = out[self.h0][..., self.i0]
        out[self.h0] = out[self.h0].copy()
        out[self.h0][..., self.i0] = self.alternative(i, t, y0, v0)
        return out


def population_from_config(block: dict, strategy) -> "Population":
    """Build a Population from a scenario file's ``population`` block.

    Recognized keys: ``counts`` (per-class member counts, required) and
    ``exit_hazards`` (per-class constant hazards, optional).
    """
    hazards = block.get("exit_hazards")
    return Population(
        counts=np.asarray(block["counts"], dtype=int),
        strategy=strategy,
        exit_hazards=None if hazards is None else np.asarray(hazards, dtype=float),
    )


@dataclass(frozen=True)
class Population:
    """Finite pool: class sizes, a strategy profile, optional exit hazards."""

    counts: np.ndarray
    strategy: object
    exit_hazards: Optional[np.ndarray] = None

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=int)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    def omega_consistent(self, params: MarketParams, tol: float = 0.01) -> bool:
        total = float(np.dot(params.pi, self.counts))
        implied = self.counts / total
        return bool(np.all(np.abs(implied - params.omega) <= tol * np.abs(params.omega)))


# ---------------------------------------------------------------------------
# Core pool dynamics
# ---------------------------------------------------------------------------


def _class_offsets(counts):
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return offsets, int(offsets[-1])


def simulate_population(pop: Population, params: MarketParams, n_steps: int,
                        seed: int, n_rep: int = 1, draw: int = 0,
                        rep_offset: int = 0, flag_degenerate: bool = True) -> dict:
    """Euler simulation of the pool; returns wealth paths, strategies, surplus.

    Each member's drift carries the pro-rata surplus share pi^h / sum_l pi^l N^l
    of aggregate premium-minus-fees, and the diffusion carries both the
    retained loss and the shared transferred-claims noise. With exits active
    every contribution is gated by the member's survival indicator, the
    pro-rata denominator shrinks to the surviving pool, and a surviving member
    keeps paying the membership fee (so fee income in the surplus always has a
    matching outflow from the payers).
    """
    counts = pop.counts
    H = params.H
    offsets, total = _class_offsets(counts)
    dt = params.T / n_steps
    rep_ids = np.arange(rep_offset, rep_offset + n_rep)
    dW = _member_normals(seed, total, n_steps, rep_ids, draw=draw) * np.sqrt(dt)

    degenerate = bool(np.any(counts < 2))
    if flag_degenerate and not pop.omega_consistent(params):
        degenerate = True

    if pop.exit_hazards is not None:
        hz = np.repeat(np.asarray(pop.exit_hazards, dtype=float), counts)
        taus = _exit_times(seed, total, rep_ids, hz[None, :], draw=draw)
    else:
        taus = None

    y = np.empty((n_rep, total, n_steps + 1))
    vs = np.zeros((n_rep, total, n_steps))
    for h in range(H):
        y[:, offsets[h]:offsets[h + 1], 0] = params.xi_mean[h]
    U = np.zeros((n_rep, n_steps + 1))
    pi_n_total = float(np.dot(params.pi, counts))
    share_audit = 0.0
    sharing = not params.zero_sharing

    upsilon = params.omega * (params.kappa - params.d)
    if hasattr(pop.strategy, "begin"):
        pop.strategy.begin(counts, n_rep)
    for i in range(n_steps):
        t = i * dt
        cur = [y[:, offsets[h]:offsets[h + 1], i] for h in range(H)]
        v_list = pop.strategy.values(i, t, cur)
        alive = taus > t if taus is not None else None
        vbar_emp = np.empty((n_rep, H))
        noise_mix = np.zeros(n_rep)
        fee_mix = np.zeros(n_rep)
        n_alive_w = np.zeros(n_rep)
        for h in range(H):
            sl = slice(offsets[h], offsets[h + 1])
            a_h = alive[:, sl] if alive is not None else 1.0
            vh_eff = v_list[h] * a_h
            vbar_emp[:, h] = vh_eff.sum(axis=1) / counts[h]
            noise_mix += params.sigma[h] * params.omega[h] * \
                (vh_eff * dW[:, sl, i]).sum(axis=1) / counts[h]
            alive_count = a_h.sum(axis=1) if alive is not None else float(counts[h])
            fee_mix += params.omega[h] * (params.e[h] - params.d_e[h]) * alive_count / counts[h]
            n_alive_w += params.pi[h] * alive_count
        rescale = pi_n_total / np.maximum(n_alive_w, 1e-12) if taus is not None \
            else np.ones(n_rep)
        drift_mix = vbar_emp @ upsilon                       # (n_rep,)
        alive_weighted = n_alive_w                            # sum_h pi^h N^h_t

        dU = np.zeros(n_rep)
        for h in range(H):
            sl = slice(offsets[h], offsets[h + 1])
            vh = v_list[h]
            a_h = alive[:, sl] if alive is not None else 1.0
            vh_eff = vh * a_h
            alive_count = a_h.sum(axis=1) if alive is not None else float(counts[h])
            if taus is not None:
                income = (params.net_income[h] - params.e[h]
                          + params.pi[h] * rescale * fee_mix)[:, None]
            else:
                income = params.l[h]
            drift = (
                params.r * cur[h]
                + income
                - params.kappa[h] * vh
            )
            if sharing:
                drift = drift + params.pi[h] * (rescale * drift_mix)[:, None]
            nxt = cur[h] + drift * dt \
                + params.sigma[h] * (1.0 - vh) * dW[:, sl, i]
            if sharing:
                nxt = nxt + params.pi[h] * (rescale * noise_mix)[:, None]
            if alive is not None:
                nxt = np.where(a_h, nxt, cur[h])             # frozen after exit
            if not np.all(np.isfinite(nxt)):
                raise NonFiniteState(i)
            y[:, sl, i + 1] = nxt
            vs[:, sl, i] = vh
            dU += ((params.kappa[h] - params.d[h]) * vh_eff.sum(axis=1)
                   + (params.e[h] - params.d_e[h]) * alive_count) * dt
            dU += params.sigma[h] * (vh_eff * dW[:, sl, i]).sum(axis=1)
        U[:, i + 1] = U[:, i] + dU
        if sharing:
            # pro-rata shares partition the surplus increment exactly
            handed = alive_weighted * rescale * ((drift_mix + fee_mix) * dt + noise_mix)
            share_audit = max(share_audit, float(np.max(np.abs(handed - dU))))
        if hasattr(pop.strategy, "advance"):
            pop.strategy.advance(
                i, t, cur, [dW[:, offsets[h]:offsets[h + 1], i] for h in range(H)]
            )

    return {
        "y": y,
        "v": vs,
        "U": U,
        "offsets": offsets,
        "degenerate": degenerate,
        "exit_times": taus,
        "share_audit": share_audit,
        "dt": dt,
    }


# ---------------------------------------------------------------------------
# Mean-field gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GapStatistics:
    """Per-size gap estimates E[sup_t |limit - pool|^2] and the log-log slope."""

    sizes: np.ndarray
    gaps: np.ndarray
    stderrs: np.ndarray
    slope: Optional[float]
    intercept: Optional[float]
    r_squared: Optional[float]


def mean_field_gap(params: MarketParams, reward, solution: MeanFieldSolution,
                   N_schedule: Sequence[int], n_mc: int, seed: int,
                   n_steps: int = 100, rep_chunk: int = 64) -> GapStatistics:
    """Paired simulation of pool and limit dynamics under common increments.

    For each scale in the schedule, every member's limit path (driven by the
    deterministic mean strategy) and pool path (driven by the empirical
    averages) share the same Brownian increments; the squared sup-gap is
    averaged over members and replications. A least-squares line through
    (log N, log gap) estimates the decay order.
    """
    if n_mc < 100:
        raise InsufficientSamples("need at least 100 replications")
    H = params.H
    dt = params.T / n_steps
    strat = FeedbackStrategy(params, reward, solution, n_steps)
    upsilon = params.omega * (params.kappa - params.d)
    sharing = not params.zero_sharing
    gaps = []
    errs = []
    for scale in N_schedule:
        counts = population_counts(params, int(scale))
        offsets, total = _class_offsets(counts)
        rep_means = np.empty(n_mc)
        done = 0
        while done < n_mc:
            reps = np.arange(done, min(done + rep_chunk, n_mc))
            R = reps.shape[0]
            dW = _member_normals(seed, total, n_steps, reps) * np.sqrt(dt)
            y = np.empty((R, total))
            xlim = np.empty((R, total))
            for h in range(H):
                y[:, offsets[h]:offsets[h + 1]] = params.xi_mean[h]
            xlim[:] = y
            supgap = np.zeros((R, total))
            for i in range(n_steps):
                t = i * dt
                y_by = [y[:, offsets[h]:offsets[h + 1]] for h in range(H)]
                x_by = [xlim[:, offsets[h]:offsets[h + 1]] for h in range(H)]
                v_pool = strat.values(i, t, y_by)
                v_lim = strat.values(i, t, x_by)
                vbar_emp = np.stack(
                    [v_pool[h].sum(axis=1) / counts[h] for h in range(H)], axis=1
                )
                drift_mix = vbar_emp @ upsilon if sharing else np.zeros(R)
                noise_mix = np.zeros(R)
                if sharing:
                    for h in range(H):
                        sl = slice(offsets[h], offsets[h + 1])
                        noise_mix += params.sigma[h] * params.omega[h] * \
                            (v_pool[h] * dW[:, sl, i]).sum(axis=1) / counts[h]
                lim_mix = float(upsilon @ strat.vbar[i]) if sharing else 0.0
                for h in range(H):
                    sl = slice(offsets[h], offsets[h + 1])
                    y[:, sl] = y[:, sl] + (
                        params.r * y[:, sl] + params.l[h]
                        - params.kappa[h] * v_pool[h]
                        + params.pi[h] * drift_mix[:, None]
                    ) * dt + params.sigma[h] * (1.0 - v_pool[h]) * dW[:, sl, i] \
                        + params.pi[h] * noise_mix[:, None]
                    xlim[:, sl] = xlim[:, sl] + (
                        params.r * xlim[:, sl] + params.l[h]
                        - params.kappa[h] * v_lim[h]
                        + params.pi[h] * lim_mix
                    ) * dt + params.sigma[h] * (1.0 - v_lim[h]) * dW[:, sl, i]
                supgap = np.maximum(supgap, (xlim - y) ** 2)
            rep_means[reps] = supgap.mean(axis=1)
            done = reps[-1] + 1
        gaps.append(float(rep_means.mean()))
        errs.append(float(rep_means.std() / np.sqrt(n_mc)))

    sizes = np.asarray([int(s) for s in N_schedule], dtype=float)
    gaps_arr = np.asarray(gaps)
    if sizes.shape[0] >= 2 and np.all(gaps_arr > 0.0):
        X = np.log(sizes)
        Y = np.log(gaps_arr)
        slope, intercept = np.polyfit(X, Y, 1)
        resid = Y - (slope * X + intercept)
        ss_tot = float(np.sum((Y - Y.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
        return GapStatistics(sizes, gaps_arr, np.asarray(errs), float(slope),
                             float(intercept), r2)
    return GapStatistics(sizes, gaps_arr, np.asarray(errs), None, None, None)


# ---------------------------------------------------------------------------
# Objectives and deviation gains
# ---------------------------------------------------------------------------


def objective_estimate(member, strategy, counts, params: MarketParams, reward,
                       n_mc: int, seed: int, n_steps: int = 100,
                       rep_chunk: int = 128, draw: int = 0):
    """Monte-Carlo estimate of one member's objective under a strategy profile.

    Uses the leave-one-out empirical class averages (denominator N^h - 1) as
    the member's mean-field arguments and trapezoidal quadrature in time.
    Returns (estimate, stderr).
    """
    if n_mc < 1:
        raise InsufficientSamples("need at least one replication")
    h0, i0 = member
    counts = np.asarray(counts, dtype=int)
    offsets, total = _class_offsets(counts)
    pop = Population(counts=counts, strategy=strategy)
    dt = params.T / n_steps
    member_idx = offsets[h0] + i0
    n_h = counts[h0]
    sl = slice(offsets[h0], offsets[h0 + 1])

    values = np.empty(n_mc)
    done = 0
    while done < n_mc:
        reps = np.arange(done, min(done + rep_chunk, n_mc))
        sim = simulate_population(pop, params, n_steps, seed, n_rep=reps.shape[0],
                                  draw=draw, rep_offset=done, flag_degenerate=False)
        y = sim["y"]
        v = sim["v"]
        own_y = y[:, member_idx, :]
        own_v = v[:, member_idx, :]
        if n_h > 1:
            loo_y = (y[:, sl, :].sum(axis=1) - own_y) / (n_h - 1)
            loo_v = (v[:, sl, :].sum(axis=1) - own_v) / (n_h - 1)
        else:
            loo_y = np.zeros_like(own_y)
            loo_v = np.zeros_like(own_v)
        t_nodes = np.arange(n_steps + 1) * dt
        f_vals = np.empty((reps.shape[0], n_steps + 1))
        for i in range(n_steps + 1):
            j = min(i, n_steps - 1)  # strategies are piecewise constant on steps
            f_vals[:, i] = reward.running_f(
                t_nodes[i], h0, own_y[:, i], loo_y[:, i], own_v[:, j], loo_v[:, j]
            )
        integral = (f_vals.sum(axis=1) - 0.5 * (f_vals[:, 0] + f_vals[:, -1])) * dt
        terminal = reward.terminal_g(h0, own_y[:, -1], loo_y[:, -1])
        values[reps] = integral + terminal
        done = reps[-1] + 1
    return float(values.mean()), float(values.std() / np.sqrt(n_mc))


def epsilon_nash_probe(params: MarketParams, reward, solution: MeanFieldSolution,
                       deviations: Sequence, N_schedule: Sequence[int],
                       n_mc: int, seed: int, n_steps: int = 100) -> dict:
    """Max deviation gain per population size, under common random numbers.

    Each deviation is a callable (i, t, y, v_base) -> proportion applied to
    member 0 of class 0 while everyone else keeps the equilibrium feedback.
    The menu is finite, so the reported number is a lower bound on the true
    best-response gain.
    """
    base = FeedbackStrategy(params, reward, solution, n_steps)
    table = {"sizes": [], "base": [], "max_gain": [], "gain_stderr": [], "gains": []}
    for scale in N_schedule:
        counts = population_counts(params, int(scale))
        j_base, se_base = objective_estimate((0, 0), base, counts, params, reward,
                                             n_mc, seed, n_steps)
        gains = []
        stderr = []
        for dev in deviations:
            profile = DeviantMember(base, 0, 0, dev)
            j_dev, se_dev = objective_estimate((0, 0), profile, counts, params,
                                               reward, n_mc, seed, n_steps)
            gains.append(j_dev - j_base)
            stderr.append(np.hypot(se_base, se_dev))
        table["sizes"].append(int(scale))
        table["base"].append(j_base)
        if gains:
            k = int(np.argmax(gains))
            table["max_gain"].append(gains[k])
            table["gain_stderr"].append(stderr[k])
        else:
            table["max_gain"].append(None)
            table["gain_stderr"].append(None)
        table["gains"].append(gains)
    return table

"""Neural solver for the constrained equilibrium system.

The backward adjoint is driven forward in time: its initial value and its
martingale coefficient are parameterized by small networks, the whole system
is simulated with Euler-Maruyama under the candidate strategy, and the
networks are trained to hit the adjoint's terminal condition. A penalty term
couples the batch average of the per-path strategies to the dedicated
mean-strategy networks, which closes the fixed point of the game.

Per class h there are three networks: vbar_h(t) for the mean strategy,
eta_h(t, x, z, p) for the martingale coefficient, and p0_h(x_0) for the
adjoint's initial value. Gradients flow through the entire unrolled
simulation by a hand-written reverse sweep; the clamp used for the strategy
constraint propagates gradient 1 on the closed interval [a, b] and 0 outside.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import riccati
from .model import Interval, MarketParams, check_wellposedness, sharing_matrices, survival_transform
from .nets import Adam, Mlp, Workspace, zero_grads
from .paths import (
    NonFiniteState,
    PathBatch,
    STEP_WORD_INITIAL_WEALTH,
    brownian_increments,
    counter_normals,
)

__all__ = [
    "NonFiniteLoss",
    "EarlyDivergence",
    "GridMismatch",
    "TrainingConfig",
    "NetBundle",
    "TrainedSolver",
    "RolloutResult",
    "project",
    "reward_gradients",
    "terminal_gradient",
    "rollout_loss",
    "train",
    "relative_error",
    "save_checkpoint",
    "load_checkpoint",
]


class NonFiniteLoss(ArithmeticError):
    """The training loss became NaN or infinite."""


class EarlyDivergence(RuntimeError):
    """The loss grew tenfold over fifty iterations."""


class GridMismatch(ValueError):
    """Solver and oracle grids are not node-aligned."""


def project(value, interval: Optional[Interval]):
    """Componentwise clamp to the admissible interval; identity when unbounded."""
    if interval is None:
        return value
    return np.clip(value, interval.lo, interval.hi)


def reward_gradients(reward, t, x, z):
    """Running-reward gradients at (t, x, z) plus the strategy-channel inverse.

    Returns (f_x, P_t, R_t): the strategy first-order condition f_v = u has
    the affine inverse v = -u / P_t + R_t vbar, common to both reward
    families.
    """
    x2 = np.atleast_2d(np.asarray(x, dtype=float))
    z2 = np.asarray(z, dtype=float)
    return reward.running_fx(t, x2, z2), reward.P(t), reward.R(t)


def terminal_gradient(reward, x_T, z_T):
    """Terminal-reward x-gradient; the adjoint's terminal target is its negative."""
    x2 = np.atleast_2d(np.asarray(x_T, dtype=float))
    return reward.terminal_gx(x2, np.asarray(z_T, dtype=float))


@dataclass
class TrainingConfig:
    n_paths: int = 10_000
    n_steps: int = 100
    iterations: int = 1_000
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    penalty: float = 1.0
    seed: int = 0
    resample: bool = True          # fresh increments every iteration
    allow_ill_posed: bool = False  # downgrade the solvability check to a warning
    hidden: int = 32

    def __post_init__(self):
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")
        if self.penalty < 0.0:
            raise ValueError("penalty must be non-negative")


@dataclass
class NetBundle:
    """One (vbar, eta, p0) network triple per class."""

    vbar: list
    eta: list
    p0: list

    @classmethod
    def build(cls, H, seed, hidden=32):
        w = hidden
        return cls(
            vbar=[Mlp.build((1, w, w, 1), seed, net_id=h) for h in range(H)],
            eta=[Mlp.build((4, w, w, 1), seed, net_id=16 + h) for h in range(H)],
            p0=[Mlp.build((1, w, w, 1), seed, net_id=32 + h) for h in range(H)],
        )

    def all_nets(self):
        return list(self.vbar) + list(self.eta) + list(self.p0)

    def all_params(self):
        return [p for net in self.all_nets() for p in net.params]


@dataclass
class RolloutResult:
    loss: float
    terminal_error: float
    meanfield_error: float
    vbar: np.ndarray               # (H, M) mean-strategy curve (clamped)
    z: np.ndarray                  # (H, M+1) deterministic mean wealth
    mean_v: np.ndarray             # (H, M) batch averages of the strategies
    residual_sq_stderr: float
    grads: Optional[list] = None   # flat list aligned with NetBundle.all_params()
    paths: Optional[dict] = None   # x, p, v per path when requested


def _initial_wealth(params: MarketParams, n_paths: int, seed: int, draw: int) -> np.ndarray:
    """(n_paths, H) initial wealth; counter-addressed normals when xi_var > 0."""
    x0 = np.tile(params.xi_mean, (n_paths, 1))
    if np.any(params.xi_var > 0.0):
        pathsv = np.arange(n_paths, dtype=np.uint32)[:, None]
        classes = np.arange(params.H, dtype=np.uint32)[None, :]
        z, _ = counter_normals(
            seed,
            np.broadcast_to(pathsv, (n_paths, params.H)),
            np.full((n_paths, params.H), STEP_WORD_INITIAL_WEALTH, dtype=np.uint32),
            np.broadcast_to(classes, (n_paths, params.H)),
            np.full((n_paths, params.H), np.uint32(draw), dtype=np.uint32),
        )
        x0 = x0 + np.sqrt(params.xi_var)[None, :] * z
    return x0


def rollout_loss(nets: NetBundle, params: MarketParams, reward, batch: PathBatch,
                 lam: float, x0: Optional[np.ndarray] = None, survival=None,
                 want_grads: bool = True, keep_paths: bool = False) -> RolloutResult:
    """Simulate the full system once and (optionally) backpropagate the loss.

    loss = sum_h E[(p^h_T + g_x^h(x_T, z_T))^2]
         + (lam / M) sum_i sum_h (w_i E[v^h_i] - vbar^h_i)^2,

    with E[.] the batch average, w the survival reweighting (1 without exits)
    and the strategies clamped to the admissible interval.
    """
    H, M, n = params.H, batch.n_steps, batch.n_paths
    dt = batch.dt
    interval = params.constraint
    sm = sharing_matrices(params)
    kappa, sigma, r = params.kappa, params.sigma, params.r
    if x0 is None:
        x0 = _initial_wealth(params, n, batch.seed, batch.draw)

    t_nodes = np.arange(M + 1) * dt
    P_i = np.stack([reward.P(t) for t in t_nodes])       # (M+1, H)
    R_i = np.stack([reward.R(t) for t in t_nodes])

    if survival is not None:
        coeffs = [survival_transform(params, survival, t) for t in t_nodes]
        l_i = np.stack([c.l_tilde for c in coeffs])       # (M+1, H)
        w_i = np.stack([c.weight for c in coeffs])
        s_i = np.stack([c.s_run for c in coeffs])
        s_T = coeffs[0].s_T
    else:
        l_i = np.tile(params.l, (M + 1, 1))
        w_i = np.ones((M + 1, H))
        s_i = np.ones((M + 1, H))
        s_T = np.ones(H)

    # Mean-strategy networks run once over the whole time grid.
    t_in = t_nodes[:M, None]
    vbar_raw = np.empty((H, M))
    vbar_caches = []
    for h in range(H):
        out, cache = nets.vbar[h].forward(t_in)
        vbar_raw[h] = out
        vbar_caches.append(cache)
    vbar = project(vbar_raw, interval)
    if interval is not None:
        vbar_mask = (vbar_raw >= interval.lo) & (vbar_raw <= interval.hi)
    else:
        vbar_mask = np.ones_like(vbar_raw, dtype=bool)

    # Deterministic mean-wealth recursion (driven by vbar only).
    Ex = np.empty((H, M + 1))
    Ex[:, 0] = params.xi_mean
    pool_drift = sm.Pi @ vbar                              # (H, M)
    for i in range(M):
        ev_bar = vbar[:, i] / w_i[i]
        Ex[:, i + 1] = Ex[:, i] + (r * Ex[:, i] + l_i[i] - kappa * ev_bar + pool_drift[:, i]) * dt
    z_tilde = Ex * s_i.T                                   # reward argument

    width = nets.eta[0].params[0].shape[1]
    ws4 = Workspace(n, 4, width)
    ws1 = Workspace(n, 1, width)
    sA = np.empty((H, n))

    x = np.empty((H, M + 1, n))
    p = np.empty((H, M + 1, n))
    eta = np.empty((H, M, n))
    vraw = np.empty((H, M, n))
    v = np.empty((H, M, n))
    x[:, 0, :] = x0.T
    for h in range(H):
        ws1.Xt[0] = x0[:, h]
        out, _ = nets.p0[h].forward(ws1.X, ws1)
        p[h, 0, :] = out

    dW_T = np.ascontiguousarray(np.swapaxes(batch.dW, 0, 2))  # (H, M, n)

    for i in range(M):
        t = t_nodes[i]
        for h in range(H):
            ws4.Xt[0] = t
            ws4.Xt[1] = x[h, i, :]
            ws4.Xt[2] = z_tilde[h, i]
            ws4.Xt[3] = p[h, i, :]
            out, _ = nets.eta[h].forward(ws4.X, ws4)
            eta[h, i, :] = out
        vr = vraw[:, i, :]
        np.multiply(p[:, i, :], (kappa / P_i[i])[:, None], out=vr)
        np.multiply(eta[:, i, :], (sigma / P_i[i])[:, None], out=sA)
        vr += sA
        vr += (R_i[i] * vbar[:, i])[:, None]
        v[:, i, :] = project(vr, interval)

        # x step: x (1 + r dt) + (l + pool) dt - kappa v dt + sigma (1-v) dW
        vi = v[:, i, :]
        dWi = dW_T[:, i, :]
        xi1 = x[:, i + 1, :]
        np.multiply(x[:, i, :], 1.0 + r * dt, out=xi1)
        xi1 += ((l_i[i] + pool_drift[:, i]) * dt)[:, None]
        np.multiply(vi, (kappa * dt)[:, None], out=sA)
        xi1 -= sA
        np.subtract(1.0, vi, out=sA)
        sA *= sigma[:, None]
        sA *= dWi
        xi1 += sA
        if not np.all(np.isfinite(xi1)):
            raise NonFiniteState(i, "wealth")

        # p step: p (1 - r dt) + f_x dt + eta dW
        fx = reward.running_fx(t, x[:, i, :], z_tilde[:, i])
        pi1 = p[:, i + 1, :]
        np.multiply(p[:, i, :], 1.0 - r * dt, out=pi1)
        fx *= (s_i[i] * dt)[:, None]
        pi1 += fx
        np.multiply(eta[:, i, :], dWi, out=sA)
        pi1 += sA

    gx_T = reward.terminal_gx(x[:, M, :], z_tilde[:, M])
    res = p[:, M, :] + s_T[:, None] * gx_T                 # (H, n)
    per_path = np.sum(res ** 2, axis=0)
    terminal_error = float(np.mean(per_path))
    res_stderr = float(np.std(per_path) / np.sqrt(n))

    mean_v = v.mean(axis=2)                                # (H, M)
    pen = w_i[:M].T * mean_v - vbar                        # (H, M)
    meanfield_error = float(np.sum(pen ** 2) / M)
    loss = terminal_error + lam * meanfield_error
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss = {loss}")

    result = RolloutResult(
        loss=loss,
        terminal_error=terminal_error,
        meanfield_error=meanfield_error,
        vbar=vbar,
        z=Ex,
        mean_v=mean_v,
        residual_sq_stderr=res_stderr,
        paths={"x": x, "p": p, "v": v} if keep_paths else None,
    )
    if not want_grads:
        return result

    # ----- reverse sweep ---------------------------------------------------
    grads_vbar = [zero_grads(nets.vbar[h].params) for h in range(H)]
    grads_eta = [zero_grads(nets.eta[h].params) for h in range(H)]
    grads_p0 = [zero_grads(nets.p0[h].params) for h in range(H)]

    gres = 2.0 * res / n
    gp_next = gres.copy()
    gx_next = gres * s_T[:, None] * reward.terminal_gxx(x[:, M, :])
    gz_tilde_T = np.sum(gres, axis=1) * s_T * reward.terminal_gxz()
    gEx_next = gz_tilde_T * s_i[M]

    gvbar_all = np.zeros((H, M))
    pen_coeff = 2.0 * lam / M * pen                        # (H, M)
    gv = np.empty((H, n))
    geta = np.empty((H, n))

    for i in range(M - 1, -1, -1):
        t = t_nodes[i]
        dWi = dW_T[:, i, :]

        # gv = gx_next (-kappa dt - sigma dW) + penalty pull
        np.multiply(dWi, sigma[:, None], out=sA)
        sA += (kappa * dt)[:, None]
        np.multiply(gx_next, sA, out=gv)
        np.negative(gv, out=gv)
        gv += ((pen_coeff[:, i] * w_i[i]) / n)[:, None]
        gvbar_all[:, i] -= pen_coeff[:, i]

        if interval is not None:
            vr = vraw[:, i, :]
            gv *= (vr >= interval.lo) & (vr <= interval.hi)
        gvraw = gv
        np.multiply(gp_next, dWi, out=geta)
        np.multiply(gvraw, (sigma / P_i[i])[:, None], out=sA)
        geta += sA
        gvbar_all[:, i] += R_i[i] * np.sum(gvraw, axis=1)

        gp_cur = gp_next * (1.0 - r * dt)
        np.multiply(gvraw, (kappa / P_i[i])[:, None], out=sA)
        gp_cur += sA

        fxx = reward.running_fxx(t, x[:, i, :])
        fxx *= (s_i[i] * dt)[:, None]
        gx_cur = gx_next * (1.0 + r * dt)
        np.multiply(gp_next, fxx, out=sA)
        gx_cur += sA
        gz_tilde = np.sum(gp_next, axis=1) * s_i[i] * reward.running_fxz(t) * dt

        for h in range(H):
            ws4.Xt[0] = t
            ws4.Xt[1] = x[h, i, :]
            ws4.Xt[2] = z_tilde[h, i]
            ws4.Xt[3] = p[h, i, :]
            _, cache = nets.eta[h].forward(ws4.X, ws4)
            g_in = nets.eta[h].backward(geta[h], cache, grads_eta[h], ws4)
            gx_cur[h] += g_in[:, 1]
            gz_tilde[h] += np.sum(g_in[:, 2])
            gp_cur[h] += g_in[:, 3]

        gvbar_all[:, i] += dt * (sm.Pi.T @ np.sum(gx_next, axis=1))
        gvbar_all[:, i] += dt * (sm.Pi.T @ gEx_next) - dt * kappa * gEx_next / w_i[i]

        gEx_cur = gEx_next * (1.0 + r * dt) + gz_tilde * s_i[i]
        gx_next, gp_next, gEx_next = gx_cur, gp_cur, gEx_cur

    for h in range(H):
        ws1.Xt[0] = x0[:, h]
        _, cache = nets.p0[h].forward(ws1.X, ws1)
        nets.p0[h].backward(gp_next[h], cache, grads_p0[h], ws1)
        nets.vbar[h].backward(gvbar_all[h] * vbar_mask[h], vbar_caches[h], grads_vbar[h])

    result.grads = [g for group in (grads_vbar, grads_eta, grads_p0) for gl in group for g in gl]
    return result


@dataclass
class TrainedSolver:
    """Trained networks plus the diagnostics of the final evaluation batch."""

    nets: NetBundle
    config: TrainingConfig
    constrained: bool
    t: np.ndarray                  # (M+1,) time grid
    vbar: np.ndarray               # (H, M)
    z: np.ndarray                  # (H, M+1)
    terminal_error: float
    meanfield_error: float
    residual_sq_stderr: float
    loss_history: np.ndarray       # (iterations, 3): loss, terminal, meanfield
    relative_error_pct: Optional[float] = None
    wall_seconds: float = 0.0

    def metrics(self, with_history: bool = True) -> dict:
        out = {
            "terminal_error": self.terminal_error,
            "meanfield_error": self.meanfield_error,
            "residual_sq_stderr": self.residual_sq_stderr,
            "final_loss": float(self.loss_history[-1, 0]) if len(self.loss_history) else None,
            "wall_seconds": self.wall_seconds,
            "vbar_t0": [float(x) for x in self.vbar[:, 0]],
            "vbar_penultimate": [float(x) for x in self.vbar[:, -1]],
        }
        if with_history:
            out["loss_history"] = [float(x) for x in self.loss_history[:, 0]]
        if self.relative_error_pct is not None:
            out["relative_error_pct"] = self.relative_error_pct
        return out


def train(params: MarketParams, reward, config: TrainingConfig, survival=None,
          oracle: Optional[riccati.MeanFieldSolution] = None,
          callback=None) -> TrainedSolver:
    """Run the full-batch Adam loop and return the trained solver.

    Fresh increments are drawn every iteration from the seeded counter stream
    unless ``config.resample`` is off (a frozen batch reproduces one fixed
    Monte-Carlo problem exactly). The loss history is recorded per iteration;
    divergence (10x growth over 50 iterations) aborts.
    """
    import time as _time

    report = check_wellposedness(params, reward)
    if not report.all_required_hold:
        failed = [e.name for e in report.entries if e.required and not e.holds]
        msg = f"solvability conditions failed: {', '.join(failed)}"
        if config.allow_ill_posed:
            warnings.warn(msg)
        else:
            raise ValueError(msg)

    start = _time.time()
    H = params.H
    dt = params.T / config.n_steps
    nets = NetBundle.build(H, config.seed, hidden=config.hidden)
    all_params = nets.all_params()
    opt = Adam(all_params, lr=config.learning_rate, beta1=config.beta1,
               beta2=config.beta2, eps=config.eps)

    history = np.empty((config.iterations, 3))
    frozen = None
    for it in range(config.iterations):
        if config.resample or frozen is None:
            draw = it if config.resample else 0
            frozen = brownian_increments(
                config.n_paths, config.n_steps, H, config.seed, dt, draw=draw
            )
        result = rollout_loss(nets, params, reward, frozen, config.penalty,
                              survival=survival, want_grads=True)
        opt.step(all_params, result.grads)
        history[it] = (result.loss, result.terminal_error, result.meanfield_error)
        if it >= 50 and history[it, 0] > 10.0 * history[it - 50, 0]:
            raise EarlyDivergence(
                f"loss grew from {history[it - 50, 0]:.3e} to {history[it, 0]:.3e}"
            )
        if callback is not None:
            callback(it, result)

    eval_batch = brownian_increments(
        config.n_paths, config.n_steps, H, config.seed, dt, draw=config.iterations
    )
    final = rollout_loss(nets, params, reward, eval_batch, config.penalty,
                         survival=survival, want_grads=False)
    solver = TrainedSolver(
        nets=nets,
        config=config,
        constrained=params.constraint is not None,
        t=np.arange(config.n_steps + 1) * dt,
        vbar=final.vbar,
        z=final.z,
        terminal_error=final.terminal_error,
        meanfield_error=final.meanfield_error,
        residual_sq_stderr=final.residual_sq_stderr,
        loss_history=history,
        wall_seconds=_time.time() - start,
    )
    if oracle is not None:
        solver.relative_error_pct = relative_error(solver, oracle)
    return solver


def curve_relative_error(vbar: np.ndarray, z: np.ndarray,
                         oracle: riccati.MeanFieldSolution) -> float:
    """Percent deviation of candidate curves from the exact route.

    Averages |vbar - vbar_ode| (nodes 0..M-1) and |z - z_ode| (nodes 1..M),
    each normalized by the per-class sup of the exact curve over nodes
    0..M-1, with overall weight 1/(2 H M). Requires node-aligned grids.
    """
    H, M = vbar.shape
    try:
        sampled = oracle.sample(M)
    except ValueError as exc:
        raise GridMismatch(str(exc)) from None
    vbar_ode = sampled["vbar"]                 # (M+1, H)
    z_ode = sampled["z"]
    scale_v = np.max(np.abs(vbar_ode[:M]), axis=0)
    scale_z = np.max(np.abs(z_ode[:M]), axis=0)
    term_v = np.sum(np.abs(vbar.T - vbar_ode[:M]) / scale_v[None, :])
    term_z = np.sum(np.abs(z[:, 1:].T - z_ode[1:]) / scale_z[None, :])
    return float((term_v + term_z) / (2.0 * H * M) * 100.0)


def relative_error(solver: TrainedSolver, oracle: riccati.MeanFieldSolution) -> float:
    """Percent deviation of the trained curves from the exact route."""
    return curve_relative_error(solver.vbar, solver.z, oracle)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = 0x4D494346  # "MICF"
_CKPT_VERSION = 1


def _config_hash(config: TrainingConfig, params: MarketParams) -> bytes:
    payload = json.dumps(
        {"config": vars(config), "market": params.as_record()}, sort_keys=True
    ).encode()
    return hashlib.sha256(payload).digest()


def save_checkpoint(path, solver: TrainedSolver, params: MarketParams) -> None:
    """Versioned binary blob: config hash, per-network shapes, LE f64 weights."""
    nets = solver.nets.all_nets()
    with open(path, "wb") as fh:
        fh.write(struct.pack("<II", _CKPT_MAGIC, _CKPT_VERSION))
        fh.write(_config_hash(solver.config, params))
        fh.write(struct.pack("<I", len(nets)))
        for net in nets:
            fh.write(struct.pack("<I", len(net.params)))
            for tensor in net.params:
                shape = tensor.shape
                fh.write(struct.pack("<I", len(shape)))
                fh.write(struct.pack(f"<{len(shape)}I", *shape))
                fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (config_hash_bytes, list of per-network parameter lists)."""
    with open(path, "rb") as fh:
        magic, version = struct.unpack("<II", fh.read(8))
        if magic != _CKPT_MAGIC or version != _CKPT_VERSION:
            raise ValueError("not a solver checkpoint")
        digest = fh.read(32)
        (n_nets,) = struct.unpack("<I", fh.read(4))
        nets = []
        for _ in range(n_nets):
            (n_tensors,) = struct.unpack("<I", fh.read(4))
            tensors = []
            for _ in range(n_tensors):
                (ndim,) = struct.unpack("<I", fh.read(4))
                shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
                count = int(np.prod(shape)) if shape else 1
                data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
                tensors.append(data.copy())
            nets.append(tensors)
    return digest, nets

"""Exact unconstrained equilibrium for quadratic rewards.

The feedback gain Gamma solves a scalar backward Riccati equation per class;
the mean-field pair (z, pbar) reduces through the affine representation
pbar = Xi z + zeta to a matrix Riccati equation for Xi and a linear equation
for zeta. Everything is integrated with classical fourth-order Runge-Kutta on
nested uniform grids (fine enough that ODE error sits far below Monte-Carlo
error), with backward equations run in a reversed time variable so a single
forward kernel serves both directions.

Nesting: Gamma is stored on a grid four times finer than the requested one,
Xi and zeta twice finer, so every Runge-Kutta midpoint lands on a stored node
and no interpolation error enters the curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import MarketParams, Quadratic, SharingMatrices, sharing_matrices, sym_min_eig
from .paths import PathBatch, euler_step

__all__ = [
    "BlowUp",
    "GammaCurves",
    "XiZetaCurves",
    "MeanFieldSolution",
    "Coefficients",
    "solve_gamma",
    "coefficient_matrices",
    "solve_xi_zeta",
    "mean_field_solution",
    "solve",
    "direct_pbar_route",
    "simulate_optimal_wealth",
    "mean_response_map",
    "picard_fixed_point",
    "ode_residuals",
]

GAMMA_BLOWUP = 1e8


class BlowUp(ArithmeticError):
    """A backward curve left the trusted range; invalid parameter regime."""


@dataclass(frozen=True)
class GammaCurves:
    """Per-class feedback gains on a fine uniform grid (stride-4 vs the base grid)."""

    T: float
    n_grid: int            # base grid intervals
    values: np.ndarray     # shape (H, 4*n_grid + 1), forward time order

    def at(self, j: int, stride: int = 4) -> np.ndarray:
        """Gamma at node j of a grid whose spacing is stride * (T / (4 n))."""
        return self.values[:, j * stride]

    def on_base_grid(self) -> np.ndarray:
        return self.values[:, ::4]


@dataclass(frozen=True)
class XiZetaCurves:
    """Affine mean-field representation on the half grid (stride-2 vs base)."""

    T: float
    n_grid: int
    Xi: np.ndarray        # (2*n_grid + 1, H, H)
    zeta: np.ndarray      # (2*n_grid + 1, H)


@dataclass(frozen=True)
class Coefficients:
    """Diagonal strategy coefficients at one time point (stored as vectors)."""

    A: np.ndarray
    b: np.ndarray
    C: np.ndarray
    D: np.ndarray
    e: np.ndarray


def coefficient_matrices(t: float, Gamma_t: np.ndarray, params: MarketParams,
                         reward: Quadratic) -> Coefficients:
    """Strategy coefficients A, b, C, D, e from the gain at time t.

    All five matrices are diagonal because every factor is diagonal, so the
    diagonals are returned: A = kappa / (sigma^2 Gamma + P (1 - R)),
    b = sigma^2 Gamma / (sigma^2 Gamma + P (1 - R)), C = kappa / (sigma^2
    Gamma + P), D = P R / (sigma^2 Gamma + P), e = sigma^2 Gamma / (sigma^2
    Gamma + P).
    """
    P = reward.P(t)
    R = reward.R(t)
    s2g = params.sigma ** 2 * Gamma_t
    den_bar = s2g + P * (1.0 - R)
    den = s2g + P
    return Coefficients(
        A=params.kappa / den_bar,
        b=s2g / den_bar,
        C=params.kappa / den,
        D=P * R / den,
        e=s2g / den,
    )


def solve_gamma(params: MarketParams, reward: Quadratic, n_grid: int = 1000) -> GammaCurves:
    """Backward Riccati integration of the per-class feedback gain.

    dGamma/dt = kappa^2 Gamma^2 / (P + sigma^2 Gamma) - 2 r Gamma - Q with
    Gamma(T) = Q(T). Integrated in reversed time on a grid with 4*n_grid
    intervals. Raises BlowUp if |Gamma| exceeds 1e8 or the denominator
    P + sigma^2 Gamma stops being positive.
    """
    T, r = params.T, params.r
    kap2 = params.kappa ** 2
    sig2 = params.sigma ** 2
    n_fine = 4 * n_grid
    h = T / n_fine
    # coefficient values at every half step of the fine grid, forward order
    t_half = np.linspace(0.0, T, 2 * n_fine + 1)
    Ph = np.stack([reward.P(t) for t in t_half])
    Qh = np.stack([reward.Q(t) for t in t_half])
    out = np.empty((params.H, n_fine + 1))
    g = Qh[-1].copy()
    out[:, n_fine] = g

    def rhs(j_half, gval):
        den = Ph[j_half] + sig2 * gval
        if np.any(den <= 0.0):
            raise BlowUp("P + sigma^2 Gamma lost positivity")
        # reversed time: d/dtau = -d/dt
        return 2.0 * r * gval + Qh[j_half] - kap2 * gval ** 2 / den

    for i in range(n_fine):
        j = 2 * (n_fine - i)          # forward half-grid index of current node
        k1 = rhs(j, g)
        k2 = rhs(j - 1, g + 0.5 * h * k1)
        k3 = rhs(j - 1, g + 0.5 * h * k2)
        k4 = rhs(j - 2, g + h * k3)
        g = g + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(np.abs(g) > GAMMA_BLOWUP):
            raise BlowUp("Gamma exceeded 1e8")
        out[:, n_fine - 1 - i] = g
    return GammaCurves(T=T, n_grid=n_grid, values=out)


def _drift_matrix(params: MarketParams, sm: SharingMatrices, A_diag: np.ndarray) -> np.ndarray:
    """(Pi - K) diag(A) as a dense matrix."""
    return (sm.Pi - sm.K) * A_diag[None, :]


def _coefficient_arrays(params: MarketParams, reward: Quadratic, gamma: GammaCurves,
                        stride: int):
    """A, b, (Pi-K)A, diag(Q(I-S)) and l + (Pi-K)b at every stride-th fine node."""
    sm = sharing_matrices(params)
    G = gamma.values[:, ::stride].T                       # (m+1, H)
    m = G.shape[0] - 1
    t_nodes = np.linspace(0.0, gamma.T, m + 1)
    P = np.stack([reward.P(t) for t in t_nodes])
    Q = np.stack([reward.Q(t) for t in t_nodes])
    R = np.stack([reward.R(t) for t in t_nodes])
    S = np.stack([reward.S(t) for t in t_nodes])
    s2g = params.sigma ** 2 * G
    A = params.kappa / (s2g + P * (1.0 - R))
    b = s2g / (s2g + P * (1.0 - R))
    PK_A = (sm.Pi - sm.K)[None, :, :] * A[:, None, :]     # (m+1, H, H)
    QIS = Q * (1.0 - S)                                   # diagonal entries
    inhom = params.l[None, :] + b @ (sm.Pi - sm.K).T
    return A, b, PK_A, QIS, inhom


def solve_xi_zeta(params: MarketParams, reward: Quadratic, gamma: GammaCurves) -> XiZetaCurves:
    """Backward integration of the affine representation pbar = Xi z + zeta.

    dXi/dt = -2r Xi - Xi (Pi - K) A_t Xi - Q_t (I - S_t), Xi(T) = Q_T (I-S_T);
    dzeta/dt = -(r I + Xi (Pi - K) A_t) zeta - Xi (l + (Pi - K) b_t),
    zeta(T) = -gamma.
    """
    T, r = params.T, params.r
    n2 = 2 * gamma.n_grid
    h = T / n2
    H = params.H
    # coefficients at quarter nodes (= stage points of the half-grid sweep)
    _, _, PK_A, QIS, inhom = _coefficient_arrays(params, reward, gamma, stride=1)
    Xi = np.zeros((n2 + 1, H, H))
    zeta = np.zeros((n2 + 1, H))
    Xi[n2] = np.diag(QIS[-1])
    zeta[n2] = -reward.gamma

    def rhs(jq, xi, zt):
        xpk = xi @ PK_A[jq]
        dxi = 2.0 * r * xi + xpk @ xi
        dxi[np.arange(H), np.arange(H)] += QIS[jq]
        dzt = r * zt + xpk @ zt + xi @ inhom[jq]
        return dxi, dzt

    xi, zt = Xi[n2].copy(), zeta[n2].copy()
    for i in range(n2):
        jq = 2 * (n2 - i)          # quarter-grid index of current node
        k1 = rhs(jq, xi, zt)
        k2 = rhs(jq - 1, xi + 0.5 * h * k1[0], zt + 0.5 * h * k1[1])
        k3 = rhs(jq - 1, xi + 0.5 * h * k2[0], zt + 0.5 * h * k2[1])
        k4 = rhs(jq - 2, xi + h * k3[0], zt + h * k3[1])
        xi = xi + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        zt = zt + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        if np.max(np.abs(xi)) > GAMMA_BLOWUP:
            raise BlowUp("Xi exceeded 1e8")
        Xi[n2 - 1 - i] = xi
        zeta[n2 - 1 - i] = zt
    return XiZetaCurves(T=T, n_grid=gamma.n_grid, Xi=Xi, zeta=zeta)


@dataclass(frozen=True)
class MeanFieldSolution:
    """Equilibrium curves of the unconstrained quadratic game on the base grid."""

    T: float
    n_grid: int
    t: np.ndarray          # (n+1,)
    Gamma: np.ndarray      # (H, n+1)
    Xi: np.ndarray         # (n+1, H, H)
    zeta: np.ndarray       # (n+1, H)
    z: np.ndarray          # (n+1, H)
    pbar: np.ndarray       # (n+1, H)
    vbar: np.ndarray       # (n+1, H)
    diagnostics: dict = field(default_factory=dict)
    _gamma_fine: Optional[GammaCurves] = None
    _xizeta_fine: Optional[XiZetaCurves] = None

    def stride_for(self, n_steps: int) -> int:
        if self.n_grid % n_steps != 0:
            raise ValueError(f"{n_steps} steps do not divide the {self.n_grid}-node grid")
        return self.n_grid // n_steps

    def sample(self, n_steps: int) -> dict:
        """Down-sample all curves to an n_steps uniform grid by node matching."""
        s = self.stride_for(n_steps)
        return {
            "t": self.t[::s],
            "z": self.z[::s],
            "pbar": self.pbar[::s],
            "vbar": self.vbar[::s],
            "Gamma": self.Gamma[:, ::s],
        }

    def to_csv(self, path) -> None:
        """Columns: t, then per-class z, vbar, Gamma, pbar."""
        H = self.z.shape[1]
        header = ["t"]
        for name in ("z", "vbar", "Gamma", "pbar"):
            header += [f"{name}{h + 1}" for h in range(H)]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(self.t.shape[0]):
                row = [f"{self.t[i]:.9g}"]
                for arr in (self.z[i], self.vbar[i], self.Gamma[:, i], self.pbar[i]):
                    row += [f"{val:.9g}" for val in arr]
                writer.writerow(row)


def mean_field_solution(params: MarketParams, reward: Quadratic,
                        gamma: GammaCurves, xizeta: XiZetaCurves) -> MeanFieldSolution:
    """Forward mean-wealth integration and assembly of the equilibrium curves.

    dz/dt = r z + l + (Pi - K)(A_t pbar_t + b_t) with pbar = Xi z + zeta and
    z_0 the initial mean wealth.
    """
    sm = sharing_matrices(params)
    n = gamma.n_grid
    T, r = params.T, params.r
    h = T / n
    H = params.H
    z = np.zeros((n + 1, H))
    z[0] = params.xi_mean
    # coefficients at half nodes (= stage points of the base-grid sweep)
    A2, b2, _, _, _ = _coefficient_arrays(params, reward, gamma, stride=2)
    PK = sm.Pi - sm.K

    def rhs(j_half, zval):
        pbar = xizeta.Xi[j_half] @ zval + xizeta.zeta[j_half]
        return r * zval + params.l + PK @ (A2[j_half] * pbar + b2[j_half])

    cur = z[0].copy()
    for i in range(n):
        jh = 2 * i
        k1 = rhs(jh, cur)
        k2 = rhs(jh + 1, cur + 0.5 * h * k1)
        k3 = rhs(jh + 1, cur + 0.5 * h * k2)
        k4 = rhs(jh + 2, cur + h * k3)
        cur = cur + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        z[i + 1] = cur

    t_nodes = np.linspace(0.0, T, n + 1)
    Xi = xizeta.Xi[::2]
    zeta = xizeta.zeta[::2]
    pbar = np.einsum("nij,nj->ni", Xi, z) + zeta
    GammaB = gamma.on_base_grid()
    A_base, b_base = A2[::2], b2[::2]
    vbar = A_base * pbar + b_base
    S_base = np.stack([reward.S(t) for t in t_nodes])
    IS = np.zeros((n + 1, H, H))
    IS[:, np.arange(H), np.arange(H)] = 1.0 - S_base
    LamA = (sm.K - sm.Pi)[None, :, :] * A_base[:, None, :]
    lam_IS = float(np.min(np.linalg.eigvalsh((IS + np.swapaxes(IS, 1, 2)) / 2.0)))
    lam_LA = float(np.min(np.linalg.eigvalsh((LamA + np.swapaxes(LamA, 1, 2)) / 2.0)))
    return MeanFieldSolution(
        T=T,
        n_grid=n,
        t=t_nodes,
        Gamma=GammaB,
        Xi=Xi,
        zeta=zeta,
        z=z,
        pbar=pbar,
        vbar=vbar,
        diagnostics={
            "min_eig_identity_minus_mean_anchor": lam_IS,
            "min_eig_premium_gap_times_gain": lam_LA,
        },
        _gamma_fine=gamma,
        _xizeta_fine=xizeta,
    )


def solve(params: MarketParams, reward: Quadratic, n_grid: int = 1000) -> MeanFieldSolution:
    """Full oracle pipeline: Gamma, then (Xi, zeta), then the mean curves."""
    gamma = solve_gamma(params, reward, n_grid)
    xizeta = solve_xi_zeta(params, reward, gamma)
    return mean_field_solution(params, reward, gamma, xizeta)


def direct_pbar_route(params: MarketParams, reward: Quadratic,
                      gamma: GammaCurves) -> np.ndarray:
    """Solve the linear two-point system for (z, pbar) without the affine ansatz.

    Propagates the fundamental matrix of the coupled linear system forward,
    solves the terminal linear condition pbar_T = Q_T (I - S_T) z_T - gamma
    for pbar_0, and reconstructs pbar on the base grid. Used as an independent
    cross-check of the Xi/zeta representation.
    """
    sm = sharing_matrices(params)
    n = gamma.n_grid
    T, r = params.T, params.r
    h = T / n
    H = params.H
    dim = 2 * H

    def system(t, j_half):
        coeff = coefficient_matrices(t, gamma.at(j_half, stride=2), params, reward)
        L = np.zeros((dim, dim))
        L[:H, :H] = r * np.eye(H)
        L[:H, H:] = (sm.Pi - sm.K) * coeff.A[None, :]
        L[H:, :H] = -np.diag(reward.Q(t) * (1.0 - reward.S(t)))
        L[H:, H:] = -r * np.eye(H)
        c = np.zeros(dim)
        c[:H] = params.l + (sm.Pi - sm.K) @ coeff.b
        return L, c

    Phi = np.zeros((n + 1, dim, dim))
    part = np.zeros((n + 1, dim))
    Phi[0] = np.eye(dim)

    def rhs(t, j_half, state):
        L, c = system(t, j_half)
        phi, yp = state
        return L @ phi, L @ yp + c

    phi, yp = Phi[0].copy(), part[0].copy()
    for i in range(n):
        t = i * h
        jh = 2 * i
        k1 = rhs(t, jh, (phi, yp))
        k2 = rhs(t + 0.5 * h, jh + 1, (phi + 0.5 * h * k1[0], yp + 0.5 * h * k1[1]))
        k3 = rhs(t + 0.5 * h, jh + 1, (phi + 0.5 * h * k2[0], yp + 0.5 * h * k2[1]))
        k4 = rhs(t + h, jh + 2, (phi + h * k3[0], yp + h * k3[1]))
        phi = phi + (h / 6.0) * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0])
        yp = yp + (h / 6.0) * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1])
        Phi[i + 1] = phi
        part[i + 1] = yp

    QT_IS = np.diag(reward.Q(T) * (1.0 - reward.S(T)))
    z0 = params.xi_mean
    # terminal block equation for q = pbar(0)
    Pzz, Pzp = Phi[n][:H, :H], Phi[n][:H, H:]
    Ppz, Ppp = Phi[n][H:, :H], Phi[n][H:, H:]
    cz, cp = part[n][:H], part[n][H:]
    lhs = Ppp - QT_IS @ Pzp
    rhsv = QT_IS @ (Pzz @ z0 + cz) - reward.gamma - Ppz @ z0 - cp
    q = np.linalg.solve(lhs, rhsv)
    state0 = np.concatenate([z0, q])
    traj = np.einsum("nij,j->ni", Phi, state0) + part
    return traj[:, H:]


def simulate_optimal_wealth(params: MarketParams, reward: Quadratic,
                            solution: MeanFieldSolution, batch: PathBatch) -> dict:
    """Forward Monte-Carlo of the equilibrium feedback strategy.

    v_t = C_t (Gamma_t (x_t - z_t) + pbar_t) + D_t vbar_t + e_t applied along
    Euler-Maruyama paths of the wealth equation; returns per-path wealth and
    strategies plus their empirical means.
    """
    M = batch.n_steps
    stride = solution.stride_for(M)
    dt = batch.dt
    n = batch.n_paths
    H = params.H
    sm = sharing_matrices(params)
    x = np.empty((n, M + 1, H))
    v = np.empty((n, M, H))
    p = np.empty((n, M, H))
    if np.any(params.xi_var > 0.0):
        raise ValueError("stochastic initial wealth not used by this simulator")
    x[:, 0, :] = params.xi_mean[None, :]
    for i in range(M):
        t = i * dt
        j = i * stride
        coeff = coefficient_matrices(t, solution.Gamma[:, j], params, reward)
        z_t = solution.z[j]
        pbar_t = solution.pbar[j]
        vbar_t = solution.vbar[j]
        p_i = solution.Gamma[:, j][None, :] * (x[:, i, :] - z_t[None, :]) + pbar_t[None, :]
        v_i = coeff.C[None, :] * p_i + coeff.D[None, :] * vbar_t[None, :] + coeff.e[None, :]
        drift = (
            params.r * x[:, i, :]
            + params.l[None, :]
            - params.kappa[None, :] * v_i
            + (sm.Pi @ vbar_t)[None, :]
        )
        diffusion = params.sigma[None, :] * (1.0 - v_i)
        x[:, i + 1, :] = euler_step(x[:, i, :], drift, diffusion, batch.dW[:, i, :], dt, step=i)
        v[:, i, :] = v_i
        p[:, i, :] = p_i
    return {
        "x": x,
        "v": v,
        "p": p,
        "mean_x": x.mean(axis=0),
        "mean_v": v.mean(axis=0),
    }


# ---------------------------------------------------------------------------
# Fixed-point validation
# ---------------------------------------------------------------------------


def mean_response_map(params: MarketParams, reward: Quadratic,
                      solution: MeanFieldSolution, vbar: np.ndarray) -> np.ndarray:
    """Mean best-response map holding the adjoint state fixed at the solution.

    E[v] = (kappa pbar + sigma E[eta]) / P + R vbar with pbar and E[eta] taken
    from the solved equilibrium; its Lipschitz constant in vbar is exactly
    sup_t |R_t|.
    """
    out = np.empty_like(vbar)
    for i, t in enumerate(solution.t):
        P = reward.P(t)
        R = reward.R(t)
        eta_mean = params.sigma * solution.Gamma[:, i] * (1.0 - solution.vbar[i])
        out[i] = (params.kappa * solution.pbar[i] + params.sigma * eta_mean) / P + R * vbar[i]
    return out


@dataclass(frozen=True)
class PicardResult:
    vbar: np.ndarray       # (2n+1, H) on the half grid
    z: np.ndarray
    t: np.ndarray
    iterations: int
    converged: bool
    sup_steps: np.ndarray  # successive sup-norm changes


def _half_step_values(arr: np.ndarray) -> np.ndarray:
    """Fourth-order midpoint interpolation between uniform nodes (per column)."""
    n = arr.shape[0] - 1
    mid = np.empty((n,) + arr.shape[1:])
    if n >= 3:
        mid[1:-1] = (-arr[:-3] + 9.0 * arr[1:-2] + 9.0 * arr[2:-1] - arr[3:]) / 16.0
        mid[0] = (5.0 * arr[0] + 15.0 * arr[1] - 5.0 * arr[2] + arr[3]) / 16.0
        mid[-1] = (arr[-4] - 5.0 * arr[-3] + 15.0 * arr[-2] + 5.0 * arr[-1]) / 16.0
    else:
        mid[:] = 0.5 * (arr[:-1] + arr[1:])
    return mid


def picard_fixed_point(params: MarketParams, reward: Quadratic, n_grid: int = 1000,
                       tol: float = 1e-8, max_iter: int = 200) -> PicardResult:
    """Picard iteration on the mean curves (z, vbar), starting from vbar = 0.

    Each sweep solves the representative member's response to exogenous
    (z, vbar) through the member-level affine representation p = Gamma x + chi
    (a plain scalar control problem, not the coupled mean-field reduction) and
    maps the pair to (E[x], E[v]). Convergence of the sweep therefore
    validates the mean-field consistency conditions directly.
    """
    gamma = solve_gamma(params, reward, n_grid)
    T, r = params.T, params.r
    n2 = 2 * n_grid
    h = T / n2
    H = params.H
    t_nodes = np.linspace(0.0, T, n2 + 1)
    sm = sharing_matrices(params)

    sig2 = params.sigma ** 2
    G = gamma.values[:, ::2].T          # (n2+1, H), half-grid nodes
    G_mid = gamma.values[:, 1::2].T     # (n2,  H), quarter nodes between them
    P_nodes = np.stack([reward.P(t) for t in t_nodes])
    R_nodes = np.stack([reward.R(t) for t in t_nodes])
    Q_nodes = np.stack([reward.Q(t) for t in t_nodes])
    S_nodes = np.stack([reward.S(t) for t in t_nodes])
    tm = t_nodes[:-1] + 0.5 * h
    P_mid = np.stack([reward.P(t) for t in tm])
    R_mid = np.stack([reward.R(t) for t in tm])
    Q_mid = np.stack([reward.Q(t) for t in tm])
    S_mid = np.stack([reward.S(t) for t in tm])

    vbar = np.zeros((n2 + 1, H))
    z = np.tile(params.xi_mean, (n2 + 1, 1))
    sup_steps = []

    def sweep(z_in, vbar_in):
        l_tilde = params.l[None, :] + vbar_in @ sm.Pi.T
        lt_mid = _half_step_values(l_tilde)
        z_mid = _half_step_values(z_in)
        vb_mid = _half_step_values(vbar_in)

        def chi_rhs(Gv, Pv, Qv, Sv, Rv, zv, vbv, ltv, chi):
            v0 = (params.kappa * chi + sig2 * Gv + Pv * Rv * vbv) / (Pv + sig2 * Gv)
            # reversed time: d chi/d tau = r chi - Q S z + Gamma l_tilde - kappa Gamma v0
            return r * chi - Qv * Sv * zv + Gv * ltv - params.kappa * Gv * v0

        chi = np.empty((n2 + 1, H))
        chi[n2] = -Q_nodes[n2] * S_nodes[n2] * z_in[n2] - reward.gamma
        cur = chi[n2].copy()
        for i in range(n2):
            j = n2 - i           # current forward node index
            k1 = chi_rhs(G[j], P_nodes[j], Q_nodes[j], S_nodes[j], R_nodes[j],
                         z_in[j], vbar_in[j], l_tilde[j], cur)
            k2 = chi_rhs(G_mid[j - 1], P_mid[j - 1], Q_mid[j - 1], S_mid[j - 1], R_mid[j - 1],
                         z_mid[j - 1], vb_mid[j - 1], lt_mid[j - 1], cur + 0.5 * h * k1)
            k3 = chi_rhs(G_mid[j - 1], P_mid[j - 1], Q_mid[j - 1], S_mid[j - 1], R_mid[j - 1],
                         z_mid[j - 1], vb_mid[j - 1], lt_mid[j - 1], cur + 0.5 * h * k2)
            k4 = chi_rhs(G[j - 1], P_nodes[j - 1], Q_nodes[j - 1], S_nodes[j - 1], R_nodes[j - 1],
                         z_in[j - 1], vbar_in[j - 1], l_tilde[j - 1], cur + h * k3)
            cur = cur + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            chi[j - 1] = cur
        chi_mid = _half_step_values(chi)

        def ev(Gv, Pv, Rv, chiv, vbv, mval):
            return (params.kappa * (Gv * mval + chiv) + sig2 * Gv + Pv * Rv * vbv) / (Pv + sig2 * Gv)

        def m_rhs(Gv, Pv, Rv, chiv, vbv, ltv, mval):
            return r * mval + ltv - params.kappa * ev(Gv, Pv, Rv, chiv, vbv, mval)

        m = np.empty((n2 + 1, H))
        m[0] = params.xi_mean
        cur = m[0].copy()
        for i in range(n2):
            k1 = m_rhs(G[i], P_nodes[i], R_nodes[i], chi[i], vbar_in[i], l_tilde[i], cur)
            k2 = m_rhs(G_mid[i], P_mid[i], R_mid[i], chi_mid[i], vb_mid[i], lt_mid[i],
                       cur + 0.5 * h * k1)
            k3 = m_rhs(G_mid[i], P_mid[i], R_mid[i], chi_mid[i], vb_mid[i], lt_mid[i],
                       cur + 0.5 * h * k2)
            k4 = m_rhs(G[i + 1], P_nodes[i + 1], R_nodes[i + 1], chi[i + 1], vbar_in[i + 1],
                       l_tilde[i + 1], cur + h * k3)
            cur = cur + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            m[i + 1] = cur

        v_next = np.empty((n2 + 1, H))
        for i in range(n2 + 1):
            v_next[i] = ev(G[i], P_nodes[i], R_nodes[i], chi[i], vbar_in[i], m[i])
        return m, v_next

    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        z_new, v_new = sweep(z, vbar)
        step = max(float(np.max(np.abs(v_new - vbar))), float(np.max(np.abs(z_new - z))))
        sup_steps.append(step)
        z, vbar = z_new, v_new
        if step < tol:
            converged = True
            break
    return PicardResult(
        vbar=vbar, z=z, t=t_nodes, iterations=iterations,
        converged=converged, sup_steps=np.asarray(sup_steps),
    )


# ---------------------------------------------------------------------------
# Residual checks
# ---------------------------------------------------------------------------


def ode_residuals(params: MarketParams, reward: Quadratic,
                  solution: MeanFieldSolution) -> dict:
    """Centered-difference residuals of the solved curves on the base grid.

    Returns the maximum absolute interior residual for the Gamma, Xi and zeta
    equations, plus the terminal condition gaps (which should be exactly 0).
    """
    sm = sharing_matrices(params)
    n = solution.n_grid
    h = solution.T / n
    t = solution.t
    kap2 = params.kappa ** 2
    sig2 = params.sigma ** 2
    r = params.r
    H = params.H

    P = np.stack([reward.P(ti) for ti in t])
    Q = np.stack([reward.Q(ti) for ti in t])
    R = np.stack([reward.R(ti) for ti in t])
    S = np.stack([reward.S(ti) for ti in t])
    G = solution.Gamma.T                                # (n+1, H)
    Xi = solution.Xi
    zeta = solution.zeta
    inner = slice(1, n)

    dG = (G[2:] - G[:-2]) / (2.0 * h)
    rhs_g = kap2 * G[inner] ** 2 / (P[inner] + sig2 * G[inner]) \
        - 2.0 * r * G[inner] - Q[inner]
    res_gamma = float(np.max(np.abs(dG - rhs_g)))

    s2g = sig2 * G
    A = params.kappa / (s2g + P * (1.0 - R))            # (n+1, H)
    b = s2g / (s2g + P * (1.0 - R))
    PK_A = (sm.Pi - sm.K)[None, :, :] * A[:, None, :]   # (n+1, H, H)
    QIS = np.zeros((n + 1, H, H))
    QIS[:, np.arange(H), np.arange(H)] = Q * (1.0 - S)

    dXi = (Xi[2:] - Xi[:-2]) / (2.0 * h)
    rhs_xi = -2.0 * r * Xi[inner] - Xi[inner] @ PK_A[inner] @ Xi[inner] - QIS[inner]
    res_xi = float(np.max(np.abs(dXi - rhs_xi)))

    dz = (zeta[2:] - zeta[:-2]) / (2.0 * h)
    inhom = params.l[None, :] + b @ (sm.Pi - sm.K).T    # (n+1, H)
    rhs_z = -r * zeta[inner] \
        - np.einsum("nij,nj->ni", Xi[inner] @ PK_A[inner], zeta[inner]) \
        - np.einsum("nij,nj->ni", Xi[inner], inhom[inner])
    res_zeta = float(np.max(np.abs(dz - rhs_z)))

    T = solution.T
    term_gamma = float(np.max(np.abs(G[n] - reward.Q(T))))
    term_xi = float(np.max(np.abs(Xi[n] - np.diag(reward.Q(T) * (1.0 - reward.S(T))))))
    term_zeta = float(np.max(np.abs(zeta[n] + reward.gamma)))
    return {
        "gamma": res_gamma,
        "xi": res_xi,
        "zeta": res_zeta,
        "terminal_gamma": term_gamma,
        "terminal_xi": term_xi,
        "terminal_zeta": term_zeta,
    }

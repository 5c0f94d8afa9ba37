import numpy as np
import pytest

from micmfg import cases, deepbsde, paths, riccati
from micmfg.deepbsde import (
    GridMismatch,
    NetBundle,
    TrainingConfig,
    load_checkpoint,
    project,
    relative_error,
    reward_gradients,
    rollout_loss,
    save_checkpoint,
    terminal_gradient,
    train,
)
from micmfg.model import HaraMixture, Interval, Quadratic, SurvivalSpec, build_market


def _single_class(constrained=True, **over):
    cfg = {
        "H": 1, "r": 0.03, "T": 1.0, "kappa": 0.5, "sigma": 0.3, "d": 0.05,
        "e": 0.01, "net_income": 0.02, "omega": 1.0, "xi_mean": 2.0,
    }
    if constrained:
        cfg["constraint"] = [0.0, 1.0]
    cfg.update(over)
    return build_market(cfg)


def _quad(H=1, **over):
    kw = dict(Q=1.0, P=1.0, R=0.1, S=0.6, gamma=1.0, T=1.0)
    kw.update(over)
    return Quadratic.make(H, **kw)


def _randomized_nets(H, hidden, scale=0.3, seed=5):
    nets = NetBundle.build(H, seed=123, hidden=hidden)
    rng = np.random.default_rng(seed)
    for net in nets.all_nets():
        for k in range(len(net.params)):
            net.params[k] = net.params[k] + scale * rng.standard_normal(net.params[k].shape)
    return nets


def test_project_clamps_and_passes_through():
    box = Interval(0.0, 1.0)
    assert project(1.2, box) == 1.0
    assert project(-0.27, box) == 0.0
    assert project(0.35, None) == 0.35
    arr = project(np.array([-1.0, 0.5, 2.0]), box)
    assert np.array_equal(arr, [0.0, 0.5, 1.0])


def test_projection_monotone_composition_inequality():
    # For any non-decreasing map, projecting the arguments can only reduce
    # the matched increment product.
    rng = np.random.default_rng(8)
    box = Interval(-0.4, 0.9)
    for _ in range(500):
        a, b = rng.uniform(-3, 3, 2)
        knots = np.sort(rng.uniform(-4, 4, 5))
        slopes = rng.uniform(0.0, 2.0, 6)

        def phi(x):
            val = 0.0
            prev = knots[0]
            for k, s in zip(knots, slopes[:-1]):
                val += s * (min(x, k) - min(prev, k))
                prev = k
            return val + slopes[-1] * max(x - knots[-1], 0.0)

        ap, bp = project(a, box), project(b, box)
        lhs = (ap - bp) * (phi(a) - phi(b))
        rhs = (ap - bp) * (phi(ap) - phi(bp))
        assert lhs >= rhs - 1e-12


def test_reward_gradients_quadratic_point():
    reward = _quad()
    fx, P, R = reward_gradients(reward, 0.0, [[2.0]], [2.0])
    assert abs(fx[0, 0] - (-0.8)) < 1e-15
    assert P[0] == 1.0 and R[0] == 0.1
    # affine inverse of the strategy channel: v = -u/P + R vbar
    u, vbar = -0.3, 0.5
    assert abs((-u / P[0] + R[0] * vbar) - 0.35) < 1e-15


def test_reward_gradients_hara_kink_is_continuous():
    reward = HaraMixture.make(1, gamma=0.5, a=1.0, b=5.0, Q=1.0, P=1.0, R=0.1,
                              B=2.5, T=1.0)
    fx0, _, _ = reward_gradients(reward, 0.0, [[0.0]], [0.0])
    assert abs(fx0[0, 0] - (5 ** -0.5 + 2.5)) < 1e-12
    left, _, _ = reward_gradients(reward, 0.0, [[-1e-9]], [0.0])
    right, _, _ = reward_gradients(reward, 0.0, [[1e-9]], [0.0])
    assert abs(left[0, 0] - right[0, 0]) < 1e-8


def test_terminal_gradient_points():
    reward = _quad()
    g = terminal_gradient(reward, [[2.0]], [2.0])
    assert abs(-g[0, 0] - (-0.2)) < 1e-15      # adjoint target is -g_x
    sym = _quad(S=1.0)
    for x in (0.5, 2.0, -3.0):
        g = terminal_gradient(sym, [[x]], [x])
        assert abs(-g[0, 0] - (-1.0)) < 1e-14  # equals -gamma when x = z
    hara = HaraMixture.make(1, gamma=0.5, a=1.0, b=5.0, Q=1.0, P=1.0, R=0.1,
                            B=2.5, T=1.0)
    gm = terminal_gradient(hara, [[-2.0], [-1.0]][0:1], [0.0])
    slope = 1.0 * 5.0 ** -0.5
    assert abs(gm[0, 0] - (slope - 1.0 * (-2.0 - 2.5))) < 1e-12


def test_rollout_deterministic_bias_case():
    # no diffusion, negligible premium, matched anchors: loss reduces to the
    # squared output bias of the adjoint initializer
    p = _single_class(kappa=1e-12, d=1e-13, sigma=0.0, r=0.0)
    reward = _quad(S=1.0, gamma=0.0)
    nets = NetBundle.build(1, seed=3, hidden=8)
    batch = paths.brownian_increments(16, 8, 1, seed=1, dt=0.125)
    res = rollout_loss(nets, p, reward, batch, lam=2.0, want_grads=False)
    assert res.loss == 0.0
    nets.p0[0].params[5][:] = 0.3
    res = rollout_loss(nets, p, reward, batch, lam=2.0, want_grads=False)
    assert abs(res.loss - 0.09) < 1e-12
    assert abs(res.terminal_error - 0.09) < 1e-12
    assert res.meanfield_error < 1e-24   # residual premium rate is 1e-12, not 0


def test_penalty_decouples_at_lambda_zero():
    p = _single_class()
    reward = _quad()
    nets = _randomized_nets(1, hidden=8)
    batch = paths.brownian_increments(64, 10, 1, seed=2, dt=0.1)
    r0 = rollout_loss(nets, p, reward, batch, lam=0.0, want_grads=False)
    r5 = rollout_loss(nets, p, reward, batch, lam=5.0, want_grads=False)
    assert r0.loss == r0.terminal_error
    assert abs(r5.loss - (r5.terminal_error + 5.0 * r5.meanfield_error)) < 1e-15
    assert r0.terminal_error == r5.terminal_error


def gradient_check(hidden, n_paths=8, n_steps=4, tol=1e-3, step=1e-4):
    """Shared rollout gradient check; returns (checked, failed, worst)."""
    p = _single_class()
    reward = _quad()
    nets = _randomized_nets(1, hidden=hidden)
    batch = paths.brownian_increments(n_paths, n_steps, 1, seed=9, dt=1.0 / n_steps)
    res = rollout_loss(nets, p, reward, batch, lam=3.0)
    checked = failed = 0
    worst = 0.0
    for par, grad in zip(nets.all_params(), res.grads):
        fp, fg = par.ravel(), grad.ravel()
        for j in range(fp.size):
            orig = fp[j]
            fp[j] = orig + step
            lp = rollout_loss(nets, p, reward, batch, lam=3.0, want_grads=False).loss
            fp[j] = orig - step
            lm = rollout_loss(nets, p, reward, batch, lam=3.0, want_grads=False).loss
            fp[j] = orig
            fd = (lp - lm) / (2.0 * step)
            rel = abs(fd - fg[j]) / max(abs(fd), abs(fg[j]), 1e-8)
            worst = max(worst, rel)
            checked += 1
            failed += rel > tol
    return checked, failed, worst


def test_rollout_gradients_match_finite_differences_small():
    checked, failed, worst = gradient_check(hidden=6)
    assert checked > 200
    assert failed / checked <= 0.05


def test_constraint_satisfied_exactly_per_path():
    p = _single_class()
    reward = _quad()
    nets = _randomized_nets(1, hidden=8, scale=0.8)
    batch = paths.brownian_increments(256, 20, 1, seed=4, dt=0.05)
    res = rollout_loss(nets, p, reward, batch, lam=1.0, want_grads=False,
                       keep_paths=True)
    v = res.paths["v"]
    assert v.min() >= 0.0 and v.max() <= 1.0
    assert res.vbar.min() >= 0.0 and res.vbar.max() <= 1.0
    assert np.any(v == 0.0) or np.any(v == 1.0)   # the clamp actually engaged


def test_training_is_bit_deterministic():
    p = _single_class()
    reward = _quad()
    config = TrainingConfig(n_paths=64, n_steps=10, iterations=25, seed=17,
                            penalty=1.0, hidden=8)
    a = train(p, reward, config)
    b = train(p, reward, config)
    assert np.array_equal(a.loss_history, b.loss_history)
    assert np.array_equal(a.vbar, b.vbar)
    c = train(p, reward, TrainingConfig(n_paths=64, n_steps=10, iterations=25,
                                        seed=18, penalty=1.0, hidden=8))
    assert not np.array_equal(a.loss_history, c.loss_history)


def test_frozen_batch_mode_differs_from_resampling():
    p = _single_class()
    reward = _quad()
    base = dict(n_paths=64, n_steps=10, iterations=25, seed=17, penalty=1.0, hidden=8)
    fresh = train(p, reward, TrainingConfig(**base))
    frozen = train(p, reward, TrainingConfig(**base, resample=False))
    assert not np.array_equal(fresh.loss_history, frozen.loss_history)


def test_train_requires_solvable_setup():
    p = _single_class()
    bad = _quad(S=1.2)
    config = TrainingConfig(n_paths=32, n_steps=5, iterations=2, penalty=1.0, hidden=8)
    with pytest.raises(ValueError):
        train(p, bad, config)
    config_ok = TrainingConfig(n_paths=32, n_steps=5, iterations=2, penalty=1.0,
                               hidden=8, allow_ill_posed=True)
    with pytest.warns(UserWarning):
        train(p, bad, config_ok)


def test_divergence_guard_trips():
    p = _single_class()
    reward = _quad()
    config = TrainingConfig(n_paths=32, n_steps=8, iterations=120, seed=0,
                            penalty=1.0, hidden=8, learning_rate=30.0)
    with pytest.raises((deepbsde.EarlyDivergence, deepbsde.NonFiniteLoss)):
        train(p, reward, config)


def test_diagnostics_reproduce_on_fresh_batch():
    p = _single_class()
    reward = _quad()
    config = TrainingConfig(n_paths=512, n_steps=20, iterations=40, seed=11,
                            penalty=1.0, hidden=8)
    solver = train(p, reward, config)
    fresh = paths.brownian_increments(512, 20, 1, seed=11, dt=0.05,
                                      draw=config.iterations + 7)
    redo = deepbsde.rollout_loss(solver.nets, p, reward, fresh, config.penalty,
                                 want_grads=False)
    band = 2.0 * (solver.residual_sq_stderr + redo.residual_sq_stderr)
    assert abs(redo.terminal_error - solver.terminal_error) <= band


def test_relative_error_identity_and_grid_mismatch(oracle_1a, baseline_unconstrained):
    params, reward, _ = baseline_unconstrained
    sampled = oracle_1a.sample(100)
    solver = deepbsde.TrainedSolver(
        nets=None, config=None, constrained=False,
        t=sampled["t"], vbar=sampled["vbar"][:-1].T.copy(),
        z=sampled["z"].T.copy(),
        terminal_error=0.0, meanfield_error=0.0, residual_sq_stderr=0.0,
        loss_history=np.zeros((1, 3)),
    )
    assert relative_error(solver, oracle_1a) == 0.0
    bad = deepbsde.TrainedSolver(
        nets=None, config=None, constrained=False,
        t=np.linspace(0, 1, 8), vbar=np.zeros((2, 7)), z=np.zeros((2, 8)),
        terminal_error=0.0, meanfield_error=0.0, residual_sq_stderr=0.0,
        loss_history=np.zeros((1, 3)),
    )
    with pytest.raises(GridMismatch):
        relative_error(bad, oracle_1a)


def test_survival_mode_reduces_to_base_without_fees():
    p = _single_class(e=0.0, d_e=0.0, pi=[1.0])
    reward = _quad()
    nets = _randomized_nets(1, hidden=8)
    batch = paths.brownian_increments(64, 10, 1, seed=6, dt=0.1)
    surv = SurvivalSpec.exponential([0.0])
    plain = rollout_loss(nets, p, reward, batch, lam=2.0, want_grads=True)
    lived = rollout_loss(nets, p, reward, batch, lam=2.0, want_grads=True,
                         survival=surv)
    assert plain.loss == lived.loss
    for a, b in zip(plain.grads, lived.grads):
        assert np.array_equal(a, b)


def test_survival_mode_trains_with_exits():
    p = _single_class()
    reward = _quad()
    surv = SurvivalSpec.exponential([0.3])
    config = TrainingConfig(n_paths=128, n_steps=10, iterations=15, seed=2,
                            penalty=1.0, hidden=8)
    solver = train(p, reward, config, survival=surv)
    assert np.isfinite(solver.loss_history).all()


def test_checkpoint_roundtrip(tmp_path):
    p = _single_class()
    reward = _quad()
    config = TrainingConfig(n_paths=32, n_steps=5, iterations=3, seed=1,
                            penalty=1.0, hidden=8)
    solver = train(p, reward, config)
    target = tmp_path / "solver.ckpt"
    save_checkpoint(target, solver, p)
    digest, nets = load_checkpoint(target)
    assert len(digest) == 32
    stored = solver.nets.all_nets()
    assert len(nets) == len(stored)
    for loaded, net in zip(nets, stored):
        for a, b in zip(loaded, net.params):
            assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        other = tmp_path / "junk.bin"
        other.write_bytes(b"\x00" * 64)
        load_checkpoint(other)

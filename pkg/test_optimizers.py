"""
Pruebas de los optimizadores: h(λ), solver de λ, paso SSO, MuonSphere,
Muon y AdamW
"""

import numpy as np
import pytest

from src.errors import ConfigError, ShapeMismatch, ZeroMatrix
from src.models.optimizers import (OptimizerKind, OptimizerState, RetractionKind, SsoConfig,
                                   adamw_step, h_eval, muon_sphere_step, muon_step,
                                   optimizer_step, solve_lambda, sso_step)
from src.utils.matlin import (frobenius_norm, msign, nuclear_norm, power_iteration,
                              random_matrix, spectral_norm, svd_oracle)
from src.utils.spectral_geom import (RadiusSpec, lr_scaler, spectral_init,
                                     spectral_init_with_triplet, tangent_projector)

# msign a 8 iteraciones solo garantiza valores singulares en [1 − δ, 1 + δ]
MSIGN_DELTA = 1e-2


def _random_pair(shape, seed):
    w = random_matrix(*shape, std=0.02, seed=seed)
    g = random_matrix(*shape, std=0.02, seed=seed + 1000)
    theta = tangent_projector(power_iteration(w, max_iters=5000, tol=1e-12))
    return g / frobenius_norm(g), theta


def _structured_weight(d_out, d_in, R, seed):
    """W = Q₁ diag(s) Q₂ᵀ con σ₁ = R y hueco espectral amplio."""
    rng = np.random.default_rng(seed)
    q1, _ = np.linalg.qr(rng.standard_normal((d_out, d_out)))
    q2, _ = np.linalg.qr(rng.standard_normal((d_in, d_in)))
    k = min(d_out, d_in)
    s = R * np.linspace(1.0, 0.2, k) ** 2
    return (q1[:, :k] * s) @ q2[:, :k].T, q1, q2


# ============== CONFIGURACIÓN ==============

def test_config_defaults():
    cfg = SsoConfig()
    assert cfg.solver_tol == 2e-4
    assert cfg.solver_max_iters == 20
    assert cfg.msign_iters == 8
    assert cfg.retraction is RetractionKind.HARD


def test_config_coerces_enums():
    cfg = SsoConfig(retraction='dynamic', scaler='align_adam_rms')
    assert cfg.retraction is RetractionKind.DYNAMIC
    assert cfg.scaler.value == 'align_adam_rms'


@pytest.mark.parametrize('kwargs', [
    {'eta': 0.0}, {'beta': 1.0}, {'solver_tol': 0.0}, {'solver_max_iters': 0},
    {'msign_coefficients': 'desconocido'}, {'radius_c': -1.0}, {'bracket_growth': 1.0},
    {'adam_eta': 0.0},
])
def test_config_rejects_invalid(kwargs):
    with pytest.raises(ConfigError):
        SsoConfig(**kwargs)


# ============== h(λ) ==============

def test_h_orthogonal_subspaces_is_zero():
    _, q1, q2 = _structured_weight(12, 16, 1.0, seed=0)
    theta = np.outer(q1[:, 0], q2[:, 0])
    m_hat = np.outer(q1[:, 1], q2[:, 1])
    assert abs(h_eval(m_hat, theta, 0.0)) <= 1e-6


def test_h_aligned_is_one():
    _, q1, q2 = _structured_weight(8, 8, 1.0, seed=1)
    theta = np.outer(q1[:, 0], q2[:, 0])
    assert h_eval(theta, theta, 1.0) == pytest.approx(1.0, abs=MSIGN_DELTA)


def test_h_is_monotone_in_lambda():
    for shape in [(64, 192), (128, 32)]:
        for seed in range(20):
            m_hat, theta = _random_pair(shape, seed)
            span = 2.0 * nuclear_norm(m_hat)
            values = [h_eval(m_hat, theta, lam) for lam in np.linspace(-span, span, 41)]
            assert np.all(np.diff(values) >= -1e-6), (shape, seed)


def test_h_limits():
    m_hat, theta = _random_pair((32, 48), seed=3)
    far = 1e3 * nuclear_norm(m_hat)
    assert h_eval(m_hat, theta, far) == pytest.approx(1.0, abs=MSIGN_DELTA)
    assert h_eval(m_hat, theta, -far) == pytest.approx(-1.0, abs=MSIGN_DELTA)


def test_h_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        h_eval(np.ones((2, 3)), np.ones((3, 2)), 0.0)


# ============== SOLVER DE λ ==============

def test_solve_returns_zero_when_h0_within_tol():
    _, q1, q2 = _structured_weight(12, 16, 1.0, seed=2)
    theta = np.outer(q1[:, 0], q2[:, 0])
    m_hat = np.outer(q1[:, 1], q2[:, 1])
    report = solve_lambda(m_hat, theta, SsoConfig())
    assert report.lambda_star == 0.0
    assert report.evaluations == 1
    assert report.converged and not report.degenerate


def test_solve_aligned_momentum_is_degenerate():
    _, q1, q2 = _structured_weight(8, 8, 1.0, seed=4)
    theta = np.outer(q1[:, 0], q2[:, 0])
    report = solve_lambda(theta, theta, SsoConfig())
    assert report.lambda_star == pytest.approx(-1.0, abs=1e-3)
    assert report.degenerate


def test_solve_random_root_near_zero():
    m_hat, theta = _random_pair((64, 192), seed=5)
    report = solve_lambda(m_hat, theta, SsoConfig())
    nuclear = nuclear_norm(m_hat)
    assert report.converged
    assert report.residual <= 2e-4
    assert abs(report.lambda_star) <= 0.1 * nuclear


def test_solve_localization_and_residual():
    cfg = SsoConfig()
    for seed in range(10):
        m_hat, theta = _random_pair((32, 64), seed=40 + seed)
        report = solve_lambda(m_hat, theta, cfg)
        assert abs(report.lambda_star) <= 2.0 * nuclear_norm(m_hat)
        assert report.residual <= cfg.solver_tol or report.degenerate
        # Φ devuelto corresponde a λ*
        phi = msign(m_hat + report.lambda_star * theta)
        assert np.allclose(report.phi, phi, atol=1e-12)


def test_solve_respects_evaluation_budget():
    cfg = SsoConfig(solver_tol=1e-14, solver_max_iters=4)
    m_hat, theta = _random_pair((16, 24), seed=7)
    report = solve_lambda(m_hat, theta, cfg)
    assert report.evaluations <= cfg.solver_max_iters
    assert not report.converged and not report.degenerate


def test_exhausted_budget_is_not_degenerate():
    cfg = SsoConfig(solver_max_iters=3, bracket_init=2.0)
    for seed in range(20):
        m_hat, theta = _random_pair((16, 24), seed=200 + seed)
        report = solve_lambda(m_hat, theta, cfg)
        assert report.evaluations <= cfg.solver_max_iters, seed
        assert not report.degenerate, seed
        if not report.converged:
            assert report.residual > cfg.solver_tol
            assert np.allclose(report.phi, msign(m_hat + report.lambda_star * theta), atol=1e-12)


# ============== PASO SSO ==============

def _sphere_setup(shape=(32, 48), c=1.0, seed=0):
    d_out, d_in = shape
    radius = RadiusSpec(c=c, d_out=d_out, d_in=d_in)
    weight, triplet = spectral_init_with_triplet(d_out, d_in, radius, seed=seed)
    state = OptimizerState.zeros(shape)
    state.store_triplet(triplet)
    return weight, state, radius


def test_sso_drift_is_second_order():
    cfg = SsoConfig(beta=0.0, nesterov=False, solver_tol=1e-10, solver_max_iters=60,
                    power_tol=1e-10)
    weight, state, radius = _sphere_setup(seed=11)
    grad = random_matrix(32, 48, std=0.02, seed=12)
    drifts = []
    for eta in (1e-3, 5e-4):
        local = OptimizerState.zeros(weight.shape)
        local.store_triplet(power_iteration(weight, warm_start=state.cache(),
                                            max_iters=5000, tol=1e-12))
        new_weight, report = sso_step(weight, grad, local, cfg, radius, eta=eta)
        assert abs(report.tangency) <= 1e-8
        drifts.append(abs(svd_oracle(new_weight).S[0] - radius.radius))
    assert drifts[0] / drifts[1] >= 3.0


def test_sso_effective_step_and_tangency():
    cfg = SsoConfig()
    weight, state, radius = _sphere_setup(seed=2)
    grad = random_matrix(32, 48, std=0.02, seed=3)
    new_weight, report = sso_step(weight, grad, state, cfg, radius)
    assert 0.9 * cfg.eta <= report.update_spectral_norm / radius.radius <= 1.1 * cfg.eta
    assert abs(report.tangency) <= cfg.solver_tol or report.degenerate
    assert report.sigma_pre == pytest.approx(radius.radius, rel=1e-5)
    assert 1 <= report.solver_iters <= cfg.solver_max_iters
    assert state.step_count == 1


def test_sso_warm_cache_speeds_up_power_iteration():
    cfg = SsoConfig(eta=1e-3)
    radius = RadiusSpec(c=1.0, d_out=32, d_in=48)
    weight = spectral_init(32, 48, radius, seed=21)
    state = OptimizerState.zeros(weight.shape)
    grad = random_matrix(32, 48, std=0.02, seed=22)
    weight, cold = sso_step(weight, grad, state, cfg, radius)
    assert state.cache() is not None
    _, warm = sso_step(weight, grad, state, cfg, radius)
    assert warm.power_iters < cold.power_iters


def test_sso_zero_gradient_only_retracts():
    cfg = SsoConfig()
    weight, state, radius = _sphere_setup(shape=(16, 16), c=2.0, seed=5)
    shrunk = 0.5 * weight
    state.cached_u = state.cached_v = None
    new_weight, report = sso_step(shrunk, np.zeros_like(weight), state, cfg, radius)
    assert report.degenerate
    assert report.update_spectral_norm == 0.0
    assert abs(spectral_norm(new_weight) - radius.radius) <= 1e-5


def test_sso_dynamic_retraction_nudges_radius():
    cfg = SsoConfig(retraction='dynamic', lambda_wd=0.1)
    weight, state, radius = _sphere_setup(shape=(16, 16), c=2.0, seed=6)
    shrunk = 0.5 * weight
    new_weight, report = sso_step(shrunk, np.zeros_like(weight), state, cfg, radius, eta=0.1)
    assert np.allclose(new_weight, shrunk * (1.0 + 0.1 * 0.1))
    assert report.sigma_pre == pytest.approx(0.5 * radius.radius, rel=1e-5)


def test_sso_shape_errors():
    cfg = SsoConfig()
    weight, state, radius = _sphere_setup(shape=(8, 12))
    with pytest.raises(ShapeMismatch):
        sso_step(weight, np.zeros((12, 8)), state, cfg, radius)
    with pytest.raises(ShapeMismatch):
        sso_step(weight, np.zeros((8, 12)), state, cfg, RadiusSpec(1.0, 12, 8))


# ============== MUONSPHERE ==============

def test_muon_sphere_matches_sso_when_momentum_is_tangent():
    R = 2.0
    weight, q1, q2 = _structured_weight(16, 24, R, seed=8)
    radius = RadiusSpec(c=R / np.sqrt(16 / 24), d_out=16, d_in=24)
    grad = np.outer(q1[:, 1], q2[:, 1])
    cfg = SsoConfig(beta=0.0, nesterov=False)
    w_sso, r_sso = sso_step(weight, grad, OptimizerState.zeros(weight.shape), cfg, radius)
    w_ms, r_ms = muon_sphere_step(weight, grad, OptimizerState.zeros(weight.shape), cfg, radius)
    assert r_sso.lambda_star == 0.0
    assert np.allclose(w_sso, w_ms, atol=1e-12)
    assert r_ms.solver_iters == 0


def test_muon_sphere_stays_near_sphere():
    cfg = SsoConfig(eta=0.01)
    weight, state, radius = _sphere_setup(seed=9)
    R = radius.radius
    for step in range(10):
        grad = random_matrix(32, 48, std=0.02, seed=100 + step)
        previous = weight
        weight, report = muon_sphere_step(weight, grad, state, cfg, radius)
        assert report.sigma_pre == pytest.approx(spectral_norm(previous), rel=1e-4)
        assert abs(spectral_norm(weight) - R) <= 1.1 * cfg.eta * R


def test_muon_sphere_radial_push_is_cancelled_by_retraction():
    R = 2.0
    weight, q1, q2 = _structured_weight(16, 24, R, seed=13)
    radius = RadiusSpec(c=R / np.sqrt(16 / 24), d_out=16, d_in=24)
    theta = np.outer(q1[:, 0], q2[:, 0])
    cfg = SsoConfig(beta=0.0, nesterov=False, power_tol=1e-10)
    state = OptimizerState.zeros(weight.shape)
    pushed, report = muon_sphere_step(weight, theta, state, cfg, radius)
    step = report.update_spectral_norm
    assert report.sigma_pre == pytest.approx(R, rel=1e-6)
    assert np.allclose(pushed - weight, -step * theta, atol=1e-8)
    assert spectral_norm(pushed) == pytest.approx(R - step, rel=1e-6)

    restored, second = muon_sphere_step(pushed, np.zeros_like(weight), state, cfg, radius)
    assert second.sigma_pre == pytest.approx(R - step, rel=1e-6)
    assert spectral_norm(restored) == pytest.approx(R, rel=1e-6)


# ============== MUON ==============

def test_muon_rank_one_gradient():
    cfg = SsoConfig(beta=0.0, nesterov=False)
    rng = np.random.default_rng(3)
    u, v = rng.standard_normal(12), rng.standard_normal(20)
    u, v = u / np.linalg.norm(u), v / np.linalg.norm(v)
    weight = np.zeros((12, 20))
    new_weight, _ = muon_step(weight, 3.0 * np.outer(u, v), OptimizerState.zeros(weight.shape),
                              cfg, weight_decay=0.0)
    step = cfg.eta * lr_scaler(cfg.scaler, 12, 20)
    assert np.allclose(-new_weight / step, np.outer(u, v), atol=MSIGN_DELTA)


def test_muon_orthogonal_gradient_gives_unit_singular_values():
    cfg = SsoConfig(beta=0.0, nesterov=False)
    q, _ = np.linalg.qr(random_matrix(24, 16, seed=4))
    weight = random_matrix(24, 16, seed=5)
    new_weight, report = muon_step(weight, q, OptimizerState.zeros(weight.shape), cfg,
                                   weight_decay=0.0)
    step = cfg.eta * lr_scaler(cfg.scaler, 24, 16)
    s = svd_oracle((weight - new_weight) / step).S
    assert np.all(np.abs(s - 1.0) <= MSIGN_DELTA)
    assert report.update_spectral_norm == pytest.approx(step, rel=MSIGN_DELTA)


def test_muon_weight_decay_formula():
    cfg = SsoConfig(beta=0.0, nesterov=False)
    weight = random_matrix(8, 8, seed=6)
    grad = random_matrix(8, 8, seed=7)
    new_weight, _ = muon_step(weight, grad, OptimizerState.zeros(weight.shape), cfg)
    expected = weight * (1.0 - cfg.eta * 0.1) - cfg.eta * lr_scaler(cfg.scaler, 8, 8) * msign(grad)
    assert np.allclose(new_weight, expected, atol=1e-12)


def test_muon_norm_is_unconstrained():
    cfg = SsoConfig(beta=0.0, nesterov=False, eta=0.05)
    weight = random_matrix(16, 16, seed=8)
    state = OptimizerState.zeros(weight.shape)
    start = spectral_norm(weight)
    for _ in range(10):
        weight, _ = muon_step(weight, -weight, state, cfg, weight_decay=0.0)
    assert spectral_norm(weight) > start + 0.4


def test_muon_zero_momentum_raises():
    with pytest.raises(ZeroMatrix):
        muon_step(np.ones((3, 3)), np.zeros((3, 3)), OptimizerState.zeros((3, 3)), SsoConfig())


# ============== ADAMW ==============

def test_adamw_constant_gradient_closed_form():
    cfg = SsoConfig(eta=0.01)
    weight = random_matrix(4, 6, seed=9)
    grad = random_matrix(4, 6, seed=10)
    state = OptimizerState.zeros(weight.shape)
    w = weight
    steps = 5
    for _ in range(steps):
        w, _ = adamw_step(w, grad, state, cfg, weight_decay=0.0)
    expected = weight - steps * cfg.eta * grad / (np.abs(grad) + cfg.adam_eps)
    assert np.allclose(w, expected, rtol=1e-9, atol=1e-12)
    assert state.step_count == steps


def test_adamw_three_steps_single_element():
    cfg = SsoConfig(eta=0.1)
    state = OptimizerState.zeros((1, 1))
    w = np.array([[1.0]])
    for g in (0.5, -1.0, 2.0):
        w, _ = adamw_step(w, np.array([[g]]), state, cfg, weight_decay=0.0)

    m1, v1 = 0.1 * 0.5, 0.05 * 0.25
    m2, v2 = 0.9 * m1 + 0.1 * -1.0, 0.95 * v1 + 0.05 * 1.0
    m3, v3 = 0.9 * m2 + 0.1 * 2.0, 0.95 * v2 + 0.05 * 4.0
    assert state.momentum[0, 0] == pytest.approx(m3, rel=1e-12)
    assert state.second_moment[0, 0] == pytest.approx(v3, rel=1e-12)

    expected = 1.0
    for t, (m, v) in enumerate([(m1, v1), (m2, v2), (m3, v3)], start=1):
        m_hat, v_hat = m / (1 - 0.9 ** t), v / (1 - 0.95 ** t)
        expected -= 0.1 * m_hat / (np.sqrt(v_hat) + 1e-8)
    assert w[0, 0] == pytest.approx(expected, rel=1e-12)


def test_adamw_zero_gradient_only_decays():
    cfg = SsoConfig(eta=0.01)
    weight = random_matrix(3, 3, seed=11)
    state = OptimizerState.zeros(weight.shape)
    w = weight
    for _ in range(4):
        w, report = adamw_step(w, np.zeros_like(weight), state, cfg)
    assert np.allclose(w, weight * (1.0 - 0.01 * 0.1) ** 4, rtol=1e-12)
    assert report.update_spectral_norm == 0.0


# ============== DESPACHO ==============

def test_optimizer_step_dispatch():
    cfg = SsoConfig()
    weight, state, radius = _sphere_setup(shape=(8, 12), seed=12)
    grad = random_matrix(8, 12, std=0.02, seed=13)
    w_sso, _ = optimizer_step('sso', weight, grad, state, cfg, radius=radius)
    assert w_sso.shape == weight.shape
    with pytest.raises(ConfigError):
        optimizer_step(OptimizerKind.MUON_SPHERE, weight, grad, state, cfg)
    w_adam, _ = optimizer_step('adamw', weight, grad, OptimizerState.zeros(weight.shape), cfg)
    assert not np.array_equal(w_adam, weight)

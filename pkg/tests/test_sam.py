import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from imbalanced_ssl.datagen import gen_longtail_gaussian
from imbalanced_ssl.density import KdeConfig
from imbalanced_ssl.errors import ConfigError, NonFiniteError
from imbalanced_ssl.evaluation import train_probe
from imbalanced_ssl.sam import SamConfig, compute_epsilon, run_rwsam_pipeline, train
from imbalanced_ssl.spectral import SslObjective
from oracles import epsilon_grid

PQ = [(2.0, 2.0), (1.5, 3.0), (3.0, 1.5)]


class Bowl:
    """``L(phi) = 1/2 |phi|^2`` regardless of the batch."""

    def __init__(self, dim, n=4):
        self.param_dim = dim
        self.n = n

    def init_params(self, rng):
        return np.zeros(self.param_dim)

    def loss_and_grad(self, params, batch_idx, weights, rng):
        return 0.5 * float(params @ params), params.copy()


class Exploding(Bowl):
    def loss_and_grad(self, params, batch_idx, weights, rng):
        return float("nan"), params


def small_objective(seed=0):
    ds = gen_longtail_gaussian([30, 30, 5], 6, 2.0, 1.0, seed)
    return ds, SslObjective(ds.inputs, 2, 0.3)


def test_epsilon_examples():
    np.testing.assert_allclose(compute_epsilon([3.0, 4.0], 2.0), [1.2, 1.6], rtol=1e-15)
    assert not np.any(compute_epsilon(np.array([1.0, -2.0]), 0.0))
    assert not np.any(compute_epsilon(np.zeros(3), 1.0))


@pytest.mark.parametrize("p,q", PQ)
def test_epsilon_norm_equals_radius(p, q):
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        g = rng.standard_normal(rng.integers(1, 20)) * 10.0 ** rng.uniform(-3, 3)
        rho = rng.uniform(0.01, 5)
        eps = compute_epsilon(g, rho, p, q)
        worst = max(worst, abs(np.sum(np.abs(eps) ** p) ** (1 / p) - rho))
    assert worst <= 1e-12


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10_000), c=st.floats(1e-3, 1e3), pq=st.sampled_from(PQ))
def test_epsilon_scale_invariance(seed, c, pq):
    g = np.random.default_rng(seed).standard_normal(5)
    a, b = compute_epsilon(g, 0.7, *pq), compute_epsilon(c * g, 0.7, *pq)
    if pq == (2.0, 2.0):
        np.testing.assert_allclose(a, b, rtol=1e-14, atol=0)
    else:
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_epsilon_matches_grid_oracle(seed):
    g = np.random.default_rng(seed).standard_normal(3)
    eps = compute_epsilon(g, 1.0, 1.5, 3.0)
    ref, best = epsilon_grid(g, 1.0, 1.5)
    assert eps @ g >= best - 1e-12
    assert np.max(np.abs(eps - ref)) <= 5e-3


def test_bad_exponents():
    with pytest.raises(ConfigError):
        SamConfig(p_exp=2.0, q_exp=3.0).validate()


def test_bowl_single_step():
    trace = train(Bowl(2), SamConfig(sam_radius_rho=0.0, learning_rate=0.1, steps=1), init_params=[1.0, 0.0])
    np.testing.assert_allclose(trace.params, [0.9, 0.0], rtol=1e-15)


def test_nonfinite_abort():
    with pytest.raises(NonFiniteError) as err:
        train(Exploding(2), SamConfig(steps=3), init_params=[1.0, 0.0])
    assert err.value.step == 0


def test_sam_zero_radius_is_sgd():
    _, obj = small_objective()
    cfg = SamConfig(sam_radius_rho=0.0, learning_rate=0.01, steps=50, batch_size=16, seed=3)
    a = train(obj, cfg, mode="sgd")
    b = train(obj, cfg, mode="sam")
    assert a.losses.tobytes() == b.losses.tobytes()
    assert a.params.tobytes() == b.params.tobytes()


def test_rwsam_unit_weights_is_sam():
    _, obj = small_objective()
    cfg = SamConfig(sam_radius_rho=0.2, learning_rate=0.01, steps=50, batch_size=16, seed=3)
    a = train(obj, cfg, mode="sam")
    b = train(obj, cfg, weights=np.ones(obj.n), mode="rwsam")
    assert a.losses.tobytes() == b.losses.tobytes()
    assert a.params.tobytes() == b.params.tobytes()


def test_seed_determinism():
    _, obj = small_objective()
    cfg = SamConfig(sam_radius_rho=0.2, learning_rate=0.01, steps=30, batch_size=16, seed=9)
    w = np.linspace(0.5, 1.5, obj.n)
    a = train(obj, cfg, weights=w, mode="rwsam")
    b = train(obj, cfg, weights=w, mode="rwsam")
    assert a.params.tobytes() == b.params.tobytes()


def test_rwsam_needs_matching_weights():
    _, obj = small_objective()
    with pytest.raises(ConfigError):
        train(obj, SamConfig(steps=1), mode="rwsam")
    with pytest.raises(ConfigError):
        train(obj, SamConfig(steps=1), weights=np.ones(3), mode="rwsam")


def test_weighted_ascent_differs_from_plain():
    _, obj = small_objective()
    cfg = SamConfig(sam_radius_rho=0.5, learning_rate=0.01, steps=5, batch_size=65, seed=1)
    w = np.ones(obj.n)
    w[-5:] = 10.0
    a = train(obj, cfg, mode="sam")
    b = train(obj, cfg, weights=w / w.mean(), mode="rwsam")
    assert not np.array_equal(a.params, b.params)


def test_monitor_snapshots_and_jsonl(tmp_path):
    _, obj = small_objective()
    cfg = SamConfig(learning_rate=0.01, steps=20, batch_size=16, log_interval=5)
    trace = train(obj, cfg, mode="sgd", monitor=lambda step, p: {"norm": float(np.linalg.norm(p))})
    assert [s["step"] for s in trace.snapshots] == [5, 10, 15, 20]
    trace.to_jsonl(tmp_path / "t.jsonl")
    assert len((tmp_path / "t.jsonl").read_text().splitlines()) == 4
    assert trace.losses.shape == (20,)


def test_cosine_schedule_runs():
    _, obj = small_objective()
    trace = train(obj, SamConfig(learning_rate=0.01, steps=10, lr_schedule="cosine"), mode="sgd")
    assert trace.steps_run == 10


def test_pipeline_alpha_zero_equals_sam():
    ds, obj = small_objective()
    s1 = SamConfig(sam_radius_rho=0.0, learning_rate=0.01, steps=40, batch_size=16, seed=1)
    s2 = SamConfig(sam_radius_rho=0.3, learning_rate=0.01, steps=40, batch_size=16, seed=2)
    res = run_rwsam_pipeline(ds, s1, KdeConfig(alpha=0.0), s2, m=2, perturb_scale=0.3)
    assert np.all(res.weights.weights == 1.0)
    plain = train(obj, s2, mode="sam", init_params=res.stage1.params)
    assert res.trace.params.tobytes() == plain.params.tobytes()


def test_pipeline_fresh_init_flag():
    ds, _ = small_objective()
    s1 = SamConfig(sam_radius_rho=0.0, learning_rate=0.01, steps=20, batch_size=16, seed=1)
    s2 = SamConfig(sam_radius_rho=0.3, learning_rate=0.01, steps=0, seed=2)
    cont = run_rwsam_pipeline(ds, s1, KdeConfig(), s2, m=2, perturb_scale=0.3)
    fresh = run_rwsam_pipeline(ds, s1, KdeConfig(), s2, m=2, perturb_scale=0.3, fresh_init=True)
    np.testing.assert_array_equal(cont.trace.params, cont.stage1.params)
    assert not np.array_equal(fresh.trace.params, cont.stage1.params)


def test_balanced_data_weights_and_probe_parity():
    cvs, diffs = [], []
    for seed in range(10):
        ds = gen_longtail_gaussian([100] * 5, 16, 4.0, 1.0, seed)
        ptr = gen_longtail_gaussian([100] * 5, 16, 4.0, 1.0, seed, sample_seed=1000 + seed)
        pte = gen_longtail_gaussian([200] * 5, 16, 4.0, 1.0, seed, sample_seed=2000 + seed)
        s1 = SamConfig(sam_radius_rho=0.0, learning_rate=0.01, steps=300, batch_size=64, seed=seed)
        s2 = SamConfig(sam_radius_rho=0.3, learning_rate=0.01, steps=300, batch_size=64, seed=seed + 50)
        rw = run_rwsam_pipeline(ds, s1, KdeConfig(alpha=1.2), s2, m=5, perturb_scale=1.0)
        sam = run_rwsam_pipeline(ds, s1, KdeConfig(alpha=0.0), s2, m=5, perturb_scale=1.0)
        w = rw.weights.weights
        cvs.append(w.std() / w.mean())
        diffs.append(train_probe(rw.feature_map, ptr, pte).top1_accuracy - train_probe(sam.feature_map, ptr, pte).top1_accuracy)
    assert max(cvs) < 0.5
    assert max(abs(d) for d in diffs) < 0.02

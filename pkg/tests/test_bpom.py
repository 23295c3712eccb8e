import numpy as np
import pytest
from scipy.special import erf

from nito import autodiff as ad
from nito import bpom
from nito.errors import ConfigurationError, ParameterError
from nito.problem import mbb_beam

CFG = bpom.BpomConfig(width=8, blocks=2, vf_width=4)


def make_params(seed=0, cfg=CFG):
    return bpom.init_bpom(cfg, np.random.default_rng(seed))


def random_clouds(rng):
    nl, nx_, ny_ = rng.integers(1, 6, size=3)
    loads = np.column_stack([rng.random((nl, 2)), rng.normal(size=(nl, 2))])
    return bpom.BoundaryPointClouds(loads, rng.random((nx_, 2)), rng.random((ny_, 2)))


def test_condition_width():
    c = bpom.problem_condition(mbb_beam(), make_params(), CFG)
    assert c.shape == (1, 9 * 8 + 4) == (1, CFG.condition_width)
    assert bpom.BpomConfig().condition_width == 9 * 64 + 16


def test_aggregate_arithmetic():
    pooled = bpom.aggregate(ad.constant([[0.0, 2.0], [4.0, 6.0]])).value[0]
    np.testing.assert_array_equal(pooled, [0, 2, 4, 6, 2, 4])
    single = bpom.aggregate(ad.constant([[1.0, -3.0]])).value[0]
    np.testing.assert_array_equal(single, [1, -3, 1, -3, 1, -3])


def test_per_point_map():
    params = make_params()
    pts = np.random.default_rng(1).random((5, 2))
    f = bpom.encode_pointcloud(pts, params, CFG, "supports_x").value
    dup = bpom.encode_pointcloud(np.vstack([pts, pts[2:3]]), params, CFG, "supports_x").value
    np.testing.assert_array_equal(dup[5], dup[2])
    perm = [3, 1, 4, 0, 2]
    np.testing.assert_allclose(bpom.encode_pointcloud(pts[perm], params, CFG, "supports_x").value, f[perm],
                               rtol=0, atol=1e-14)


def test_zero_parameters_give_zero_features():
    params = {k: ad.parameter(np.zeros(v.shape)) for k, v in make_params().items()}
    f = bpom.encode_pointcloud(np.random.default_rng(2).random((4, 4)), params, CFG, "loads").value
    assert not f.any()


def test_width_mismatch():
    with pytest.raises(ConfigurationError):
        bpom.encode_pointcloud(np.zeros((3, 3)), make_params(), CFG, "loads")


def test_invalid_volume_fraction():
    clouds = bpom.BoundaryPointClouds.from_problem(mbb_beam())
    for vf in (0.0, 1.0, -0.2):
        with pytest.raises(ParameterError):
            bpom.build_condition(clouds, vf, make_params(), CFG)


def test_permutation_invariance_bit_exact():
    rng = np.random.default_rng(3)
    params = make_params()
    for _ in range(10):
        clouds = random_clouds(rng)
        ref = bpom.build_condition(clouds, 0.4, params, CFG).value
        for _ in range(5):
            shuffled = bpom.BoundaryPointClouds(*(rng.permutation(getattr(clouds, n)) for n in bpom.CLOUDS))
            assert bpom.build_condition(shuffled, 0.4, params, CFG).value.tobytes() == ref.tobytes()


def test_volume_fraction_only_changes_tail():
    clouds = bpom.BoundaryPointClouds.from_problem(mbb_beam())
    params = make_params()
    a = bpom.build_condition(clouds, 0.3, params, CFG).value[0]
    b = bpom.build_condition(clouds, 0.6, params, CFG).value[0]
    head = 9 * CFG.width
    np.testing.assert_array_equal(a[:head], b[:head])
    assert np.any(a[head:] != b[head:])


def test_locality_between_clouds():
    rng = np.random.default_rng(4)
    params = make_params()
    clouds = random_clouds(rng)
    other = bpom.BoundaryPointClouds(clouds.loads, rng.random((3, 2)), clouds.supports_y)
    a = bpom.build_condition(clouds, 0.4, params, CFG).value[0]
    b = bpom.build_condition(other, 0.4, params, CFG).value[0]
    w3 = 3 * CFG.width
    np.testing.assert_array_equal(a[:w3], b[:w3])
    np.testing.assert_array_equal(a[2 * w3:], b[2 * w3:])
    assert np.any(a[w3:2 * w3] != b[w3:2 * w3])


def test_size_independence_and_empty_cloud():
    params = make_params()
    empty = bpom.BoundaryPointClouds(np.array([[0.5, 1.0, 0.0, -1.0]]), np.zeros((0, 2)), np.random.random((7, 2)))
    c = bpom.build_condition(empty, 0.5, params, CFG).value
    assert c.shape == (1, CFG.condition_width) and np.all(np.isfinite(c))
    np.testing.assert_array_equal(bpom.prepare_cloud(np.zeros((0, 2)), 2), [[-1.0, -1.0]])


def test_coordinates_checked():
    with pytest.raises(ParameterError):
        bpom.BoundaryPointClouds(np.array([[1.5, 0.0, 0.0, 1.0]]), np.zeros((1, 2)), np.zeros((1, 2)))


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _ln(x, eps=1e-5):
    mu = x.mean()
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean() + eps)


def test_single_point_clouds_match_dense_oracle():
    params = make_params(seed=5)
    P = {k: v.value for k, v in params.items()}
    pts = {"loads": np.array([0.25, 1.0, 0.6, -0.8]), "supports_x": np.array([0.0, 0.5]),
           "supports_y": np.array([1.0, 0.125])}
    expected = []
    for name in bpom.CLOUDS:
        x = pts[name] @ P[f"bpom.{name}.proj.W"] + P[f"bpom.{name}.proj.b"][0]
        for k in range(CFG.blocks):
            pre = f"bpom.{name}.block{k}"
            h = _gelu(_ln(x @ P[f"{pre}.fc1.W"] + P[f"{pre}.fc1.b"][0]))
            x = x + _gelu(_ln(h @ P[f"{pre}.fc2.W"] + P[f"{pre}.fc2.b"][0]))
        expected += [x, x, x]
    expected.append(0.45 * P["bpom.vf.W"][0] + P["bpom.vf.b"][0])
    expected = np.concatenate(expected)
    clouds = bpom.BoundaryPointClouds(*(pts[n][None, :] for n in bpom.CLOUDS))
    got = bpom.build_condition(clouds, 0.45, params, CFG).value[0]
    np.testing.assert_allclose(got, expected, rtol=0, atol=1e-12)


def test_encoder_gradient_matches_finite_difference():
    from oracles import finite_difference
    params = make_params(seed=6)
    rng = np.random.default_rng(6)
    clouds = random_clouds(rng)
    w = rng.normal(size=(CFG.condition_width, 1))

    def loss_of(p):
        c = bpom.build_condition(clouds, 0.4, p, CFG)
        return ad.reduce_mean(ad.matmul(c, ad.constant(w)))

    grads = ad.backward(loss_of(params), params)
    for name in ("bpom.loads.block0.fc1.W", "bpom.supports_y.proj.W", "bpom.vf.W", "bpom.supports_x.block1.fc2.b"):
        base = params[name].value.copy()

        def f(v, name=name):
            p = dict(params)
            p[name] = ad.constant(v)
            return loss_of(p).value.item()

        numeric = finite_difference(f, base, 1e-5)
        err = np.linalg.norm(grads[name] - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert err < 1e-4, name

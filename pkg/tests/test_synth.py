import numpy as np
import pytest

from ebrpca import synth
from ebrpca.synth import PhotoSpec, SynthSpec


def test_spec_invariants():
    with pytest.raises(ValueError):
        SynthSpec(5, 4, 2, 0.1)      # m > n
    with pytest.raises(ValueError):
        SynthSpec(5, 10, 6, 0.1)     # rank > m
    with pytest.raises(ValueError):
        SynthSpec(5, 10, 0, 0.1)
    with pytest.raises(ValueError):
        SynthSpec(5, 10, 2, 1.5)
    with pytest.raises(ValueError):
        PhotoSpec(num_lights=2)


def test_full_rank_is_raw_gaussian():
    spec = SynthSpec(6, 9, 6, 0.0, seed=3)
    G = np.random.default_rng([3, 0]).standard_normal((6, 9))
    np.testing.assert_allclose(synth.gen_low_rank(spec), G, atol=1e-10)


def test_rank_one_columns_share_direction():
    X = synth.gen_low_rank(SynthSpec(5, 30, 1, 0.0, seed=2))
    u = X[:, np.argmax(np.linalg.norm(X, axis=0))]
    u = u / np.linalg.norm(u)
    np.testing.assert_allclose(X - np.outer(u, u @ X), 0.0, atol=1e-10)


@pytest.mark.parametrize("m,n,r", [(20, 200, 1), (20, 200, 7), (30, 40, 29), (10, 10, 3)])
def test_numerical_rank_and_singular_values(m, n, r):
    spec = SynthSpec(m, n, r, 0.0, seed=m + r)
    X = synth.gen_low_rank(spec)
    s = np.linalg.svd(X, compute_uv=False)
    assert int(np.sum(s > 1e-9 * s[0])) == r
    s_raw = np.linalg.svd(np.random.default_rng([spec.seed, 0]).standard_normal((m, n)), compute_uv=False)
    np.testing.assert_allclose(s[:r], s_raw[:r], rtol=1e-10)


def test_sparse_extremes():
    assert not synth.gen_sparse(SynthSpec(4, 8, 1, 0.0)).any()
    S = synth.gen_sparse(SynthSpec(4, 8, 1, 1.0))
    assert np.all(S != 0) and np.all(np.abs(S) <= 10.0)


def test_sparse_density():
    S = synth.gen_sparse(SynthSpec(200, 1000, 1, 0.2, seed=9))
    assert abs(np.mean(S != 0) - 0.2) < 0.01
    vals = S[S != 0]
    assert vals.min() >= -10 and vals.max() <= 10
    assert abs(vals.mean()) < 0.1 and abs(vals.std() - 20 / np.sqrt(12)) < 0.05


def test_problem_without_corruption():
    problem, X, S = synth.gen_problem(SynthSpec(5, 7, 5, 0.0, seed=1))
    np.testing.assert_array_equal(problem.Y, X)
    assert not S.any()
    assert problem.lam == 1e-6


def test_determinism_and_stream_independence():
    a = synth.gen_problem(SynthSpec(8, 30, 2, 0.3, seed=4))
    b = synth.gen_problem(SynthSpec(8, 30, 2, 0.3, seed=4))
    for u, v in zip((a[0].Y, a[1], a[2]), (b[0].Y, b[1], b[2])):
        np.testing.assert_array_equal(u, v)
    # changing rho leaves the low-rank draw untouched
    c = synth.gen_problem(SynthSpec(8, 30, 2, 0.5, seed=4))
    np.testing.assert_array_equal(a[1], c[1])
    d = synth.gen_problem(SynthSpec(8, 30, 2, 0.3, seed=5))
    assert not np.array_equal(a[1], d[1])


def test_table_spec_shape():
    spec = SynthSpec(400, 400, 40, 0.5)
    assert spec.to_dict()["rank"] == 40


def test_photometric_orthogonal_lights_exact():
    # orthonormal lights tilted so all three sit 54.7 deg from +z
    a = np.array([1.0, 1.0, 1.0]) / np.sqrt(3)
    v = np.cross(a, [0, 0, 1.0])
    c = a[2]
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    R = np.eye(3) + K + K @ K / (1 + c)
    L = R @ np.eye(3)
    inst = synth.gen_photometric(PhotoSpec(num_lights=3, num_pixels=400, corruption_prob=0.0, seed=1), lights=L)
    np.testing.assert_array_equal(inst.problem.Y, inst.X)
    assert not inst.S.any()
    B = np.linalg.lstsq(L.T, inst.problem.Y, rcond=None)[0]   # = N diag(albedo)
    np.testing.assert_allclose(B / np.linalg.norm(B, axis=0), inst.normals, atol=1e-10)
    np.testing.assert_allclose(np.linalg.norm(B, axis=0), inst.albedo, rtol=1e-10)


def test_photometric_default_instance():
    inst = synth.gen_photometric(PhotoSpec())
    m, n = inst.problem.shape
    assert m == 20 and 0 < n <= 5000 and n == inst.kept.size
    assert np.mean(inst.S != 0) < 0.25
    assert np.linalg.matrix_rank(inst.X) == 3
    np.testing.assert_allclose(np.linalg.norm(inst.lights, axis=0), 1.0)
    assert np.all(inst.lights[2] > 0) and np.all(inst.normals[2] > 0)
    assert np.all((inst.albedo >= 0.5) & (inst.albedo <= 1.0))
    assert np.all(inst.shadow.mean(axis=0) <= 0.1)
    # shadowed entries are clamped to zero in Y
    np.testing.assert_array_equal(inst.problem.Y[inst.shadow], 0.0)
    np.testing.assert_allclose(inst.problem.Y, inst.X + inst.S)


def test_photometric_determinism():
    a = synth.gen_photometric(PhotoSpec(num_pixels=300, seed=3))
    b = synth.gen_photometric(PhotoSpec(num_pixels=300, seed=3))
    np.testing.assert_array_equal(a.problem.Y, b.problem.Y)
    np.testing.assert_array_equal(a.kept, b.kept)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optresp.errors import NumericError
from optresp.experiment import local_maxima, operator_law_audit
from optresp.mesh import build_grid, restrict_to_domain
from optresp.transfer import (
    CACHE_MAGIC,
    CacheError,
    KernelMatrix,
    apply,
    invariant_density,
    load_or_build_kernel,
    norms,
    read_kernel_cache,
    spectral_gap_estimate,
    write_kernel_cache,
    write_kernel_csv,
)


def random_kernel(grid, rng):
    """Positive kernel with every Simpson row mass exactly 1."""
    K = rng.random((grid.size, grid.size)) + 0.05
    return KernelMatrix(K / (K @ grid.weights)[:, None], grid)


def dense_leading_vector(K):
    vals, vecs = np.linalg.eig(K.operator_matrix())
    k = np.argmax(vals.real)
    f = vecs[:, k].real
    return vals, f / (K.weights @ f)


def test_constant_kernel_uniform_density():
    g = build_grid(1.0, 2)
    K = KernelMatrix(np.full((3, 3), 0.5), g)
    f0 = invariant_density(K)
    np.testing.assert_allclose(f0.values, 0.5, rtol=1e-14)
    assert f0.mass == pytest.approx(1.0)
    assert spectral_gap_estimate(K, f0) == 0.0


def test_apply_is_quadrature_sum(rng):
    g = build_grid(1.0, 6)
    K = random_kernel(g, rng)
    f = rng.standard_normal(g.size)
    expected = [sum(g.weights[i] * K.values[i, j] * f[i] for i in range(g.size)) for j in range(g.size)]
    np.testing.assert_allclose(apply(K, f), expected, rtol=1e-13)
    with pytest.raises(ValueError):
        apply(K, np.ones(3))


def test_invariant_and_gap_match_dense_eig(rng):
    g = build_grid(1.0, 8)
    K = random_kernel(g, rng)
    f0 = invariant_density(K, tol=1e-13)
    vals, f_ref = dense_leading_vector(K)
    np.testing.assert_allclose(f0.values, f_ref, atol=1e-11)
    lam2 = np.sort(np.abs(vals))[-2]
    assert spectral_gap_estimate(K, f0, tol=1e-12) == pytest.approx(lam2, rel=1e-8)


def test_nonconvergence_reports_residual(rng):
    g = build_grid(1.0, 8)
    K = random_kernel(g, rng)
    with pytest.raises(NumericError) as err:
        invariant_density(K, tol=1e-30, max_iter=3)
    assert "residual" in err.value.diagnostics


def test_audit_flags_bad_rows():
    g = build_grid(1.0, 2)
    K = KernelMatrix(np.array([[0.5, 0.5, 0.5], [0.6, 0.6, 0.6], [0.5, 0.5, -1e-3]]), g)
    status = {a["name"]: a["status"] for a in K.audit(row_mass_tol=1e-2, positivity_tol=1e-8)}
    assert status == {"kernel_row_mass": "fail", "kernel_positivity": "fail"}


def test_norms_ordering_and_values():
    g = build_grid(2.0, 400)
    f = np.exp(-g.nodes**2)
    nr = norms(f, g, alpha=2.0, restriction=restrict_to_domain(g, 1.0))
    assert nr.l1 == pytest.approx(np.sqrt(np.pi) * 0.99532, rel=1e-4)
    assert nr.linf == 1.0
    assert nr.l1 <= nr.l1_alpha
    assert nr.strong > nr.l1_alpha
    assert norms(np.zeros(g.size), g).l1 == 0.0


def test_cache_round_trip(tmp_path, rng):
    g = build_grid(1.0, 6)
    K = random_kernel(g, rng)
    K.meta.update(m=7, a=1.0, T=0.5, eps=0.3)
    path = write_kernel_cache(tmp_path / "k.ortk", K)
    raw = path.read_bytes()
    assert raw[:4] == CACHE_MAGIC
    values, hdr = read_kernel_cache(path)
    assert np.array_equal(values, K.values)
    assert (hdr["size"], hdr["m"], hdr["a"], hdr["T"], hdr["eps"]) == (7, 7, 1.0, 0.5, 0.3)
    # flip a payload byte: checksum must catch it
    bad = bytearray(raw)
    bad[60] ^= 0xFF
    (tmp_path / "bad.ortk").write_bytes(bytes(bad))
    with pytest.raises(CacheError):
        read_kernel_cache(tmp_path / "bad.ortk")
    (tmp_path / "short.ortk").write_bytes(raw[:20])
    with pytest.raises(CacheError):
        read_kernel_cache(tmp_path / "short.ortk")


def test_load_or_build_hit_and_rebuild(tmp_path, coarse_config):
    cfg = coarse_config.replace(n=400, m=50, d=0.8)
    K1, s1 = load_or_build_kernel(cfg, tmp_path)
    K2, s2 = load_or_build_kernel(cfg, tmp_path)
    assert (s1, s2) == ("miss", "hit")
    assert np.array_equal(K1.values, K2.values)
    (path,) = tmp_path.glob("*.ortk")
    path.write_bytes(path.read_bytes()[:-3] + b"xyz")
    K3, s3 = load_or_build_kernel(cfg, tmp_path)
    assert s3 == "rebuilt" and np.array_equal(K3.values, K1.values)
    assert load_or_build_kernel(cfg, None)[1] == "disabled"


def test_kernel_csv(tmp_path):
    g = build_grid(1.0, 2)
    path = write_kernel_csv(tmp_path / "k.csv", np.arange(9.0).reshape(3, 3), g.nodes, g.nodes)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,kappa" and lines[2] == "-1.0,0.0,1.0" and len(lines) == 10


def test_local_maxima_floor():
    y = np.linspace(-1, 1, 9)
    f = np.array([0, 1e-20, 0, 1, 0.5, 2, 0.1, 0.2, 0])
    assert list(local_maxima(f, y)) == [y[3], y[5], y[7]]
    assert list(local_maxima(f, y, floor=0.2)) == [y[3], y[5]]


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3))
def test_operator_laws_property(seed, scale):
    rng = np.random.default_rng(seed)
    g = build_grid(1.0, 10)
    K = random_kernel(g, rng)
    f = scale * rng.standard_normal(g.size)
    Lf = apply(K, f)
    w = g.weights
    assert w @ Lf == pytest.approx(w @ f, rel=1e-10, abs=1e-12 * scale)
    assert w @ np.abs(Lf) <= w @ np.abs(f) * (1 + 1e-12)
    assert np.all(apply(K, np.abs(f)) >= 0)


# ---------------------------------------------------------------- coarse profile


@pytest.mark.slow
def test_coarse_kernel_properties(coarse):
    K = coarse.kernel
    assert all(a["status"] == "pass" for a in K.meta["audits"])
    # kappa(x, y) = kappa(-x, -y)
    assert np.max(np.abs(K.values - K.values[::-1, ::-1])) < 1e-10
    y = coarse.grid.nodes
    i_pos, i_neg = coarse.grid.node_index(0.8), coarse.grid.node_index(-0.8)
    assert y[np.argmax(K.values[i_pos])] == pytest.approx(1.0, abs=0.1)
    assert y[np.argmax(K.values[i_neg])] == pytest.approx(-1.0, abs=0.1)


@pytest.mark.slow
def test_coarse_invariant_density(coarse):
    f0 = coarse.f0
    assert f0.residual <= 1e-10
    assert f0.mass == pytest.approx(1.0, abs=1e-10)
    assert f0.values.min() >= -1e-10
    assert np.abs(apply(coarse.kernel, f0.values) - f0.eigenvalue * f0.values).max() < 1e-8
    assert 0 < coarse.gap < 1


@pytest.mark.slow
def test_coarse_operator_laws(coarse):
    laws = operator_law_audit(coarse.kernel, n=20, seed=3)
    assert laws["mass_ok"] and laws["contraction_ok"] and laws["positivity_ok"]

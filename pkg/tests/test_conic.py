import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from arisac import conic
from arisac.conic import (BackendResult, ConicError, ConicProgram, hermitian_to_real_embedding,
                          solve, trace_product)


def test_lp():
    p = ConicProgram()
    x = p.real("x")
    p.add_nonneg(x.expr - 1.0)
    p.minimize(x.expr)
    sol = solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol["x"][0] == pytest.approx(1.0, abs=1e-7)
    assert sol.objective_value == pytest.approx(1.0, abs=1e-7)


def test_eigenvalue_sdp():
    p = ConicProgram()
    x = p.hermitian("X", 2)
    p.add_psd(x)
    p.add_zero(trace_product(np.eye(2), x).real - 1.0)
    p.minimize(trace_product(np.diag([1.0, 2.0]), x).real)
    sol = solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol.objective_value == pytest.approx(1.0, abs=1e-6)
    assert np.allclose(sol["X"], np.diag([1.0, 0.0]), atol=1e-5)


def test_rotated_cone_boundary():
    # (a - t) c >= |b|^2 with a = c = 2, b = 1 -> t <= 1.5
    p = ConicProgram()
    t = p.real("t")
    p.add_rsoc(2.0 - t.expr, conic.Affine.constant(2.0), conic.Affine.constant(1.0))
    p.maximize(t.expr)
    sol = solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol["t"][0] == pytest.approx(1.5, abs=1e-6)


def test_complex_sdp_smallest_eigenvalue(rng):
    a = rng.standard_normal((3, 3)) + 1j * rng.standard_normal((3, 3))
    c = a + a.conj().T
    p = ConicProgram()
    x = p.hermitian("X", 3)
    p.add_psd(x)
    p.add_zero(trace_product(np.eye(3), x).real - 1.0)
    p.minimize(trace_product(c, x).real)
    sol = solve(p)
    assert sol.objective_value == pytest.approx(np.linalg.eigvalsh(c)[0], abs=1e-6)
    assert np.allclose(sol["X"], sol["X"].conj().T)


def test_complex_soc(rng):
    target = rng.standard_normal(3) + 1j * rng.standard_normal(3)
    p = ConicProgram()
    z = p.complex("z", 3)
    t = p.real("t")
    p.add_soc(t.expr, z.expr - target)
    p.add_soc(conic.Affine.constant(1.0), z.expr)
    p.minimize(t.expr)
    sol = solve(p)
    expected = np.linalg.norm(target) - 1.0
    assert sol.objective_value == pytest.approx(expected, abs=1e-6)
    assert np.allclose(sol["z"], target / np.linalg.norm(target), atol=1e-5)


def test_embedding_examples():
    assert np.array_equal(hermitian_to_real_embedding(np.eye(2)), np.eye(4))
    x = np.array([[0, -1j], [1j, 0]])
    expected = np.array([[0, 0, 0, 1], [0, 0, -1, 0], [0, -1, 0, 0], [1, 0, 0, 0]], float)
    assert np.array_equal(hermitian_to_real_embedding(x), expected)
    with pytest.raises(ConicError):
        hermitian_to_real_embedding(np.array([[0, 1], [0, 0]], dtype=complex))


@given(st.integers(0, 2 ** 31 - 1), st.integers(1, 6))
def test_embedding_spectrum_doubles(seed, n):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    x = a @ a.conj().T
    ev = np.linalg.eigvalsh(x)
    emb = np.linalg.eigvalsh(hermitian_to_real_embedding(x))
    assert np.allclose(emb, np.sort(np.repeat(ev, 2)), atol=1e-9 * (1 + ev.max()))


class _LyingBackend:
    """Claims optimality for an infeasible point."""

    def solve(self, sf, tol):
        return BackendResult(conic.OPTIMAL, np.zeros(sf.c.size), "fake")


def test_verification_downgrades_bad_solutions():
    p = ConicProgram()
    x = p.real("x")
    p.add_nonneg(x.expr - 1.0)
    p.minimize(x.expr)
    sol = solve(p, _LyingBackend())
    assert sol.status == conic.NUMERICAL_FAILURE
    assert sol.max_residual > sol.solver_tolerance


def test_optimal_solutions_pass_residual_check(rng):
    p = ConicProgram()
    x = p.hermitian("X", 3)
    y = p.complex("y", 2)
    p.add_psd(x)
    p.add_rsoc(trace_product(np.eye(3), x).real, conic.Affine.constant(1.0), y.expr)
    p.add_nonneg(2.0 - trace_product(np.eye(3), x).real)
    p.maximize((np.array([[1.0, 1j]]) @ y.expr).real)
    sol = solve(p)
    assert sol.status == conic.OPTIMAL
    assert sol.max_residual <= 10 * conic.DEFAULT_TOL


def test_infeasible_program_reported():
    p = ConicProgram()
    x = p.real("x")
    p.add_nonneg(x.expr - 2.0)
    p.add_nonneg(1.0 - x.expr)
    p.minimize(x.expr)
    assert solve(p).status == conic.INFEASIBLE


def test_undeclared_variable_and_bad_shapes():
    p, q = ConicProgram(), ConicProgram()
    x = q.real("x", 2)
    with pytest.raises(ConicError):
        p.add_nonneg(x.expr)
    y = p.complex("y", 3)
    with pytest.raises(ConicError):
        p.add_nonneg(y.expr)              # complex where a real row is needed
    with pytest.raises(ConicError):
        p.add_psd(y.expr)                 # 3 is not a square size
    with pytest.raises(ConicError):
        p.add_soc(p.real("t", 2).expr, y.expr)


def test_dump_lists_every_cone():
    p = ConicProgram()
    x = p.hermitian("X", 2)
    t = p.real("t")
    p.add_psd(x)
    p.add_rsoc(t.expr, conic.Affine.constant(1.0), conic.Affine.constant(0.5))
    p.add_nonneg(1.0 - trace_product(np.eye(2), x).real)
    p.minimize(t.expr)
    text = p.dump()
    assert "cone psd" in text and "cone soc" in text and "cone nonneg" in text


def test_cvxpy_backend_agrees():
    pytest.importorskip("cvxpy")
    p = ConicProgram()
    x = p.hermitian("X", 2)
    p.add_psd(x)
    p.add_zero(trace_product(np.eye(2), x).real - 1.0)
    p.minimize(trace_product(np.array([[1.0, 0.5j], [-0.5j, 2.0]]), x).real)
    a = solve(p, "clarabel", tol=1e-8)
    b = solve(p, "cvxpy", tol=1e-7)
    assert b.status == conic.OPTIMAL
    assert a.objective_value == pytest.approx(b.objective_value, abs=1e-5)

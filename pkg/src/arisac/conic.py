"""A small solver-agnostic conic-program representation.

Variables live in real coordinates:

    real n        -> n coordinates
    complex n     -> 2n coordinates [Re; Im]
    hermitian n   -> n^2 coordinates [diag; Re upper; Im upper]

An ``Affine`` expression is a complex-valued affine map of those real
coordinates, stored as one complex coefficient block per variable plus a
complex constant. Because the coordinates are real, the real and
imaginary parts of an expression are themselves affine.

Programs are compiled to the standard form ``s = g + F z in K`` with
``K`` a product of zero, nonnegative, second-order and real PSD-triangle
cones, and handed to a backend. Every solution reported optimal is
re-checked against the original constraints here, independently of the
backend.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL_FAILURE = "numerical-failure"

DEFAULT_TOL = 1e-8
VERIFY_FACTOR = 10.0


class ConicError(ValueError):
    """Malformed program or expression."""


class BackendError(RuntimeError):
    """The backend could not run."""


# ---------------------------------------------------------------------------
# variables and expressions


@dataclass(eq=False)
class Variable:
    name: str
    kind: str   # "real" | "complex" | "hermitian"
    n: int
    index: int = -1

    @property
    def ncoords(self) -> int:
        if self.kind == "real":
            return self.n
        if self.kind == "complex":
            return 2 * self.n
        return self.n * self.n

    def coord_map(self) -> np.ndarray:
        """Complex matrix taking the real coordinates to the natural value
        (the vector itself, or vec(X) column-major for a matrix)."""
        n = self.n
        if self.kind == "real":
            return np.eye(n, dtype=complex)
        if self.kind == "complex":
            return np.hstack([np.eye(n), 1j * np.eye(n)])
        return _herm_map(n)

    @property
    def expr(self) -> "Affine":
        return Affine({self: self.coord_map()}, np.zeros(self.coord_map().shape[0], dtype=complex))

    def value_from(self, coords: np.ndarray):
        val = self.coord_map() @ coords
        if self.kind == "real":
            return val.real.copy()
        if self.kind == "complex":
            return val
        return val.reshape(self.n, self.n, order="F")

    def __repr__(self) -> str:
        return f"Variable({self.name!r}, {self.kind}, {self.n})"


def _upper_pairs(n: int) -> list[tuple[int, int]]:
    return [(i, j) for j in range(n) for i in range(j)]


def _herm_map(n: int) -> np.ndarray:
    pairs = _upper_pairs(n)
    npair = len(pairs)
    t = np.zeros((n * n, n * n), dtype=complex)
    for k in range(n):
        t[k + k * n, k] = 1.0
    for p, (i, j) in enumerate(pairs):
        t[i + j * n, n + p] = 1.0
        t[j + i * n, n + p] = 1.0
        t[i + j * n, n + npair + p] = 1j
        t[j + i * n, n + npair + p] = -1j
    return t


class Affine:
    """Complex affine map of the program's real coordinates."""

    __array_ufunc__ = None  # make numpy defer to __rmatmul__/__rmul__

    def __init__(self, terms: dict, const):
        self.terms = {v: np.atleast_2d(np.asarray(a, dtype=complex)) for v, a in terms.items()}
        self.const = np.atleast_1d(np.asarray(const, dtype=complex))
        for v, a in self.terms.items():
            if a.shape != (self.size, v.ncoords):
                raise ConicError(f"coefficient block for {v.name} has shape {a.shape}, "
                                 f"expected {(self.size, v.ncoords)}")

    @property
    def size(self) -> int:
        return self.const.shape[0]

    @staticmethod
    def constant(c) -> "Affine":
        return Affine({}, c)

    # arithmetic -----------------------------------------------------------
    def _coerce(self, other) -> "Affine":
        if isinstance(other, Affine):
            return other
        if isinstance(other, Variable):
            return other.expr
        c = np.atleast_1d(np.asarray(other, dtype=complex))
        if c.shape[0] == 1 and self.size != 1:
            c = np.full(self.size, c[0])
        return Affine.constant(c)

    def __add__(self, other) -> "Affine":
        other = self._coerce(other)
        a, b = self, other
        if a.size != b.size:
            if a.size == 1:
                a = a.broadcast(b.size)
            elif b.size == 1:
                b = b.broadcast(a.size)
            else:
                raise ConicError(f"size mismatch {a.size} vs {b.size}")
        terms = dict(a.terms)
        for v, m in b.terms.items():
            terms[v] = terms[v] + m if v in terms else m
        return Affine(terms, a.const + b.const)

    __radd__ = __add__

    def __neg__(self) -> "Affine":
        return Affine({v: -m for v, m in self.terms.items()}, -self.const)

    def __sub__(self, other) -> "Affine":
        return self + (-self._coerce(other))

    def __rsub__(self, other) -> "Affine":
        return self._coerce(other) + (-self)

    def __mul__(self, scalar) -> "Affine":
        if not np.isscalar(scalar):
            raise ConicError("only scalar multiplication is supported; use matmul")
        return Affine({v: scalar * m for v, m in self.terms.items()}, scalar * self.const)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "Affine":
        return self * (1.0 / scalar)

    def __rmatmul__(self, mat) -> "Affine":
        mat = np.atleast_2d(np.asarray(mat, dtype=complex))
        if mat.shape[1] != self.size:
            raise ConicError(f"cannot apply {mat.shape} matrix to size-{self.size} expression")
        return Affine({v: mat @ m for v, m in self.terms.items()}, mat @ self.const)

    def __getitem__(self, idx) -> "Affine":
        sel = np.arange(self.size)[idx]
        sel = np.atleast_1d(sel)
        return Affine({v: m[sel] for v, m in self.terms.items()}, self.const[sel])

    def broadcast(self, size: int) -> "Affine":
        if self.size != 1:
            raise ConicError("only scalar expressions broadcast")
        return Affine({v: np.repeat(m, size, axis=0) for v, m in self.terms.items()},
                      np.repeat(self.const, size))

    @property
    def real(self) -> "Affine":
        return Affine({v: m.real.astype(complex) for v, m in self.terms.items()},
                      self.const.real.astype(complex))

    @property
    def imag(self) -> "Affine":
        return Affine({v: m.imag.astype(complex) for v, m in self.terms.items()},
                      self.const.imag.astype(complex))

    def sum(self) -> "Affine":
        return np.ones((1, self.size)) @ self

    def is_real(self, tol: float = 0.0) -> bool:
        if np.any(np.abs(self.const.imag) > tol):
            return False
        return all(not np.any(np.abs(m.imag) > tol) for m in self.terms.values())

    def evaluate(self, values: dict) -> np.ndarray:
        out = self.const.copy()
        for v, m in self.terms.items():
            out = out + m @ values[v]
        return out


def concat(exprs) -> Affine:
    exprs = [e if isinstance(e, Affine) else e.expr for e in exprs]
    variables = []
    for e in exprs:
        for v in e.terms:
            if v not in variables:
                variables.append(v)
    terms = {}
    for v in variables:
        terms[v] = np.vstack([e.terms.get(v, np.zeros((e.size, v.ncoords), dtype=complex))
                              for e in exprs])
    return Affine(terms, np.concatenate([e.const for e in exprs]))


def trace_product(a: np.ndarray, x: Variable | Affine, n: int | None = None) -> Affine:
    """Tr(A X) for an n x n matrix expression given as vec(X)."""
    xe = x.expr if isinstance(x, Variable) else x
    a = np.asarray(a, dtype=complex)
    return a.T.reshape(1, -1, order="F") @ xe


def stack_real(e: Affine) -> Affine:
    """[Re e; Im e] as one real expression."""
    return concat([e.real, e.imag])


# ---------------------------------------------------------------------------
# constraints and programs


@dataclass
class Constraint:
    kind: str            # "zero" | "nonneg" | "soc" | "psd"
    expr: Affine          # real for zero/nonneg/soc, vec of Hermitian for psd
    n: int = 0            # psd matrix order
    label: str = ""


@dataclass
class ConicProgram:
    variables: list = field(default_factory=list)
    constraints: list = field(default_factory=list)
    objective: Affine | None = None
    sense: str = "min"
    meta: dict = field(default_factory=dict)   # builder-specific scales, copied to the solution

    # declarations ---------------------------------------------------------
    def _declare(self, name: str, kind: str, n: int) -> Variable:
        if any(v.name == name for v in self.variables):
            raise ConicError(f"duplicate variable name {name!r}")
        if n < 1:
            raise ConicError(f"variable {name!r} needs a positive size")
        v = Variable(name, kind, int(n), index=len(self.variables))
        self.variables.append(v)
        return v

    def real(self, name: str, n: int = 1) -> Variable:
        return self._declare(name, "real", n)

    def complex(self, name: str, n: int) -> Variable:
        return self._declare(name, "complex", n)

    def hermitian(self, name: str, n: int) -> Variable:
        return self._declare(name, "hermitian", n)

    # constraints ----------------------------------------------------------
    def _real_expr(self, e, what: str) -> Affine:
        e = e.expr if isinstance(e, Variable) else e
        self._check_vars(e)
        if not e.is_real(1e-12 * (1.0 + _scale(e))):
            raise ConicError(f"{what} requires a real-valued expression")
        return e.real

    def _check_vars(self, e: Affine):
        for v in e.terms:
            if v.index < 0 or v.index >= len(self.variables) or self.variables[v.index] is not v:
                raise ConicError(f"expression references undeclared variable {v.name!r}")

    def add_zero(self, e, label: str = "") -> None:
        """e == 0; complex expressions constrain both parts."""
        e = e.expr if isinstance(e, Variable) else e
        self._check_vars(e)
        if not e.is_real():
            e = stack_real(e)
        self.constraints.append(Constraint("zero", e.real, label=label))

    def add_nonneg(self, e, label: str = "") -> None:
        self.constraints.append(Constraint("nonneg", self._real_expr(e, "nonneg"), label=label))

    def add_soc(self, t, x, label: str = "") -> None:
        """||x|| <= t; x may be complex."""
        t = self._real_expr(t, "soc bound")
        if t.size != 1:
            raise ConicError("soc bound must be scalar")
        x = x.expr if isinstance(x, Variable) else x
        self._check_vars(x)
        body = x.real if x.is_real() else stack_real(x)
        self.constraints.append(Constraint("soc", concat([t, body]), label=label))

    def add_rsoc(self, u, v, x, label: str = "") -> None:
        """u * v >= ||x||^2 with u, v >= 0, lowered to ||(2x, u - v)|| <= u + v."""
        u = self._real_expr(u, "rsoc")
        v = self._real_expr(v, "rsoc")
        if u.size != 1 or v.size != 1:
            raise ConicError("rsoc bounds must be scalar")
        x = x.expr if isinstance(x, Variable) else x
        self._check_vars(x)
        body = x.real if x.is_real() else stack_real(x)
        self.constraints.append(Constraint("soc", concat([u + v, 2.0 * body, u - v]),
                                           label=label))

    def add_psd(self, x, n: int | None = None, label: str = "") -> None:
        """Hermitian X >= 0, X given as vec(X) column-major."""
        if isinstance(x, Variable):
            if x.kind != "hermitian":
                raise ConicError("psd constraint on a non-matrix variable")
            n = x.n
            x = x.expr
        self._check_vars(x)
        if n is None:
            n = math.isqrt(x.size)
        if n * n != x.size:
            raise ConicError(f"psd expression of size {x.size} is not {n}x{n}")
        self.constraints.append(Constraint("psd", x, n=n, label=label))

    def minimize(self, e) -> None:
        self._set_objective(e, "min")

    def maximize(self, e) -> None:
        self._set_objective(e, "max")

    def _set_objective(self, e, sense: str):
        e = self._real_expr(e, "objective")
        if e.size != 1:
            raise ConicError("objective must be scalar")
        self.objective = e
        self.sense = sense

    # compilation ----------------------------------------------------------
    def offsets(self) -> list[int]:
        out, acc = [], 0
        for v in self.variables:
            out.append(acc)
            acc += v.ncoords
        return out + [acc]

    def _dense_rows(self, e: Affine, offs) -> np.ndarray:
        mat = np.zeros((e.size, offs[-1]))
        for v, m in e.terms.items():
            mat[:, offs[v.index]:offs[v.index + 1]] += m.real
        return mat

    def compile(self) -> "StandardForm":
        if self.objective is None:
            raise ConicError("program has no objective")
        offs = self.offsets()
        groups = {"zero": [], "nonneg": [], "soc": [], "psd": []}
        for c in self.constraints:
            groups[c.kind].append(c)
        blocks_f, blocks_g, cones = [], [], []
        for kind in ("zero", "nonneg"):
            if groups[kind]:
                e = concat([c.expr for c in groups[kind]])
                blocks_f.append(self._dense_rows(e, offs))
                blocks_g.append(e.const.real)
                cones.append((kind, e.size))
        for c in groups["soc"]:
            blocks_f.append(self._dense_rows(c.expr, offs))
            blocks_g.append(c.expr.const.real)
            cones.append(("soc", c.expr.size))
        for c in groups["psd"]:
            f, g = _psd_rows(c.expr, c.n, self._dense_rows(c.expr.real, offs),
                             self._dense_rows(c.expr.imag, offs))
            blocks_f.append(f)
            blocks_g.append(g)
            cones.append(("psd", 2 * c.n))
        nz = offs[-1]
        f = np.vstack(blocks_f) if blocks_f else np.zeros((0, nz))
        g = np.concatenate(blocks_g) if blocks_g else np.zeros(0)
        c_vec = self._dense_rows(self.objective, offs)[0]
        c_off = float(self.objective.const.real[0])
        if self.sense == "max":
            c_vec, c_off = -c_vec, -c_off
        return StandardForm(c=c_vec, c_offset=c_off, f=sp.csc_matrix(f), g=g, cones=cones)

    # verification ---------------------------------------------------------
    def residuals(self, values: dict) -> list[float]:
        """Scale-relative violation of every constraint at ``values``."""
        out = []
        for c in self.constraints:
            val = c.expr.evaluate(values)
            scale = 1.0 + float(np.max(np.abs(c.expr.const), initial=0.0))
            if c.kind == "zero":
                r = float(np.max(np.abs(val), initial=0.0))
            elif c.kind == "nonneg":
                r = float(max(0.0, -np.min(val.real)))
            elif c.kind == "soc":
                v = val.real
                r = float(max(0.0, np.linalg.norm(v[1:]) - v[0]))
            else:
                x = val.reshape(c.n, c.n, order="F")
                x = 0.5 * (x + x.conj().T)
                r = float(max(0.0, -np.linalg.eigvalsh(x)[0]))
            out.append(r / scale)
        return out

    def dump(self) -> str:
        """Sparse triplet listing of the compiled program, one block per cone."""
        sf = self.compile()
        buf = io.StringIO()
        buf.write(f"# variables: {', '.join(f'{v.name}:{v.kind}[{v.n}]' for v in self.variables)}\n")
        buf.write(f"# sense: {self.sense}  coordinates: {sf.c.size}  rows: {sf.g.size}\n")
        buf.write("objective\n")
        for j in np.flatnonzero(sf.c):
            buf.write(f"  {j} {float(sf.c[j])!r}\n")
        coo = sf.f.tocoo()
        start = 0
        for kind, dim in sf.cones:
            rows = sf.row_count(kind, dim)
            buf.write(f"cone {kind} dim {dim} rows {start}:{start + rows}\n")
            mask = (coo.row >= start) & (coo.row < start + rows)
            for r, col, val in sorted(zip(coo.row[mask], coo.col[mask], coo.data[mask])):
                buf.write(f"  F {r} {col} {float(val)!r}\n")
            for r in range(start, start + rows):
                if sf.g[r] != 0.0:
                    buf.write(f"  g {r} {float(sf.g[r])!r}\n")
            start += rows
        return buf.getvalue()


def _scale(e: Affine) -> float:
    vals = [np.max(np.abs(m)) for m in e.terms.values() if m.size]
    vals.append(float(np.max(np.abs(e.const), initial=0.0)))
    return float(max(vals))


def _psd_rows(expr: Affine, n: int, re_rows: np.ndarray, im_rows: np.ndarray):
    """Rows of svec(embedding(X)) for the real 2n x 2n embedding, upper
    triangle column-major with sqrt(2) on off-diagonal entries."""
    const = expr.const
    d = 2 * n
    rows, g = [], []
    for col in range(d):
        for row in range(col + 1):
            scale = 1.0 if row == col else math.sqrt(2.0)
            if col < n:
                k = row + col * n
                rows.append(scale * re_rows[k])
                g.append(scale * const[k].real)
            elif row >= n:
                k = (row - n) + (col - n) * n
                rows.append(scale * re_rows[k])
                g.append(scale * const[k].real)
            else:
                k = row + (col - n) * n
                rows.append(-scale * im_rows[k])
                g.append(-scale * const[k].imag)
    return np.array(rows), np.array(g)


def hermitian_to_real_embedding(x: np.ndarray) -> np.ndarray:
    """[[Re X, -Im X], [Im X, Re X]]; X >= 0 iff the embedding is."""
    x = np.asarray(x)
    if x.ndim != 2 or x.shape[0] != x.shape[1]:
        raise ConicError("embedding needs a square matrix")
    if not np.allclose(x, x.conj().T, rtol=0.0, atol=1e-12 * (1.0 + np.max(np.abs(x), initial=0.0))):
        raise ConicError("embedding needs a Hermitian matrix")
    return np.block([[x.real, -x.imag], [x.imag, x.real]])


# ---------------------------------------------------------------------------
# standard form and backends


@dataclass
class StandardForm:
    """min c^T z + c_offset  s.t.  g + F z in K."""

    c: np.ndarray
    c_offset: float
    f: sp.csc_matrix
    g: np.ndarray
    cones: list

    @staticmethod
    def row_count(kind: str, dim: int) -> int:
        return dim * (dim + 1) // 2 if kind == "psd" else dim


@dataclass
class BackendResult:
    status: str
    z: np.ndarray | None
    detail: str = ""


@dataclass
class ConicSolution:
    status: str
    values: dict
    objective_value: float
    solver_tolerance: float
    max_residual: float = float("nan")
    detail: str = ""
    meta: dict = field(default_factory=dict)

    def __getitem__(self, var: Variable | str):
        return self.values[var if isinstance(var, str) else var.name]


class ClarabelBackend:
    """Interior-point backend (the default)."""

    name = "clarabel"

    def solve(self, sf: StandardForm, tol: float) -> BackendResult:
        import clarabel

        cones = []
        for kind, dim in sf.cones:
            if kind == "zero":
                cones.append(clarabel.ZeroConeT(dim))
            elif kind == "nonneg":
                cones.append(clarabel.NonnegativeConeT(dim))
            elif kind == "soc":
                cones.append(clarabel.SecondOrderConeT(dim))
            else:
                cones.append(clarabel.PSDTriangleConeT(dim))
        nz = sf.c.size
        settings = clarabel.DefaultSettings()
        settings.verbose = False
        settings.tol_gap_abs = tol
        settings.tol_gap_rel = tol
        settings.tol_feas = tol
        settings.tol_ktratio = max(tol, 1e-8)
        settings.max_iter = 200
        p = sp.csc_matrix((nz, nz))
        a = sp.csc_matrix(-sf.f)
        try:
            solver = clarabel.DefaultSolver(p, sf.c, a, sf.g, cones, settings)
            res = solver.solve()
        except Exception as exc:  # the binding raises plain exceptions
            raise BackendError(f"clarabel failed: {exc}") from exc
        status = str(res.status)
        if status in ("Solved", "AlmostSolved"):
            return BackendResult(OPTIMAL, np.asarray(res.x), status)
        if status in ("PrimalInfeasible", "AlmostPrimalInfeasible"):
            return BackendResult(INFEASIBLE, None, status)
        if status in ("DualInfeasible", "AlmostDualInfeasible"):
            return BackendResult(UNBOUNDED, None, status)
        return BackendResult(NUMERICAL_FAILURE, None, status)


class CvxpyBackend:
    """Routes the standard form through cvxpy (optional dependency)."""

    name = "cvxpy"

    def __init__(self, solver: str | None = None):
        self.solver = solver

    def solve(self, sf: StandardForm, tol: float) -> BackendResult:
        try:
            import cvxpy as cp
        except ImportError as exc:
            raise BackendError("cvxpy is not installed") from exc
        z = cp.Variable(sf.c.size)
        s = sf.g + sf.f @ z
        cons = []
        start = 0
        for kind, dim in sf.cones:
            rows = StandardForm.row_count(kind, dim)
            blk = s[start:start + rows]
            if kind == "zero":
                cons.append(blk == 0)
            elif kind == "nonneg":
                cons.append(blk >= 0)
            elif kind == "soc":
                cons.append(cp.SOC(blk[0], blk[1:]))
            else:
                unpack = _svec_unpack(dim)
                mat = cp.reshape(unpack @ blk, (dim, dim), order="F")
                cons.append(0.5 * (mat + mat.T) >> 0)
            start += rows
        prob = cp.Problem(cp.Minimize(sf.c @ z), cons)
        try:
            prob.solve(solver=self.solver)
        except cp.SolverError as exc:
            return BackendResult(NUMERICAL_FAILURE, None, str(exc))
        st = prob.status
        if st in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
            return BackendResult(OPTIMAL, np.asarray(z.value), st)
        if st in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
            return BackendResult(INFEASIBLE, None, st)
        if st in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
            return BackendResult(UNBOUNDED, None, st)
        return BackendResult(NUMERICAL_FAILURE, None, st)


def _svec_unpack(d: int) -> sp.csr_matrix:
    rows, cols, vals = [], [], []
    k = 0
    for col in range(d):
        for row in range(col + 1):
            if row == col:
                rows.append(row + col * d)
                cols.append(k)
                vals.append(1.0)
            else:
                v = 1.0 / math.sqrt(2.0)
                rows += [row + col * d, col + row * d]
                cols += [k, k]
                vals += [v, v]
            k += 1
    return sp.csr_matrix((vals, (rows, cols)), shape=(d * d, k))


def get_backend(name: str = "clarabel"):
    if name == "clarabel":
        return ClarabelBackend()
    if name == "cvxpy":
        return CvxpyBackend()
    raise ConicError(f"unknown backend {name!r}")


def solve(p: ConicProgram, backend=None, tol: float = DEFAULT_TOL) -> ConicSolution:
    """Solve ``p`` and re-verify every constraint on the returned point."""
    if backend is None:
        backend = ClarabelBackend()
    elif isinstance(backend, str):
        backend = get_backend(backend)
    sf = p.compile()
    res = backend.solve(sf, tol)
    verify_tol = VERIFY_FACTOR * tol
    if res.status != OPTIMAL:
        return ConicSolution(res.status, {}, float("nan"), verify_tol, detail=res.detail,
                             meta=dict(p.meta))
    offs = p.offsets()
    coords = {v: res.z[offs[v.index]:offs[v.index + 1]] for v in p.variables}
    values = {v.name: v.value_from(coords[v]) for v in p.variables}
    obj = float(p.objective.evaluate(coords).real[0])
    worst = max(p.residuals(coords), default=0.0)
    status = OPTIMAL if worst <= verify_tol else NUMERICAL_FAILURE
    detail = res.detail if status == OPTIMAL else f"{res.detail}; residual {worst:.3e} > {verify_tol:.1e}"
    return ConicSolution(status, values, obj, verify_tol, worst, detail, dict(p.meta))

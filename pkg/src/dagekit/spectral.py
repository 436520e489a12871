"""Linear and kernel DAGE: ratio-trace and trace-ratio solvers.

The DAGE criterion is a minimization,

    min_V  Tr(V^T S_L V) / Tr(V^T S_B V),

with ``S_L = X L X^T`` (intrinsic scatter) and ``S_B = X B X^T`` (penalty
scatter), or ``K L K`` / ``K B K`` in kernel form.
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import kernels
from .errors import DimensionMismatch, DimensionTooLarge, NonPositiveSigma, SingularNumerator, SolverError

MAX_PROBLEM_SIZE = 4096
DEFAULT_REG = 1e-6

RATIO_TRACE = "ratio_trace"
TRACE_RATIO = "trace_ratio"
SOLVERS = (RATIO_TRACE, TRACE_RATIO)


def _sym(m):
    return 0.5 * (m + m.T)


def scatter(x, lap, reg=0.0):
    """``X L X^T`` plus a ridge of ``reg * Tr(X L X^T) / D``, symmetrized."""
    x = np.asarray(x, dtype=np.float64)
    lap = np.asarray(lap, dtype=np.float64)
    if x.ndim != 2 or lap.shape != (x.shape[1], x.shape[1]):
        raise DimensionMismatch(f"data {x.shape} does not match Laplacian {lap.shape}")
    if reg < 0:
        raise SolverError(f"ridge must be non-negative, got {reg}")
    m = x @ lap @ x.T
    if reg:
        m = m + reg * (np.trace(m) / m.shape[0]) * np.eye(m.shape[0])
    return _sym(m)


@dataclass(frozen=True, eq=False)
class ScatterPencil:
    """Intrinsic (numerator) and penalty (denominator) scatter matrices."""

    numerator: np.ndarray
    denominator: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.numerator, dtype=np.float64)
        b = np.asarray(self.denominator, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape != b.shape:
            raise DimensionMismatch(f"pencil matrices must be square and equal-sized: {a.shape}, {b.shape}")
        object.__setattr__(self, "numerator", a)
        object.__setattr__(self, "denominator", b)

    @property
    def m(self):
        return self.numerator.shape[0]

    def scaled(self, c):
        return ScatterPencil(c * self.numerator, c * self.denominator)

    def check(self, sym_tol=1e-10, psd_tol=1e-9):
        """Raise ``SolverError`` unless both matrices are symmetric PSD within tolerance."""
        for name, mat in (("numerator", self.numerator), ("denominator", self.denominator)):
            scale = max(1.0, float(np.abs(mat).max(initial=0.0)))
            if np.abs(mat - mat.T).max(initial=0.0) > sym_tol * scale:
                raise SolverError(f"{name} is not symmetric")
            if np.linalg.eigvalsh(_sym(mat)).min(initial=0.0) < -psd_tol * scale:
                raise SolverError(f"{name} is not positive semidefinite")
        return self


@dataclass(frozen=True)
class Kernel:
    kind: str = "linear"
    sigma: float = None

    def __post_init__(self):
        if self.kind not in ("linear", "rbf"):
            raise SolverError(f"unknown kernel {self.kind!r}")
        if self.kind == "rbf" and not (self.sigma is not None and self.sigma > 0):
            raise NonPositiveSigma(f"RBF kernel needs sigma > 0, got {self.sigma}")

    def to_dict(self):
        return {"type": self.kind} if self.kind == "linear" else {"type": "rbf", "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d):
        return cls(d["type"], d.get("sigma"))


LINEAR = Kernel("linear")


def gram_cross(a, b, kernel=LINEAR):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] != b.shape[0]:
        raise DimensionMismatch(f"feature dims differ: {a.shape[0]} vs {b.shape[0]}")
    if kernel.kind == "linear":
        return a.T @ b
    return np.exp(-kernels.pairwise_sqdist(a, b) / (2.0 * kernel.sigma ** 2))


def gram(x, kernel=LINEAR):
    """Kernel matrix ``K[i, j] = kappa(x_i, x_j)`` over the columns of ``x``."""
    k = gram_cross(x, x, kernel)
    k = _sym(k)
    if kernel.kind == "rbf":
        np.fill_diagonal(k, 1.0)
    return k


@dataclass(frozen=True, eq=False)
class EmbeddingModel:
    """Linear projection ``V`` (D x d) or kernel coefficients ``A`` (N x d)."""

    kind: str
    projection: np.ndarray
    kernel: Kernel = None
    reference: np.ndarray = None
    reg: float = DEFAULT_REG
    solver: str = RATIO_TRACE
    lam: float = None
    eigenvalues: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        proj = np.asarray(self.projection, dtype=np.float64)
        if proj.ndim != 2 or proj.shape[1] > proj.shape[0]:
            raise DimensionMismatch(f"projection must be m x d with d <= m, got {proj.shape}")
        object.__setattr__(self, "projection", proj)
        if self.kind == "kernel":
            if self.kernel is None or self.reference is None:
                raise SolverError("kernel model needs a kernel and reference data")
            ref = np.asarray(self.reference, dtype=np.float64)
            if ref.shape[1] != proj.shape[0]:
                raise DimensionMismatch(f"{ref.shape[1]} reference samples for {proj.shape[0]} coefficient rows")
            object.__setattr__(self, "reference", ref)
        elif self.kind != "linear":
            raise SolverError(f"unknown model kind {self.kind!r}")

    @property
    def d(self):
        return self.projection.shape[1]

    @property
    def input_dim(self):
        return self.projection.shape[0] if self.kind == "linear" else self.reference.shape[0]

    def transform(self, x_new):
        return transform(self, x_new)

    def to_dict(self):
        out = {
            "kind": self.kind,
            "d": self.d,
            "projection": self.projection.tolist(),
            "reg": self.reg,
            "solver": self.solver,
        }
        if self.kind == "kernel":
            out["kernel"] = self.kernel.to_dict()
            out["reference"] = self.reference.tolist()
        if self.lam is not None:
            out["lambda"] = self.lam
        return out

    @classmethod
    def from_dict(cls, d):
        kind = d["kind"]
        return cls(
            kind=kind,
            projection=np.array(d["projection"], dtype=np.float64).reshape(-1, d["d"]),
            kernel=Kernel.from_dict(d["kernel"]) if kind == "kernel" else None,
            reference=np.array(d["reference"], dtype=np.float64) if kind == "kernel" else None,
            reg=d["reg"],
            solver=d["solver"],
            lam=d.get("lambda"),
        )

    def to_json(self):
        # json writes floats with repr(), the shortest round-trip form
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class TraceRatioResult:
    model: EmbeddingModel
    lam: float
    iterations: int
    lambda_history: tuple
    converged: bool = True


def _fix_signs(v):
    """Flip columns so each one's largest-magnitude entry is positive."""
    v = np.array(v, dtype=np.float64)
    rows = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[rows, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def _check_dims(m, d):
    if m > MAX_PROBLEM_SIZE:
        raise DimensionTooLarge(f"problem size {m} exceeds the {MAX_PROBLEM_SIZE} cap (O(m^3) eigensolver)")
    if not 1 <= d <= m:
        raise DimensionTooLarge(f"target dimension must be in [1, {m}], got {d}")


def _ridge(pencil, reg):
    """Regularized numerator ``S_L + reg * (Tr(S_L) / m) * I``.

    Falls back to ``Tr(S_B) / m`` (then 1) as the scale when ``S_L`` has zero trace.
    """
    if reg < 0:
        raise SolverError(f"ridge must be non-negative, got {reg}")
    a = _sym(pencil.numerator)
    m = a.shape[0]
    if not reg:
        return a
    scale = np.trace(a) / m
    if not scale > 0:
        scale = np.trace(pencil.denominator) / m
    if not scale > 0:
        scale = 1.0
    return a + reg * scale * np.eye(m)


def _ratio_trace(pencil, d, reg):
    _check_dims(pencil.m, d)
    a = _ridge(pencil, reg)
    b = _sym(pencil.denominator)
    try:
        # Cholesky reduction of the regularized numerator to a standard problem
        vals, vecs = scipy.linalg.eigh(b, a, subset_by_index=[pencil.m - d, pencil.m - 1])
    except np.linalg.LinAlgError as exc:
        raise SingularNumerator(f"regularized numerator is not positive definite: {exc}") from None
    order = np.argsort(vals, kind="stable")[::-1]
    return vals[order], _fix_signs(vecs[:, order]), a


def solve_ratio_trace(pencil, d, reg=DEFAULT_REG):
    """Generalized eigenvectors of ``(S_B, S_L + ridge)`` for the ``d`` largest eigenvalues.

    Columns are ``(S_L + ridge)``-orthonormal.
    """
    vals, vecs, _ = _ratio_trace(pencil, d, reg)
    return EmbeddingModel("linear", vecs, reg=reg, solver=RATIO_TRACE, eigenvalues=vals)


def trace_ratio_value(v, a, b):
    return float(np.trace(v.T @ a @ v) / np.trace(v.T @ b @ v))


def solve_trace_ratio(pencil, d, tol=1e-10, max_iter=200, reg=DEFAULT_REG):
    """Iterative trace-ratio minimization over orthonormal ``V``.

    Each step takes the ``d`` smallest eigenvectors of ``S_L - lambda S_B``
    and updates ``lambda`` to the trace ratio they attain.  Starts from the
    orthonormalized ratio-trace solution.
    """
    _, v0, a = _ratio_trace(pencil, d, reg)
    b = _sym(pencil.denominator)
    v, _ = np.linalg.qr(v0)
    v = _fix_signs(v)
    lam = trace_ratio_value(v, a, b)
    history = [lam]
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        _, vecs = scipy.linalg.eigh(a - lam * b, subset_by_index=[0, d - 1])
        cand = _fix_signs(vecs)
        denom = np.trace(cand.T @ b @ cand)
        if not denom > 0:
            warnings.warn("penalty scatter vanishes on the current subspace; stopping")
            break
        new = float(np.trace(cand.T @ a @ cand) / denom)
        if new > lam:
            # round-off only; keep the best iterate and leave it out of the history
            converged = abs(new - lam) <= tol * max(1.0, lam)
            break
        v = cand
        done = abs(new - lam) <= tol * max(1.0, lam)
        lam = new
        history.append(lam)
        if done:
            converged = True
            break
    if not converged:
        warnings.warn(f"trace ratio did not converge in {max_iter} iterations")
    model = EmbeddingModel("linear", v, reg=reg, solver=TRACE_RATIO, lam=lam)
    return TraceRatioResult(model, lam, iterations, tuple(history), converged)


def _solve(pencil, d, reg, solver):
    if solver == RATIO_TRACE:
        model = solve_ratio_trace(pencil, d, reg)
        return model.projection, None, model.eigenvalues
    if solver == TRACE_RATIO:
        res = solve_trace_ratio(pencil, d, reg=reg)
        return res.model.projection, res.lam, None
    raise SolverError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


def fit_linear_dage(x, graphs, d, reg=DEFAULT_REG, solver=RATIO_TRACE):
    """Linear DAGE projection ``V`` (D x d) for data ``x`` (D x N) and a graph pair."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != graphs.n:
        raise DimensionMismatch(f"{x.shape[1]} samples for a {graphs.n}-node graph")
    pencil = ScatterPencil(scatter(x, graphs.L), scatter(x, graphs.B))
    v, lam, vals = _solve(pencil, d, reg, solver)
    return EmbeddingModel("linear", v, reg=reg, solver=solver, lam=lam, eigenvalues=vals)


def fit_kernel_dage(x, graphs, kernel, d, reg=DEFAULT_REG, solver=RATIO_TRACE):
    """Kernel DAGE coefficients ``A`` (N x d) with ``V = Phi A``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != graphs.n:
        raise DimensionMismatch(f"{x.shape[1]} samples for a {graphs.n}-node graph")
    _check_dims(x.shape[1], d)
    k = gram(x, kernel)
    pencil = ScatterPencil(_sym(k @ graphs.L @ k), _sym(k @ graphs.B @ k))
    a, lam, vals = _solve(pencil, d, reg, solver)
    return EmbeddingModel("kernel", a, kernel=kernel, reference=x, reg=reg, solver=solver, lam=lam,
                          eigenvalues=vals)


def transform(model, x_new):
    """Embed the columns of ``x_new``: ``V^T X`` or ``A^T K(reference, X)``."""
    x_new = np.asarray(x_new, dtype=np.float64)
    if x_new.ndim == 1:
        x_new = x_new[:, None]
    if x_new.shape[0] != model.input_dim:
        raise DimensionMismatch(f"model expects {model.input_dim} features, got {x_new.shape[0]}")
    if model.kind == "linear":
        return model.projection.T @ x_new
    return model.projection.T @ gram_cross(model.reference, x_new, model.kernel)

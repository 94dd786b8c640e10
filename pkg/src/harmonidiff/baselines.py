"""Classical composition baselines: copy-paste and Poisson blending."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve_triangular

from .errors import ContractError, ConvergenceError, PlacementError
from .tasks import CompositionTask, place_source

SOLVERS = ("jacobi", "gauss-seidel", "conjugate-gradient")


@dataclass(frozen=True)
class PoissonConfig:
    max_iterations: int = 10_000
    tolerance: float = 1e-6
    solver: str = "conjugate-gradient"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ContractError(f"tolerance must be positive, got {self.tolerance}")
        if self.max_iterations < 1:
            raise ContractError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.solver not in SOLVERS:
            raise ContractError(f"solver must be one of {SOLVERS}, got {self.solver!r}")


def copy_paste(task: CompositionTask) -> np.ndarray:
    return place_source(task).composite


@dataclass
class PoissonSystem:
    """5-point Laplacian system over the pixels of ``omega``.

    Row ``k`` is pixel ``index[k]``: ``n_k f_k - sum(f_q, q in omega) =
    sum(target_q, q on the boundary) + sum(g_k - g_q)`` where ``n_k`` counts
    in-grid neighbours. ``rhs`` has one column per channel.
    """

    matrix: sparse.csr_matrix
    rhs: np.ndarray
    index: tuple


def build_poisson_system(target, guide, omega) -> PoissonSystem:
    """Assemble the system for ``guide`` gradients inside ``omega`` with ``target`` Dirichlet values.

    Neighbours outside the grid are dropped (zero flux); at least one pixel
    must touch a Dirichlet neighbour or the system is singular.
    """
    h, w = omega.shape
    ys, xs = np.nonzero(omega)
    n = ys.size
    label = -np.ones((h, w), dtype=np.int64)
    label[ys, xs] = np.arange(n)
    channels = target.shape[2]
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    rhs = np.zeros((n, channels))
    touches_boundary = False
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        qy, qx = ys + dy, xs + dx
        inside = (qy >= 0) & (qy < h) & (qx >= 0) & (qx < w)
        k = np.nonzero(inside)[0]
        qy, qx = qy[k], qx[k]
        diag[k] += 1
        rhs[k] += guide[ys[k], xs[k]] - guide[qy, qx]
        q_label = label[qy, qx]
        interior = q_label >= 0
        rows.append(k[interior])
        cols.append(q_label[interior])
        vals.append(-np.ones(interior.sum()))
        dirichlet = k[~interior]
        if dirichlet.size:
            touches_boundary = True
            rhs[dirichlet] += target[qy[~interior], qx[~interior]]
    if n and not touches_boundary:
        raise PlacementError("paste region has no boundary inside the target; Poisson problem is singular")
    rows.append(np.arange(n))
    cols.append(np.arange(n))
    vals.append(diag)
    matrix = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    return PoissonSystem(matrix, rhs, (ys, xs))


def _residual(a, x, b):
    return float(np.max(np.abs(b - a @ x))) if b.size else 0.0


def _jacobi(a, b, x, cfg):
    d = a.diagonal()
    off = a - sparse.diags(d)
    for it in range(1, cfg.max_iterations + 1):
        x = (b - off @ x) / d
        res = _residual(a, x, b)
        if res <= cfg.tolerance:
            return x, res, it
    raise ConvergenceError("Jacobi did not converge", res, cfg.max_iterations)


def _gauss_seidel(a, b, x, cfg):
    lower = sparse.tril(a, format="csr")
    upper = sparse.triu(a, k=1, format="csr")
    for it in range(1, cfg.max_iterations + 1):
        x = spsolve_triangular(lower, b - upper @ x, lower=True)
        res = _residual(a, x, b)
        if res <= cfg.tolerance:
            return x, res, it
    raise ConvergenceError("Gauss-Seidel did not converge", res, cfg.max_iterations)


def _conjugate_gradient(a, b, x, cfg):
    r = b - a @ x
    res = float(np.max(np.abs(r)))
    if res <= cfg.tolerance:
        return x, res, 0
    p = r.copy()
    rr = r @ r
    for it in range(1, cfg.max_iterations + 1):
        ap = a @ p
        alpha = rr / (p @ ap)
        x = x + alpha * p
        r = r - alpha * ap
        res = float(np.max(np.abs(r)))
        if res <= cfg.tolerance:
            # recurrence drift: confirm against the true residual
            res = _residual(a, x, b)
            if res <= cfg.tolerance:
                return x, res, it
            r = b - a @ x
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    raise ConvergenceError("conjugate gradient did not converge", res, cfg.max_iterations)


_SOLVER_FUNCS = {
    "jacobi": _jacobi,
    "gauss-seidel": _gauss_seidel,
    "conjugate-gradient": _conjugate_gradient,
}


def solve_poisson(target, guide, omega, cfg: PoissonConfig = PoissonConfig()):
    """Unclamped solution image and the largest final residual over channels."""
    target = np.asarray(target, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    omega = np.asarray(omega, dtype=bool)
    out = target.copy()
    if not omega.any():
        return out, 0.0
    system = build_poisson_system(target, guide, omega)
    ys, xs = system.index
    worst = 0.0
    solve = _SOLVER_FUNCS[cfg.solver]
    for c in range(target.shape[2]):
        b = system.rhs[:, c]
        x, res, _ = solve(system.matrix, b, guide[ys, xs, c].copy(), cfg)
        out[ys, xs, c] = x
        worst = max(worst, res)
    return out, worst


def guidance_canvas(task: CompositionTask) -> tuple[np.ndarray, np.ndarray]:
    """Target-shaped canvas carrying the rescaled source, edge-replicated outside its box.

    Returns ``(canvas, omega)``.
    """
    placed = place_source(task)
    y0, y1, x0, x1 = placed.box
    th, tw = task.target.shape[:2]
    padded = np.pad(placed.source, ((y0, th - y1), (x0, tw - x1), (0, 0)), mode="edge")
    return padded, placed.omega


def poisson_blend_unclamped(task: CompositionTask, cfg: PoissonConfig = PoissonConfig()) -> np.ndarray:
    guide, omega = guidance_canvas(task)
    out, _ = solve_poisson(task.target, guide, omega, cfg)
    return out


def poisson_blend(task: CompositionTask, cfg: PoissonConfig = PoissonConfig()) -> np.ndarray:
    """Seamless cloning of the source gradients into the target, clamped to ``[0, 1]``."""
    return np.clip(poisson_blend_unclamped(task, cfg), 0.0, 1.0)

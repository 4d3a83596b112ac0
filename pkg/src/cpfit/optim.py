"""Completion solvers: alternating, coordinate, stochastic gradient, and
second-order steps with an implicit preconditioned conjugate gradient.

All solvers share one derivative convention: the gradient block for mode d is
mttkrp(dphi tensor, factors, d) + 2 * reg * factors[d], and second-order
blocks carry 2 * reg on their diagonals. The specialized least-squares
alternating path solves (G_i + reg I) x = mttkrp(T) instead, which is the
same update with the common factor of two cancelled.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import RngState, SparseTensor, model_values
from .exceptions import NumericalError
from .kernels import gram_blocks, mttkrp, solve_factor, tttp
from .losses import LossFunction, derivative_tensors, get_loss, model_at_observed
from .trace import RunTrace

ALGORITHMS = ("als", "ccd", "sgd", "gn", "newton")

_TINY = 1e-300


@dataclass
class SolverConfig:
    """Settings for a completion run."""

    rank: int = 10
    algorithm: str = "als"
    loss: str = "ls"
    reg: float = 1e-5
    max_iters: int = 20
    tol: float = 1e-6              # relative objective change between records
    inner_max: int = 5             # Newton steps per factor (generalized path)
    inner_tol: float = 1e-3        # relative step size to stop inner Newton
    cg_tol: float = 5e-3
    cg_max: int | None = None      # default min(30, 3 * rank)
    step: float = 5e-3             # SGD learning rate
    sample_rate: float = 1.0       # SGD per-entry sampling probability
    init: str = "uniform"          # "uniform" in [0, 1/sqrt(R)], "gaussian",
                                   # or "svd" (leading matricization vectors)
    seed: int = 0
    deterministic: bool = False
    threads: int = 1
    row_batches: int = 1
    h_slices: int | None = None
    record_every: int | None = None  # default: 20 for sgd, 1 otherwise
    freeze_curvature: bool = False   # reuse d2phi across inner Newton steps
    calibrate_init: bool = False     # rescale init to the data's LS scale
    gn_damping: float = 0.0          # initial extra Tikhonov damping for
                                     # second-order steps, relative to the
                                     # mean curvature diagonal (0 = off)
    gn_damping_decay: float = 0.5    # geometric decay of that damping
    warmup_sweeps: int = 0           # alternating sweeps before the first
                                     # second-order step (gn/newton only)

    def __post_init__(self):
        if self.rank < 1:
            raise ValueError("rank must be >= 1")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.reg < 0:
            raise ValueError("reg must be >= 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        for name in ("tol", "inner_tol", "cg_tol", "step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 < self.sample_rate <= 1.0:
            raise ValueError("sample_rate must be in (0, 1]")
        if self.cg_tol >= 1.0:
            raise ValueError("cg_tol must be in (0, 1)")
        if self.init not in ("uniform", "gaussian", "svd"):
            raise ValueError(f"unknown init law {self.init!r}")
        if self.threads < 1 or self.inner_max < 1 or self.row_batches < 1:
            raise ValueError("threads, inner_max, row_batches must be >= 1")
        if self.gn_damping < 0 or not 0.0 < self.gn_damping_decay <= 1.0:
            raise ValueError("gn_damping must be >= 0 and its decay in (0, 1]")
        if self.warmup_sweeps < 0:
            raise ValueError("warmup_sweeps must be >= 0")

    def cg_max_iters(self) -> int:
        return self.cg_max if self.cg_max is not None else min(30, 3 * self.rank)


@dataclass
class CompletionState:
    """Mutable solver state: the factor matrices plus per-sweep caches."""

    factors: list[np.ndarray]
    rng: RngState
    iteration: int = 0
    # normal-equation blocks and right-hand sides from the latest
    # least-squares subiteration, per mode (for the fast loss identity)
    ls_gram: list = field(default_factory=list)
    ls_rhs: list = field(default_factory=list)
    # current extra damping for second-order steps (set on first step)
    gn_damping: float | None = None

    def __post_init__(self):
        if not self.ls_gram:
            self.ls_gram = [None] * len(self.factors)
        if not self.ls_rhs:
            self.ls_rhs = [None] * len(self.factors)


def init_state(t: SparseTensor, cfg: SolverConfig,
               rng: RngState | None = None) -> CompletionState:
    """Draw initial factor matrices.

    The default law is uniform on [0, 1/sqrt(R)], which keeps initial model
    values O(1) regardless of rank (relevant for exponential-link losses).
    "svd" seeds each factor with leading left singular vectors of the
    observed tensor's mode matricization, which shortens the alignment phase
    of alternating solvers on well-conditioned data.
    """
    if rng is None:
        rng = RngState(cfg.seed).child(0)
    g = rng.generator()
    scale = 1.0 / math.sqrt(cfg.rank)
    factors = []
    for mode, d in enumerate(t.shape):
        if cfg.init == "uniform":
            factors.append(g.random((d, cfg.rank)) * scale)
        elif cfg.init == "gaussian":
            factors.append(g.standard_normal((d, cfg.rank)) * scale)
        else:
            factors.append(_svd_init_factor(t, mode, cfg.rank, g, scale))
    if cfg.calibrate_init and t.nnz:
        model = model_values(factors, t.coords())
        denom = float(np.dot(model, model))
        if denom > 0.0:
            c = float(np.dot(t.values, model)) / denom
            if c != 0.0:
                s = abs(c) ** (1.0 / t.order)
                for f in factors:
                    f *= s
                if c < 0.0:
                    factors[0] *= -1.0
    return CompletionState(factors=factors, rng=rng)


def _svd_init_factor(t: SparseTensor, mode: int, rank: int,
                     g: np.random.Generator, scale: float) -> np.ndarray:
    from scipy.sparse import csr_matrix
    from scipy.sparse.linalg import svds

    coords = t.coords()
    rows = coords[mode]
    n_rows = t.shape[mode]
    n_cols = 1
    cols = np.zeros(t.nnz, dtype=np.int64)
    for n in range(t.order):
        if n == mode:
            continue
        cols = cols * t.shape[n] + coords[n]
        n_cols *= t.shape[n]
    k = min(rank, n_rows - 1, n_cols - 1)
    if k < 1:
        return g.random((n_rows, rank)) * scale
    mat = csr_matrix((t.values, (rows, cols)), shape=(n_rows, n_cols))
    u = svds(mat, k=k, return_singular_vectors="u",
             random_state=np.random.RandomState(0))[0]
    out = np.empty((n_rows, rank))
    out[:, :k] = u[:, ::-1]  # strongest components first
    if k < rank:
        out[:, k:] = g.random((n_rows, rank - k)) * scale
    return np.ascontiguousarray(out)


# ---------------------------------------------------------------------------
# alternating minimization

def als_sweep(t: SparseTensor, state: CompletionState, loss: LossFunction,
              cfg: SolverConfig, generalized: bool | None = None) -> None:
    """One pass of alternating minimization over all modes, in order.

    With least-squares loss (and ``generalized`` unset), each factor solve
    uses the observation mask and the data right-hand side directly. The
    generalized path runs damped-free inner Newton steps per factor using the
    current derivative tensors; for least-squares it converges in a single
    inner step and matches the specialized path.
    """
    if generalized is None:
        generalized = loss.ident != "ls"
    mask = t.observation_mask()
    if not generalized:
        for mode in range(t.order):
            rhs = mttkrp(t, state.factors, mode, threads=cfg.threads)
            try:
                new, gram = solve_factor(mask, state.factors, rhs, mode,
                                         reg=cfg.reg,
                                         row_batches=cfg.row_batches,
                                         threads=cfg.threads,
                                         return_gram=True)
            except NumericalError as err:
                raise NumericalError(f"alternating solve failed: {err}") from err
            state.factors[mode] = new
            state.ls_gram[mode] = gram
            state.ls_rhs[mode] = rhs
        return
    for mode in range(t.order):
        phi2 = None
        for inner in range(cfg.inner_max):
            model = model_at_observed(mask, state.factors, threads=cfg.threads)
            phi1, phi2_new = derivative_tensors(loss, t, model)
            if phi2 is None or not cfg.freeze_curvature:
                phi2 = phi2_new
            grad = mttkrp(phi1, state.factors, mode, threads=cfg.threads)
            grad += 2.0 * cfg.reg * state.factors[mode]
            try:
                delta = solve_factor(phi2, state.factors, -grad, mode,
                                     reg=2.0 * cfg.reg,
                                     row_batches=cfg.row_batches,
                                     threads=cfg.threads)
            except NumericalError as err:
                raise NumericalError(
                    f"inner Newton solve failed: {err}") from err
            state.factors[mode] = state.factors[mode] + delta
            rel = np.linalg.norm(delta) / max(
                np.linalg.norm(state.factors[mode]), _TINY)
            if rel < cfg.inner_tol:
                break


# ---------------------------------------------------------------------------
# coordinate minimization

def ccd_sweep(t: SparseTensor, state: CompletionState, loss: LossFunction,
              cfg: SolverConfig) -> None:
    """One coordinate-minimization sweep with column-then-mode ordering.

    For every rank-one column r, each mode's column is updated in turn: the
    rank-one contribution is added back into the residual, the closed-form
    (least squares) or inner-Newton (generalized) single-variable update is
    applied for all rows at once, and the residual is updated incrementally
    in O(nnz).
    """
    coords = t.coords()
    factors = state.factors
    order = t.order
    rank = factors[0].shape[1]
    if loss.ident == "ls":
        resid = t.values - model_values(factors, coords)
        for r in range(rank):
            cols = [factors[n][:, r] for n in range(order)]
            for mode in range(order):
                partial = np.ones(t.nnz)
                for p in range(order):
                    if p != mode:
                        partial = partial * cols[p][coords[p]]
                rho = resid + partial * cols[mode][coords[mode]]
                num = np.bincount(coords[mode], weights=rho * partial,
                                  minlength=t.shape[mode])
                den = np.bincount(coords[mode], weights=partial * partial,
                                  minlength=t.shape[mode])
                den_reg = den + cfg.reg
                new_col = np.where(den_reg > 0.0, num / np.where(
                    den_reg > 0.0, den_reg, 1.0), cols[mode])
                cols[mode][:] = new_col
                resid = rho - partial * cols[mode][coords[mode]]
        return
    model = model_values(factors, coords)
    for r in range(rank):
        cols = [factors[n][:, r] for n in range(order)]
        for mode in range(order):
            partial = np.ones(t.nnz)
            for p in range(order):
                if p != mode:
                    partial = partial * cols[p][coords[p]]
            for inner in range(cfg.inner_max):
                phi1 = loss.dphi(t.values, model)
                phi2 = loss.d2phi(t.values, model)
                num = np.bincount(coords[mode], weights=partial * phi1,
                                  minlength=t.shape[mode])
                num += 2.0 * cfg.reg * cols[mode]
                den = np.bincount(coords[mode],
                                  weights=partial * partial * phi2,
                                  minlength=t.shape[mode])
                den += 2.0 * cfg.reg
                delta = np.where(den > 0.0, -num / np.where(den > 0.0, den, 1.0),
                                 0.0)
                cols[mode][:] += delta
                model = model + partial * delta[coords[mode]]
                rel = np.linalg.norm(delta) / max(
                    np.linalg.norm(cols[mode]), _TINY)
                if rel < cfg.inner_tol:
                    break


# ---------------------------------------------------------------------------
# stochastic gradient descent

def sgd_sweep(t: SparseTensor, state: CompletionState, loss: LossFunction,
              cfg: SolverConfig, rng: RngState) -> None:
    """One sampled gradient step on all factor matrices at once.

    Draws a Bernoulli sample of the observed entries, evaluates the loss
    derivative tensor on the sample once, forms every mode's sampled gradient
    at the pre-step factors, and applies all updates together (a plain
    gradient step over the concatenated variables). The regularization pull
    is scaled by the sample rate so its expected strength matches the full
    gradient.
    """
    sampled = t.sample(cfg.sample_rate, rng)
    factors = state.factors
    shrink = 2.0 * cfg.step * cfg.reg * cfg.sample_rate
    if sampled.nnz == 0:
        for mode in range(t.order):
            factors[mode] = factors[mode] - shrink * factors[mode]
        return
    mask = sampled.observation_mask()
    model = model_at_observed(mask, factors, threads=cfg.threads)
    phi1 = sampled.with_values(loss.dphi(sampled.values, model.values))
    grads = [mttkrp(phi1, factors, mode, threads=cfg.threads)
             for mode in range(t.order)]
    for mode in range(t.order):
        updated = factors[mode] - cfg.step * grads[mode] \
            - shrink * factors[mode]
        if not np.isfinite(np.sum(updated)):
            raise NumericalError(
                f"sgd update diverged on mode {mode}; the learning rate is "
                "too high for this sample rate")
        factors[mode] = updated


# ---------------------------------------------------------------------------
# second-order machinery

def gradient_blocks(t: SparseTensor, factors, loss: LossFunction,
                    reg: float, model: SparseTensor | None = None,
                    threads: int = 1) -> list[np.ndarray]:
    """Per-mode gradient blocks: mttkrp of the dphi tensor plus 2*reg*factor."""
    mask = t.observation_mask()
    if model is None:
        model = model_at_observed(mask, factors, threads=threads)
    phi1 = t.with_values(loss.dphi(t.values, model.values))
    return [mttkrp(phi1, factors, d, threads=threads) + 2.0 * reg * factors[d]
            for d in range(t.order)]


def hessian_matvec(phi1: SparseTensor, phi2: SparseTensor, factors,
                   x_blocks, variant: str = "gauss_newton", reg: float = 0.0,
                   threads: int = 1) -> list[np.ndarray]:
    """Implicit product of the (approximate) second-order model with updates.

    Every second-order term is a tensor-times-tensor product of the d2phi
    tensor with the factor list where one slot is substituted by its update
    block, fed into an MTTKRP on the output mode. The "newton" variant adds
    the first-order cross terms, which are MTTKRPs of the dphi tensor with
    one substituted slot; "gauss_newton" omits them. Both variants add
    2 * reg * x on the diagonal. Cost O(nnz * R) per block pair.
    """
    if variant not in ("gauss_newton", "newton"):
        raise ValueError(f"unknown variant {variant!r}")
    n_modes = len(factors)
    if len(x_blocks) != n_modes:
        raise ValueError("one update block per mode required")
    for d in range(n_modes):
        if x_blocks[d].shape != factors[d].shape:
            raise ValueError(f"update block {d} shape mismatch")
    z_vals = np.zeros(phi2.nnz)
    for p in range(n_modes):
        substituted = list(factors)
        substituted[p] = x_blocks[p]
        z_vals += tttp(phi2, substituted, threads=threads).values
    z = phi2.with_values(z_vals)
    y = [mttkrp(z, factors, d, threads=threads) + 2.0 * reg * x_blocks[d]
         for d in range(n_modes)]
    if variant == "newton":
        for d in range(n_modes):
            for p in range(n_modes):
                if p == d:
                    continue
                substituted = list(factors)
                substituted[p] = x_blocks[p]
                y[d] += mttkrp(phi1, substituted, d, threads=threads)
    return y


class _SecondOrderOperator:
    """Fused implicit second-order product for one solver step.

    Mathematically identical to :func:`hessian_matvec`; gathers the
    leave-one-out factor products over the nonzeros once at construction so
    every CG iteration costs a few vectorized passes instead of rebuilding
    them per tensor contraction.
    """

    def __init__(self, phi1: SparseTensor, phi2: SparseTensor, factors,
                 variant: str = "gauss_newton", reg: float = 0.0):
        if variant not in ("gauss_newton", "newton"):
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.reg = reg
        self.phi1_vals = phi1.values
        self.phi2_vals = phi2.values
        self.coords = phi2.coords()
        self.dims = phi2.shape
        self.n_modes = len(factors)
        self.gathered = [factors[d][self.coords[d]]
                         for d in range(self.n_modes)]
        self.leave_one_out = []
        for d in range(self.n_modes):
            prod = None
            for p in range(self.n_modes):
                if p == d:
                    continue
                g = self.gathered[p]
                prod = g.copy() if prod is None else prod * g
            self.leave_one_out.append(prod)

    def __call__(self, x_blocks):
        rank = x_blocks[0].shape[1]
        gathered_x = [x_blocks[d][self.coords[d]]
                      for d in range(self.n_modes)]
        z = np.zeros(self.phi2_vals.shape)
        for d in range(self.n_modes):
            z += (self.leave_one_out[d] * gathered_x[d]).sum(axis=1)
        z *= self.phi2_vals
        y = []
        for d in range(self.n_modes):
            out = np.empty_like(x_blocks[d])
            for r in range(rank):
                out[:, r] = np.bincount(
                    self.coords[d], weights=z * self.leave_one_out[d][:, r],
                    minlength=self.dims[d])
            out += 2.0 * self.reg * x_blocks[d]
            y.append(out)
        if self.variant == "newton":
            for d in range(self.n_modes):
                for p in range(self.n_modes):
                    if p == d:
                        continue
                    rest = None
                    for q in range(self.n_modes):
                        if q in (d, p):
                            continue
                        g = self.gathered[q]
                        rest = g.copy() if rest is None else rest * g
                    for r in range(rank):
                        w = self.phi1_vals * gathered_x[p][:, r]
                        if rest is not None:
                            w = w * rest[:, r]
                        y[d][:, r] += np.bincount(
                            self.coords[d], weights=w, minlength=self.dims[d])
        return y


class BlockDiagPreconditioner:
    """Inverse of the per-mode diagonal blocks of the second-order model.

    Holds the assembled (G_i + reg I) systems for every mode; application is
    a batched dense solve per mode, the same work as one alternating
    subiteration's solves.
    """

    def __init__(self, phi2: SparseTensor, factors, reg: float,
                 row_batches: int = 1, threads: int = 1, grams=None):
        self.systems = []
        rank = factors[0].shape[1]
        eye = np.eye(rank)
        for d in range(len(factors)):
            if grams is not None:
                gram = grams[d]
            else:
                gram = gram_blocks(phi2, factors, d, row_batches=row_batches,
                                   threads=threads)
            self.systems.append(gram + reg * eye)

    def apply(self, blocks) -> list[np.ndarray]:
        out = []
        for lhs, b in zip(self.systems, blocks):
            try:
                out.append(np.linalg.solve(lhs, b[:, :, None])[:, :, 0])
            except np.linalg.LinAlgError:
                raise NumericalError(
                    "singular block-diagonal preconditioner; "
                    "increase the regularization") from None
        return out


def _block_dot(a, b) -> float:
    return float(sum(np.sum(x * y) for x, y in zip(a, b)))


def pcg_solve(matvec, precond, rhs_blocks, rel_tol: float, max_iters: int):
    """Preconditioned conjugate gradient over lists of factor-shaped blocks.

    Stops when the residual norm falls below ``rel_tol`` times the
    right-hand-side norm, when ``max_iters`` is reached, or when the operator
    reports nonpositive curvature (the current iterate is returned).
    Returns (solution blocks, iterations used).
    """
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must be in (0, 1)")
    x = [np.zeros_like(b) for b in rhs_blocks]
    r = [b.copy() for b in rhs_blocks]
    b_norm = math.sqrt(_block_dot(rhs_blocks, rhs_blocks))
    if b_norm == 0.0:
        return x, 0
    z = precond(r)
    p = [zi.copy() for zi in z]
    rz = _block_dot(r, z)
    for it in range(1, max_iters + 1):
        ap = matvec(p)
        p_ap = _block_dot(p, ap)
        if not math.isfinite(p_ap):
            raise NumericalError("non-finite curvature inside CG")
        if p_ap <= 0.0:
            return x, it - 1
        alpha = rz / p_ap
        for d in range(len(x)):
            x[d] += alpha * p[d]
            r[d] -= alpha * ap[d]
        res = math.sqrt(_block_dot(r, r))
        if not math.isfinite(res):
            raise NumericalError("non-finite residual inside CG")
        if res / b_norm < rel_tol:
            return x, it
        z = precond(r)
        rz_new = _block_dot(r, z)
        beta = rz_new / rz
        rz = rz_new
        for d in range(len(p)):
            p[d] = z[d] + beta * p[d]
    return x, max_iters


def rebalance_factors(factors) -> None:
    """Equalize each component's column norms across modes, in place.

    Rescaling (u_r, v_r, w_r) by factors with unit product leaves the model
    unchanged; balancing to the geometric-mean norm removes the scaling
    indeterminacy. Near a fit, the regularizer's gradient otherwise points
    along these gauge directions, where the second-order operator has
    eigenvalue only 2*reg and a linearized step overshoots badly.
    """
    n_modes = len(factors)
    norms = np.stack([np.linalg.norm(f, axis=0) for f in factors])
    ok = np.all(norms > 0.0, axis=0)
    if not np.any(ok):
        return
    target = np.exp(np.log(norms[:, ok]).mean(axis=0))
    for n in range(n_modes):
        scale = np.ones(norms.shape[1])
        scale[ok] = target / norms[n, ok]
        factors[n] *= scale


def gn_step(t: SparseTensor, state: CompletionState, loss: LossFunction,
            cfg: SolverConfig, variant: str = "gauss_newton") -> int:
    """One second-order update of all factors at once.

    Solves the implicit (approximate) Hessian system for the concatenated
    update blocks with preconditioned CG, applies the update, and rebalances
    the component norms (gauge fixing; the model values are unchanged).
    When ``cfg.gn_damping`` is positive, an extra Tikhonov term (scaled off
    the mean curvature diagonal at the first step, then decaying
    geometrically) stabilizes the early far-from-solution steps and vanishes
    as the iteration enters its quadratic phase. Returns the number of CG
    iterations used.
    """
    mask = t.observation_mask()
    model = model_at_observed(mask, state.factors, threads=cfg.threads)
    phi1, phi2 = derivative_tensors(loss, t, model)
    if np.any(phi2.values < 0.0):
        raise NumericalError(
            "negative second derivatives: second-order step requires a "
            "convex loss")
    grad = [mttkrp(phi1, state.factors, d, threads=cfg.threads)
            + 2.0 * cfg.reg * state.factors[d] for d in range(t.order)]
    grams = [gram_blocks(phi2, state.factors, d, row_batches=cfg.row_batches,
                         threads=cfg.threads) for d in range(t.order)]
    if cfg.gn_damping > 0.0 and state.gn_damping is None:
        diag_mean = float(np.mean([np.mean(np.diagonal(g, axis1=1, axis2=2))
                                   for g in grams]))
        state.gn_damping = cfg.gn_damping * diag_mean
    damping = state.gn_damping or 0.0
    reg_eff = cfg.reg + damping
    precond = BlockDiagPreconditioner(phi2, state.factors, 2.0 * reg_eff,
                                      grams=grams)
    matvec = _SecondOrderOperator(phi1, phi2, state.factors, variant=variant,
                                  reg=reg_eff)
    delta, used = pcg_solve(matvec, precond.apply, [-g for g in grad],
                            cfg.cg_tol, cfg.cg_max_iters())
    for d in range(t.order):
        state.factors[d] = state.factors[d] + delta[d]
    rebalance_factors(state.factors)
    if state.gn_damping is not None:
        state.gn_damping *= cfg.gn_damping_decay
    return used


# ---------------------------------------------------------------------------
# orchestration

def run(t: SparseTensor, cfg: SolverConfig, return_state: bool = False):
    """Run the configured solver and collect a convergence trace.

    Records (iteration, elapsed seconds, objective, metric) at iteration 0
    and then every ``record_every`` outer iterations (default 20 for SGD,
    1 otherwise). Stops at ``max_iters`` or when the relative objective
    change between consecutive records falls below ``tol``. Under
    ``deterministic``, elapsed times are recorded as 0.0 so traces are
    byte-stable across runs and thread counts.
    """
    loss = get_loss(cfg.loss)
    loss.validate_data(t.values)
    root = RngState(cfg.seed)
    state = init_state(t, cfg, root.child(0))
    sgd_rng = root.child(1)
    record_every = cfg.record_every
    if record_every is None:
        record_every = 20 if cfg.algorithm == "sgd" else 1

    trace = RunTrace(
        metric_name="rmse" if loss.ident == "ls" else "norm_loss",
        metadata={
            "algorithm": cfg.algorithm,
            "loss": cfg.loss,
            "rank": str(cfg.rank),
            "reg": repr(cfg.reg),
            "seed": str(cfg.seed),
            "shape": "x".join(str(d) for d in t.shape),
            "nnz": str(t.nnz),
        },
    )
    mask = t.observation_mask()
    start = time.perf_counter()

    if cfg.algorithm in ("gn", "newton") and cfg.warmup_sweeps:
        for _ in range(cfg.warmup_sweeps):
            als_sweep(t, state, loss, cfg)

    def evaluate():
        model = model_at_observed(mask, state.factors, threads=cfg.threads)
        data_term = float(np.sum(loss.phi(t.values, model.values)))
        obj = data_term + cfg.reg * sum(float(np.sum(f * f))
                                        for f in state.factors)
        if loss.ident == "ls":
            diff = t.values - model.values
            metric = float(np.sqrt(np.dot(diff, diff) / max(t.nnz, 1)))
        else:
            metric = data_term / max(t.nnz, 1)
        return obj, metric

    def elapsed():
        return 0.0 if cfg.deterministic else time.perf_counter() - start

    obj, metric = evaluate()
    trace.append(0, elapsed(), obj, metric)
    initial_obj = obj
    prev_obj = obj

    for it in range(1, cfg.max_iters + 1):
        if cfg.algorithm == "als":
            als_sweep(t, state, loss, cfg)
        elif cfg.algorithm == "ccd":
            ccd_sweep(t, state, loss, cfg)
        elif cfg.algorithm == "sgd":
            sgd_sweep(t, state, loss, cfg, sgd_rng.child(it))
        elif cfg.algorithm == "gn":
            gn_step(t, state, loss, cfg, variant="gauss_newton")
        else:
            gn_step(t, state, loss, cfg, variant="newton")
        state.iteration = it
        for d, f in enumerate(state.factors):
            if not np.isfinite(np.sum(f)):
                raise NumericalError(
                    f"factor {d} became non-finite at iteration {it}; "
                    "reduce the step size or increase reg")
        if it % record_every == 0 or it == cfg.max_iters:
            obj, metric = evaluate()
            trace.append(it, elapsed(), obj, metric)
            if not math.isfinite(obj) or obj > 1e3 * max(abs(initial_obj), 1.0):
                raise NumericalError(
                    f"objective diverged at iteration {it}: {obj!r} from "
                    f"{initial_obj!r}; reduce the step size or increase reg")
            if abs(prev_obj - obj) / max(abs(prev_obj), _TINY) < cfg.tol:
                break
            prev_obj = obj
    if return_state:
        return trace, state
    return trace

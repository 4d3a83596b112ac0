"""Scikit-learn style estimator wrapping the completion solvers.

The estimator treats completion as regression over integer coordinates:
``X`` is an (n_entries, n_modes) coordinate array and ``y`` the observed
values, so it composes with the usual scikit-learn tooling (``clone``,
``get_params``, pipelines over the coordinate features). A prebuilt
:class:`~cpfit.core.SparseTensor` is accepted directly in place of (X, y).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .core import SparseTensor, from_coords, model_values
from .optim import SolverConfig, run


class CPCompletion(BaseEstimator):
    """Low-rank CP completion of a sparsely observed tensor.

    Parameters mirror :class:`~cpfit.optim.SolverConfig`. After ``fit`` the
    learned factor matrices are in ``factors_`` and the convergence trace in
    ``trace_``.

    Examples
    --------
    >>> import numpy as np
    >>> from cpfit import CPCompletion
    >>> coords = np.array([[0, 0, 0], [1, 1, 1], [0, 1, 1], [1, 0, 1]])
    >>> values = np.array([1.0, 2.0, 0.5, 0.25])
    >>> model = CPCompletion(rank=2, max_iters=5, seed=3).fit(coords, values)
    >>> model.predict(coords).shape
    (4,)
    """

    def __init__(self, rank=10, algorithm="als", loss="ls", reg=1e-5,
                 max_iters=20, tol=1e-6, inner_max=5, inner_tol=1e-3,
                 cg_tol=5e-3, cg_max=None, step=5e-3, sample_rate=1.0,
                 init="uniform", shape=None, seed=0, deterministic=False,
                 threads=1):
        self.rank = rank
        self.algorithm = algorithm
        self.loss = loss
        self.reg = reg
        self.max_iters = max_iters
        self.tol = tol
        self.inner_max = inner_max
        self.inner_tol = inner_tol
        self.cg_tol = cg_tol
        self.cg_max = cg_max
        self.step = step
        self.sample_rate = sample_rate
        self.init = init
        self.shape = shape
        self.seed = seed
        self.deterministic = deterministic
        self.threads = threads

    def _config(self) -> SolverConfig:
        return SolverConfig(
            rank=self.rank, algorithm=self.algorithm, loss=self.loss,
            reg=self.reg, max_iters=self.max_iters, tol=self.tol,
            inner_max=self.inner_max, inner_tol=self.inner_tol,
            cg_tol=self.cg_tol, cg_max=self.cg_max, step=self.step,
            sample_rate=self.sample_rate, init=self.init, seed=self.seed,
            deterministic=self.deterministic, threads=self.threads,
        )

    def _coords_columns(self, X):
        X = check_array(X, dtype=np.int64, ensure_2d=True)
        if X.shape[1] != len(self.shape_):
            raise ValueError(
                f"X has {X.shape[1]} coordinate columns, expected "
                f"{len(self.shape_)}")
        for n, d in enumerate(self.shape_):
            if X[:, n].size and (X[:, n].min() < 0 or X[:, n].max() >= d):
                raise ValueError(f"coordinate out of range in mode {n}")
        return tuple(X[:, n] for n in range(X.shape[1]))

    def fit(self, X, y=None):
        """Fit factor matrices to observed entries.

        ``X`` is either a SparseTensor (``y`` ignored) or an integer
        coordinate array of shape (n_entries, n_modes) with values in ``y``.
        When coordinates are given, the tensor shape is ``self.shape`` if
        set, else the per-mode coordinate maxima plus one.
        """
        if isinstance(X, SparseTensor):
            t = X
        else:
            X = check_array(X, dtype=np.int64, ensure_2d=True)
            if y is None:
                raise ValueError("y (observed values) is required when X is "
                                 "a coordinate array")
            y = check_array(y, dtype=np.float64, ensure_2d=False)
            if y.ndim != 1 or y.shape[0] != X.shape[0]:
                raise ValueError("y must be 1-D with one value per row of X")
            if self.shape is not None:
                dims = tuple(int(d) for d in self.shape)
            else:
                dims = tuple(int(X[:, n].max()) + 1 for n in range(X.shape[1]))
            t = from_coords(tuple(X[:, n] for n in range(X.shape[1])), y, dims)
        cfg = self._config()
        self.trace_, state = run(t, cfg, return_state=True)
        self.factors_ = state.factors
        self.shape_ = t.shape
        self.n_iter_ = state.iteration
        self.objective_ = self.trace_.records[-1].objective
        return self

    def predict(self, X) -> np.ndarray:
        """Model values (multilinear factor-row products) at coordinates X."""
        check_is_fitted(self, "factors_")
        return model_values(self.factors_, self._coords_columns(X))

    def score(self, X, y) -> float:
        """Negative root-mean-square error at the given entries."""
        check_is_fitted(self, "factors_")
        y = np.asarray(y, dtype=np.float64)
        pred = self.predict(X)
        return -float(np.sqrt(np.mean((y - pred) ** 2)))

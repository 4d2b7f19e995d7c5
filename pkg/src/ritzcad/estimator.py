"""scikit-learn style wrapper around problem construction and training."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .optimizer import train


class VariationalSolver(RegressorMixin, BaseEstimator):
    """Train a neural PDE solution on one of the built-in problems.

    ``fit`` ignores ``X`` and ``y``: the training data are the quadrature
    samples of the problem itself. ``predict`` maps physical points of shape
    ``(n, 2)`` to the potential, using the network of the patch that
    contains each point. Points outside the domain give ``nan``.

    Parameters
    ----------
    problem : {"cylinder", "pmsm", "imported"}
    preset : {"single", "dg", "coupling"}
    desk_scale : bool
        Use the reduced budgets and schedule.
    schedule : list of (epochs, learning_rate) or None
        Overrides the problem's default schedule.
    seed : int
        Seed for the network initialisation.
    problem_kwargs : dict or None
        Extra keyword arguments for the problem builder.
    """

    def __init__(self, problem="cylinder", preset="dg", desk_scale=True, schedule=None,
                 seed=0, problem_kwargs=None):
        self.problem = problem
        self.preset = preset
        self.desk_scale = desk_scale
        self.schedule = schedule
        self.seed = seed
        self.problem_kwargs = problem_kwargs

    def _build(self):
        from .problems import build_cylinder, build_imported, build_pmsm

        kw = dict(self.problem_kwargs or {})
        if self.schedule is not None:
            kw["schedule"] = [(int(e), float(lr)) for e, lr in self.schedule]
        if self.problem == "cylinder":
            return build_cylinder(self.preset, desk_scale=self.desk_scale, **kw)
        if self.problem == "pmsm":
            return build_pmsm(self.preset, desk_scale=self.desk_scale, **kw)
        if self.problem == "imported":
            return build_imported(preset=self.preset, **kw)
        raise ValueError(f"unknown problem {self.problem!r}")

    def fit(self, X=None, y=None):
        self.problem_ = self._build()
        res = train(self.problem_.spec, self.problem_.plan, self.problem_.schedule, seed=self.seed)
        self.params_ = res.params
        self.history_ = res.history
        self.term_names_ = res.term_names
        self.diverged_ = res.diverged
        self.n_features_in_ = 2
        return self

    def predict(self, X, return_gradient=False):
        from .problems import evaluate_field

        check_is_fitted(self, "params_")
        X = check_array(X, dtype=float)
        if X.shape[1] != 2:
            raise ValueError(f"expected points of shape (n, 2), got {X.shape}")
        idx, _ = self.problem_.domain.locate(X)
        u, ux, uy = evaluate_field(self.problem_, self.params_, X, idx)
        if return_gradient:
            return u, np.column_stack([ux, uy])
        return u

    def score(self, X=None, y=None, sample_weight=None):
        """Negative relative L2 error against the reference solution on fresh samples.

        With explicit ``X`` and ``y`` this falls back to the usual R^2.
        """
        if X is not None and y is not None:
            return super().score(X, y, sample_weight)
        from .problems import solution_metrics

        check_is_fitted(self, "params_")
        return -solution_metrics(self.problem_, self.params_)["rel_l2"]

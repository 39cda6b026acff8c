"""Benchmark regressors: ordinary least squares and linear epsilon-SVR.

Both can either ignore censored samples or weight them into the fit by
lambda, treating the censoring label as a plain regression target (the
conventional way unbalanced samples are folded into these models).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cohort import DesignSet
from .errors import DataError


@dataclass
class BaselineParams:
    w_vec: np.ndarray
    b: float
    kind: str  # "ols" or "svr"
    hyperparams: dict


@dataclass
class SvrOptions:
    tol: float = 1e-8
    max_iter: int = 5000
    eta0: float | None = None
    patience: int = 50
    seed: int | None = None  # reserved; the fit is deterministic


def _augmented(design: DesignSet, lambda_: float, censored_mode: str):
    if censored_mode not in ("ignore", "weighted"):
        raise ValueError(f"unknown censored_mode {censored_mode!r}")
    if design.n_complete == 0:
        raise DataError("baseline fits require at least one complete sample")
    Z = np.vstack([design.X_complete, np.ones((1, design.n_complete))])
    y = design.y_complete
    if censored_mode == "weighted" and design.n_censored:
        Zc = np.vstack([design.X_censored, np.ones((1, design.n_censored))])
        yc = design.y_censored
    else:
        Zc = np.zeros((Z.shape[0], 0))
        yc = np.zeros(0)
    return Z, y, Zc, yc


def ols_fit(design: DesignSet, lambda_: float = 0.0, censored_mode: str = "weighted") -> BaselineParams:
    """Least squares on complete samples, optionally lambda-weighting censored ones.

    Solved by ridge-stabilized normal equations; the ridge is the same tiny
    trace-scaled floor the preconditioner uses, so exactly fittable data is
    interpolated to machine precision.
    """
    Z, y, Zc, yc = _augmented(design, lambda_, censored_mode)
    H = Z @ Z.T + lambda_ * (Zc @ Zc.T)
    rhs = Z @ y + lambda_ * (Zc @ yc)
    eps = 1e-8 * float(np.trace(H)) / H.shape[0]
    mu, V = np.linalg.eigh(H)
    # floor small curvature at eps and drop the numerical null space so a
    # consistent system is interpolated exactly (min-norm solution there)
    inv = np.where(mu > 1e-12 * mu[-1], 1.0 / np.maximum(mu, eps), 0.0)
    theta = (V * inv) @ V.T @ rhs
    return BaselineParams(
        w_vec=theta[:-1],
        b=float(theta[-1]),
        kind="ols",
        hyperparams={"lambda": lambda_, "censored_mode": censored_mode, "ridge": eps},
    )


def _svr_objective(theta, Z, y, Zc, yc, C, eps_tube, lambda_):
    w = theta[:-1]
    obj = 0.5 * float(w @ w)
    res = Z.T @ theta - y
    obj += C * float(np.maximum(0.0, np.abs(res) - eps_tube).sum())
    if yc.size:
        res_c = Zc.T @ theta - yc
        obj += C * lambda_ * float(np.maximum(0.0, np.abs(res_c) - eps_tube).sum())
    return obj


def _svr_subgradient(theta, Z, y, Zc, yc, C, eps_tube, lambda_):
    w_part = np.concatenate([theta[:-1], [0.0]])
    res = Z.T @ theta - y
    outside = np.abs(res) > eps_tube
    g = w_part + C * (Z[:, outside] @ np.sign(res[outside]))
    if yc.size:
        res_c = Zc.T @ theta - yc
        outside_c = np.abs(res_c) > eps_tube
        g = g + C * lambda_ * (Zc[:, outside_c] @ np.sign(res_c[outside_c]))
    return g


def svr_fit(design: DesignSet, C: float = 1.0, epsilon_tube: float = 0.1,
            lambda_: float = 0.0, censored_mode: str = "weighted",
            options: SvrOptions | None = None, trace_out: list | None = None) -> BaselineParams:
    """Linear epsilon-insensitive SVR by deterministic subgradient descent.

    Minimizes 1/2 ||w||^2 + C * sum max(0, |z'theta - y| - eps) over the
    complete samples, plus the lambda-weighted censored terms in weighted
    mode. Steps are normalized subgradients at a constant length that is
    halved (restarting from the best iterate) whenever `patience` steps
    pass without a relative improvement of tol, so the kept objective
    decays geometrically. Stops at max_iter or once the step has shrunk
    below 1e-12 of its starting value. The best iterate is returned and
    `trace_out`, if given, records its objective per step (non-increasing).
    """
    if C <= 0:
        raise ValueError("C must be positive")
    if epsilon_tube < 0:
        raise ValueError("epsilon_tube must be nonnegative")
    opts = options or SvrOptions()
    Z, y, Zc, yc = _augmented(design, lambda_, censored_mode)
    d = Z.shape[0]

    theta = np.zeros(d)
    theta[-1] = float(y.mean())
    eta0 = opts.eta0 if opts.eta0 is not None else max(1.0, float(np.std(y)))
    eta = eta0

    best = theta.copy()
    best_obj = _svr_objective(theta, Z, y, Zc, yc, C, epsilon_tube, lambda_)
    stall = 0
    for _ in range(opts.max_iter):
        g = _svr_subgradient(theta, Z, y, Zc, yc, C, epsilon_tube, lambda_)
        norm = np.linalg.norm(g)
        if norm == 0.0:
            break
        theta = theta - eta * (g / norm)
        obj = _svr_objective(theta, Z, y, Zc, yc, C, epsilon_tube, lambda_)
        if obj < best_obj - opts.tol * max(abs(best_obj), 1.0):
            best_obj = obj
            best = theta.copy()
            stall = 0
        else:
            stall += 1
            if stall >= opts.patience:
                eta *= 0.5
                theta = best.copy()
                stall = 0
                if eta < 1e-12 * eta0:
                    break
        if trace_out is not None:
            trace_out.append(best_obj)
    return BaselineParams(
        w_vec=best[:-1],
        b=float(best[-1]),
        kind="svr",
        hyperparams={"C": C, "epsilon_tube": epsilon_tube, "lambda": lambda_, "censored_mode": censored_mode},
    )

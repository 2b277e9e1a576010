"""Alternating point/target optimization, as executable mathematics.

The shared objective is J(u, x, t) = 1/2 sum_ij u_ij^2 ||x_i - t_j||^2.
Mode A fixes the targets: memberships are binary with exactly k ones per
target column (each target claims its k nearest points), and points move
by a convex gradient step toward their claimed targets. Mode B fixes the
points: memberships are row-stochastic with the closed-form
inverse-squared-distance optimum, and each target becomes the
membership^2-weighted mean of the points.

The two membership constraint sets are incompatible, so the modes are
never mixed within one iteration.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ParameterError


@dataclass
class ClusterProblem:
    points: np.ndarray  # (m, dim)
    targets: np.ndarray  # (n, dim)
    alpha: float = 0.5
    k: int = 1
    mode: str = "A"  # "A" = move points, "B" = fuzzy memberships + targets
    memberships: np.ndarray | None = None  # optional initial u

    def validate(self) -> "ClusterProblem":
        if self.points.ndim != 2 or self.targets.ndim != 2:
            raise ConfigError("points and targets must be 2-D")
        if self.points.shape[1] != self.targets.shape[1]:
            raise ConfigError("points and targets must share a dimension")
        if self.mode not in ("A", "B"):
            raise ConfigError("mode must be 'A' or 'B'")
        if self.mode == "A":
            if not 0.0 < self.alpha < 1.0:
                raise ParameterError("alpha must lie in (0, 1)")
            if not 1 <= self.k <= self.points.shape[0]:
                raise ConfigError("need 1 <= k <= number of points")
        return self


def sq_distances(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - t[None, :, :]
    return np.einsum("ijd,ijd->ij", diff, diff)


def objective(x: np.ndarray, t: np.ndarray, u: np.ndarray) -> float:
    """1/2 sum_ij u_ij^2 ||x_i - t_j||^2."""
    return 0.5 * float(np.sum(u * u * sq_distances(x, t)))


def assign_topk(x: np.ndarray, t: np.ndarray, k: int) -> np.ndarray:
    """Binary memberships: per target, 1 on its k nearest points
    (Euclidean, ties toward the smaller index)."""
    m = x.shape[0]
    if k > m:
        raise ConfigError(f"k={k} exceeds {m} points")
    d2 = sq_distances(x, t)
    u = np.zeros_like(d2)
    for j in range(t.shape[0]):
        nearest = np.argsort(d2[:, j], kind="stable")[:k]
        u[nearest, j] = 1.0
    return u


def step_x(x: np.ndarray, t: np.ndarray, u: np.ndarray, alpha: float) -> np.ndarray:
    """Batch gradient step: x_i <- (1 - alpha*sum_j u_ij^2) x_i
    + alpha * sum_j u_ij^2 t_j."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    u2 = u * u
    pull = u2.sum(axis=1, keepdims=True)
    return (1.0 - alpha * pull) * x + alpha * (u2 @ t)


def step_x_online(x: np.ndarray, t: np.ndarray, u: np.ndarray, alpha: float,
                  target_index: int) -> np.ndarray:
    """Single-target update x_i <- (1 - alpha*u_ij^2) x_i + alpha*u_ij^2 t_j."""
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must lie in (0, 1)")
    u2 = u[:, target_index:target_index + 1] ** 2
    return (1.0 - alpha * u2) * x + alpha * u2 * t[target_index]


def fuzzy_memberships(x: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Row-stochastic optimum u_ij = (1/d_ij^2) / sum_k (1/d_ik^2).

    A point coinciding with one or more targets takes membership 1 on
    the first coincident target (the standard fuzzy-c-means limit).
    """
    d2 = sq_distances(x, t)
    u = np.zeros_like(d2)
    singular = d2 <= 0.0
    for i in range(x.shape[0]):
        if singular[i].any():
            u[i, int(np.argmax(singular[i]))] = 1.0
        else:
            inv = 1.0 / d2[i]
            u[i] = inv / inv.sum()
    return u


def fuzzy_update(x: np.ndarray, t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One fuzzy iteration: closed-form memberships for the current targets,
    then each target re-centered at the u^2-weighted mean of the points."""
    u = fuzzy_memberships(x, t)
    u2 = u * u
    weight = u2.sum(axis=0)
    new_t = t.copy()
    nonzero = weight > 0
    new_t[nonzero] = (u2.T[nonzero] @ x) / weight[nonzero, None]
    return u, new_t


def alternate(problem: ClusterProblem, iters: int) -> tuple[np.ndarray, dict]:
    """Run `iters` alternating iterations; returns the objective trace
    (length iters+1, starting value included) and the final state."""
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    problem.validate()
    x = problem.points.copy()
    t = problem.targets.copy()
    if problem.mode == "A":
        u = problem.memberships if problem.memberships is not None \
            else assign_topk(x, t, problem.k)
        trace = [objective(x, t, u)]
        for _ in range(iters):
            x = step_x(x, t, u, problem.alpha)
            u = assign_topk(x, t, problem.k)
            trace.append(objective(x, t, u))
    else:
        u = problem.memberships if problem.memberships is not None \
            else fuzzy_memberships(x, t)
        trace = [objective(x, t, u)]
        for _ in range(iters):
            u, t = fuzzy_update(x, t)
            trace.append(objective(x, t, u))
    return np.array(trace), {"points": x, "targets": t, "memberships": u}

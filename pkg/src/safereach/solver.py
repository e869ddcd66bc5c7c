"""Trajectory generation for selected fields, forward and backward.

The workhorse is a fixed-step RK4 that integrates whole batches of initial
conditions at once (states shaped (m, n)); batching is what keeps the
reachability and barrier sweeps fast.  An adaptive RKF45 is available for
stiff spots such as the fast angular oscillation of the built-in
counterexample near the origin.

Escape through the configured radius is reported as a termination reason,
never silently truncated: finite-escape behavior is part of the "pre"
invariance semantics.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import InclusionSpec, Selector, negate, select
from .geometry import SetSpec, distance_to_set_many


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class IntegratorConfig:
    method: str = "rk4"            # rk4 | rk45
    step: float = 1.0 / 512.0
    rel_tol: float = 1e-8
    abs_tol: float = 1e-10
    escape_radius: float = 1e6
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.step <= 0 or self.rel_tol <= 0 or self.abs_tol <= 0:
            raise SolverError("step and tolerances must be positive")
        if self.escape_radius <= 0:
            raise SolverError("escape radius must be positive")
        if self.method not in ("rk4", "rk45"):
            raise SolverError(f"unknown method {self.method}")

    @property
    def accuracy(self) -> float:
        """Coarse global-error scale: one order below the local truncation
        order, to absorb growth constants."""
        if self.method == "rk4":
            return self.step ** 3
        return max(self.rel_tol, 10.0 * self.abs_tol)


@dataclass
class Trajectory:
    """Time-stamped states; backward runs store psi(t) = phi(-t) with t >= 0."""

    times: np.ndarray
    states: np.ndarray
    termination: str = "horizon"    # horizon | escape | set_hit:<name> | step_limit
    direction: str = "forward"
    selector_index: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if len(self.times) != len(self.states):
            raise SolverError("times and states length mismatch")
        if np.any(np.diff(self.times) <= 0):
            raise SolverError("times must be strictly increasing")

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        n = self.states.shape[1]
        header = "t," + ",".join(f"x{i + 1}" for i in range(n))
        data = np.column_stack([self.times, self.states])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def _rk4_batch(fn: Callable, X0: np.ndarray, h: float, n_steps: int,
               escape_radius: float, record: bool = True):
    """Fixed-step RK4 on a batch (m, n); rows run independently.

    Returns (states, alive_steps) where states has shape (n_steps+1, m, n) if
    record else only the final slice, and alive_steps[i] is the number of
    steps row i completed before escaping (== n_steps when it never escaped).
    Escaped rows are frozen at their last finite state.
    """
    X = np.array(X0, dtype=float)
    m = X.shape[0]
    alive_steps = np.full(m, n_steps, dtype=int)
    alive = np.ones(m, dtype=bool)
    out = np.empty((n_steps + 1,) + X.shape) if record else None
    if record:
        out[0] = X
    for k in range(n_steps):
        if not alive.any():
            if record:
                out[k + 1:] = X
            break
        # step only live rows: frozen (escaped) states may sit where the
        # field overflows, and they must not abort the batch
        idx = np.nonzero(alive)[0] if not alive.all() else slice(None)
        Xs = X[idx]
        k1 = fn(Xs)
        k2 = fn(Xs + 0.5 * h * k1)
        k3 = fn(Xs + 0.5 * h * k2)
        k4 = fn(Xs + h * k3)
        Xn_sub = Xs + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        bad = ~np.all(np.isfinite(Xn_sub), axis=1)
        if bad.any():
            raise SolverError(
                f"non-finite state at step {k + 1}; last valid state "
                f"{Xs[bad][0].tolist()}")
        Xn = X.copy()
        Xn[idx] = Xn_sub
        escaped = alive & (np.linalg.norm(Xn, axis=1) > escape_radius)
        if escaped.any():
            alive_steps[escaped] = k + 1
            alive = alive & ~escaped
        X = Xn
        if record:
            out[k + 1] = X
    if record:
        return out, alive_steps
    return X, alive_steps


def _rkf45_path(fn: Callable, x0: np.ndarray, T: float, cfg: IntegratorConfig,
                step_ceiling: Optional[Callable] = None):
    """Adaptive Runge-Kutta-Fehlberg 4(5), scalar initial condition."""
    A = [
        [],
        [1 / 4],
        [3 / 32, 9 / 32],
        [1932 / 2197, -7200 / 2197, 7296 / 2197],
        [439 / 216, -8, 3680 / 513, -845 / 4104],
        [-8 / 27, 2, -3544 / 2565, 1859 / 4104, -11 / 40],
    ]
    B5 = [16 / 135, 0, 6656 / 12825, 28561 / 56430, -9 / 50, 2 / 55]
    B4 = [25 / 216, 0, 1408 / 2565, 2197 / 4104, -1 / 5, 0]
    t, x = 0.0, np.array(x0, dtype=float)
    times, states = [0.0], [x.copy()]
    h = min(cfg.step, T)
    termination = "horizon"
    for _ in range(cfg.max_steps):
        if t >= T - 1e-15:
            break
        h = min(h, T - t)
        if step_ceiling is not None:
            h = min(h, float(step_ceiling(x)))
        ks = []
        for stage in range(6):
            xp = x.copy()
            for j, a in enumerate(A[stage]):
                xp = xp + h * a * ks[j]
            ks.append(fn(xp[None, :])[0])
        x5 = x + h * sum(b * k for b, k in zip(B5, ks))
        x4 = x + h * sum(b * k for b, k in zip(B4, ks))
        err = float(np.linalg.norm(x5 - x4))
        scale = cfg.abs_tol + cfg.rel_tol * float(np.linalg.norm(x5))
        if err <= scale or h <= 1e-13:
            t += h
            x = x5
            times.append(t)
            states.append(x.copy())
            if float(np.linalg.norm(x)) > cfg.escape_radius:
                termination = "escape"
                break
        ratio = (scale / err) ** 0.2 if err > 0 else 2.0
        h = max(min(h * min(max(0.2, 0.9 * ratio), 4.0), T), 1e-13)
    else:
        termination = "step_limit"
    return np.asarray(times), np.asarray(states), termination


def _selector_segments(s: Selector, T: float):
    if s.kind == "constant":
        return [(0.0, T)]
    cuts = [0.0] + [float(c) for c in s.switch_times if 0.0 < c < T] + [T]
    return [(cuts[i], cuts[i + 1]) for i in range(len(cuts) - 1)]


def integrate(F: InclusionSpec, s: Selector, x0, T: float,
              direction: str = "forward", cfg: IntegratorConfig = IntegratorConfig(),
              stop_set: Optional[SetSpec] = None, stop_tol: float = 1e-9) -> Trajectory:
    """Integrate dx/dt = select(F, x, s, t) (negated for backward) over [0, T]."""
    if T <= 0:
        raise SolverError("horizon must be positive")
    x0 = np.asarray(x0, dtype=float)
    if not np.all(np.isfinite(x0)):
        raise SolverError("non-finite initial state")
    Feff = negate(F) if direction == "backward" else F
    if cfg.method == "rk45":
        if s.kind != "constant":
            raise SolverError("rk45 supports constant selectors only")
        fn = lambda X: _batched_select(Feff, X, s, 0.0)
        times, states, term = _rkf45_path(fn, x0, T, cfg,
                                          step_ceiling=Feff.base_field.step_ceiling)
        traj = Trajectory(times, states, term, direction, s.index)
        return _truncate_at_set(traj, stop_set, stop_tol)
    times_all = [np.array([0.0])]
    states_all = None
    x = x0[None, :]
    termination = "horizon"
    total_steps = 0
    for (t_a, t_b) in _selector_segments(s, T):
        seg = t_b - t_a
        n_steps = max(1, int(np.ceil(seg / cfg.step - 1e-9)))
        h = seg / n_steps
        total_steps += n_steps
        if total_steps > cfg.max_steps:
            termination = "step_limit"
            break
        fn = lambda X: _batched_select(Feff, X, s, 0.5 * (t_a + t_b))
        path, alive = _rk4_batch(fn, x, h, n_steps, cfg.escape_radius)
        n_ok = int(alive[0])
        seg_states = path[1:n_ok + 1, 0, :]
        times_all.append(t_a + h * np.arange(1, n_ok + 1))
        states_all = seg_states if states_all is None else np.vstack([states_all, seg_states])
        x = path[n_ok, :, :]
        if n_ok < n_steps:
            termination = "escape"
            break
    times = np.concatenate(times_all)
    states = np.vstack([x0[None, :]] + ([states_all] if states_all is not None else []))
    traj = Trajectory(times[:len(states)], states, termination, direction, s.index)
    return _truncate_at_set(traj, stop_set, stop_tol)


def _truncate_at_set(traj: Trajectory, stop_set: Optional[SetSpec], tol: float) -> Trajectory:
    if stop_set is None:
        return traj
    d = distance_to_set_many(traj.states, stop_set)
    hits = np.nonzero(d <= tol)[0]
    if len(hits) == 0:
        return traj
    k = int(hits[0])
    return Trajectory(traj.times[:k + 1], traj.states[:k + 1],
                      f"set_hit:{stop_set.name or stop_set.kind}",
                      traj.direction, traj.selector_index)


def _batched_select(F: InclusionSpec, X: np.ndarray, s: Selector, t: float) -> np.ndarray:
    d = s.direction_at(t)
    if F.kind == "singleton":
        return F.fields[0](X)
    if F.kind == "ball":
        return F.fields[0](X) + F.epsilon * d
    vals = np.stack([f(X) for f in F.fields], axis=-1)
    return vals @ d


def bundle_selectors(F: InclusionSpec, m: int = 8, switches: int = 0,
                     T: float = 1.0, seed: int = 0) -> list[Selector]:
    """Deterministic selector family: m constant selections plus optional
    piecewise-constant ones on a uniform switch grid."""
    from . import sampling

    if m < 1:
        raise SolverError("need at least one selector")
    if F.kind == "singleton":
        return [Selector.constant(index=0)]
    if F.kind == "ball":
        dirs = sampling.sphere_directions(F.dim, m, seed=seed)
    else:
        dirs = sampling.simplex_weights(len(F.fields), m, seed=seed)
    sels = [Selector.constant(dirs[i], index=i) for i in range(m)]
    if switches > 0:
        st = np.linspace(0.0, T, switches + 2)[1:-1]
        for j in range(m):
            picks = [(j + 2 * k + 1) % m for k in range(switches + 1)]
            sels.append(Selector.piecewise(st, dirs[picks], index=m + j))
    return sels


def solution_bundle(F: InclusionSpec, x0, T: float, direction: str = "forward",
                    cfg: IntegratorConfig = IntegratorConfig(),
                    m: int = 8, switches: int = 0, seed: int = 0,
                    stop_set: Optional[SetSpec] = None,
                    jobs: int = 1) -> list[Trajectory]:
    """One trajectory per selector; a singleton F yields exactly one."""
    sels = bundle_selectors(F, m=m, switches=switches, T=T, seed=seed)
    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as ex:
            futs = [ex.submit(integrate, F, s, x0, T, direction, cfg, stop_set)
                    for s in sels]
            return [f.result() for f in futs]
    return [integrate(F, s, x0, T, direction, cfg, stop_set) for s in sels]


def time_rescale_tau(traj: Trajectory, V: Callable) -> np.ndarray:
    """tau(t_i) = t_i + integral_0^{t_i} ds / V(phi(s)) by trapezoid rule.

    Fails if V is nonpositive anywhere along the stored path.
    """
    vals = np.asarray(V(traj.states), dtype=float)
    if np.any(vals <= 0.0):
        raise SolverError("rescale through zero set")
    inv = 1.0 / vals
    dt = np.diff(traj.times)
    inc = 0.5 * (inv[1:] + inv[:-1]) * dt
    return traj.times + np.concatenate([[0.0], np.cumsum(inc)])

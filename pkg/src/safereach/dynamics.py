"""Set-valued right-hand sides, selections, and the built-in example systems.

An :class:`InclusionSpec` is a singleton field, a ball-perturbed field
f(x) + eps*B, or the convex hull of finitely many fields.  Solutions of the
inclusion are generated through :class:`Selector` objects picking a concrete
velocity out of F(x) at every time.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from . import sampling
from .expr import compile_expression
from .geometry import SetSpec, hausdorff_distance


class DynamicsError(ValueError):
    pass


@dataclass(frozen=True)
class FieldHandle:
    """Evaluable vector field, vectorized over leading axes of x."""

    fn: Callable
    dim: int
    name: str = "field"
    step_ceiling: Optional[Callable] = None  # adaptive-step cap near stiff regions

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.asarray(self.fn(x), dtype=float)
        if out.shape != x.shape:
            raise DynamicsError(f"field '{self.name}' returned shape {out.shape} for input {x.shape}")
        if not np.all(np.isfinite(out)):
            raise DynamicsError(f"field '{self.name}' returned non-finite values")
        return out

    def negated(self) -> "FieldHandle":
        inner = self.fn
        return replace(self, fn=lambda x: -np.asarray(inner(x), dtype=float),
                       name=f"-{self.name}")


def field_from_expressions(exprs: Sequence[str], name: str = "user") -> FieldHandle:
    """Build a field from one arithmetic expression per component over x1..xn."""
    n = len(exprs)
    variables = tuple(f"x{i + 1}" for i in range(n))
    comps = [compile_expression(e, variables) for e in exprs]

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.stack([c(x) for c in comps], axis=-1)

    return FieldHandle(fn, n, name=name)


# ---------------------------------------------------------------------------
# built-in systems
# ---------------------------------------------------------------------------

LINEAR_SAFE_A = np.array([[-1.0, -10.0], [1.0, 0.0]])
_ORIGIN_GUARD = 1e-12


def _counterexample2d(x):
    # planar system with limit cycles at every radius 1/(k*pi); the radial
    # rate is (r^2/2) sin^2(1/r) and the angular rate is 1
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1, keepdims=True)
    safe_r = np.where(r < _ORIGIN_GUARD, 1.0, r)
    s = np.sin(1.0 / safe_r) ** 2
    x1 = x[..., 0:1]
    x2 = x[..., 1:2]
    out = np.concatenate([-x2 + 0.5 * r * x1 * s, x1 + 0.5 * r * x2 * s], axis=-1)
    return np.where(r < _ORIGIN_GUARD, 0.0, out)


def _counterexample_radial(x):
    x = np.asarray(x, dtype=float)
    r = x[..., 0:1]
    safe_r = np.where(np.abs(r) < _ORIGIN_GUARD, 1.0, r)
    out = 0.5 * r**2 * np.sin(1.0 / safe_r) ** 2
    return np.where(np.abs(r) < _ORIGIN_GUARD, 0.0, out)


def _linear_safe(x):
    x = np.asarray(x, dtype=float)
    return x @ LINEAR_SAFE_A.T


def _counterexample_step_ceiling(x):
    # clamp adaptive steps where sin^2(1/r) oscillates fast
    r = float(np.linalg.norm(x))
    if r < 0.1:
        return max(r * r / 10.0, 1e-8)
    return np.inf


_BUILTINS = {
    "counterexample2d": lambda: FieldHandle(_counterexample2d, 2, "counterexample2d",
                                            step_ceiling=_counterexample_step_ceiling),
    "counterexample_radial": lambda: FieldHandle(_counterexample_radial, 1,
                                                 "counterexample_radial"),
    "linear_safe": lambda: FieldHandle(_linear_safe, 2, "linear_safe"),
}


def builtin_field(name: str) -> FieldHandle:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise DynamicsError(f"unknown builtin field '{name}'") from None


# ---------------------------------------------------------------------------
# inclusions and selections
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InclusionSpec:
    """Right-hand side F of the inclusion dx/dt in F(x)."""

    kind: str                       # singleton | ball | hull
    fields: tuple
    dim: int
    epsilon: float = 0.0
    name: str = ""

    @staticmethod
    def singleton(f: FieldHandle, name: str = "") -> "InclusionSpec":
        return InclusionSpec("singleton", (f,), f.dim, name=name or f.name)

    @staticmethod
    def ball_perturbed(f: FieldHandle, epsilon: float, name: str = "") -> "InclusionSpec":
        if epsilon < 0:
            raise DynamicsError("epsilon must be nonnegative")
        return InclusionSpec("ball", (f,), f.dim, epsilon=float(epsilon),
                             name=name or f"{f.name}+{epsilon}B")

    @staticmethod
    def hull(fields: Sequence[FieldHandle], name: str = "") -> "InclusionSpec":
        fields = tuple(fields)
        if not fields:
            raise DynamicsError("hull needs at least one field")
        if len({f.dim for f in fields}) != 1:
            raise DynamicsError("hull fields must share the state dimension")
        return InclusionSpec("hull", fields, fields[0].dim, name=name or "hull")

    @property
    def base_field(self) -> FieldHandle:
        return self.fields[0]


@dataclass(frozen=True)
class EvaluatedInclusion:
    """F(x) as vertices (singleton/hull) or a center plus a ball radius."""

    vertices: np.ndarray
    radius: float = 0.0

    @property
    def center(self) -> np.ndarray:
        return self.vertices[0]


def eval_inclusion(F: InclusionSpec, x) -> EvaluatedInclusion:
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DynamicsError("eval_inclusion at non-finite point")
    if F.kind == "singleton":
        return EvaluatedInclusion(F.fields[0](x)[None, :])
    if F.kind == "ball":
        return EvaluatedInclusion(F.fields[0](x)[None, :], radius=F.epsilon)
    return EvaluatedInclusion(np.stack([f(x) for f in F.fields]))


def inclusion_extreme_points(F: InclusionSpec, x, directions: int = 16,
                             seed: int = 0) -> np.ndarray:
    """Finite vertex cloud approximating F(x) (exact for singleton/hull)."""
    ev = eval_inclusion(F, x)
    if F.kind != "ball" or F.epsilon == 0.0:
        return ev.vertices
    dirs = sampling.sphere_directions(F.dim, directions, seed=seed)
    return ev.center + F.epsilon * dirs


@dataclass(frozen=True)
class Selector:
    """Selection rule picking an element of F(x) at each time.

    constant: a fixed unit direction (ball variant) or hull weight vector;
    piecewise: increasing switch times with one direction per segment.
    """

    kind: str                         # constant | piecewise
    direction: Optional[np.ndarray] = None
    switch_times: Optional[np.ndarray] = None
    directions: Optional[np.ndarray] = None
    index: int = 0

    @staticmethod
    def constant(direction=None, index: int = 0) -> "Selector":
        d = None if direction is None else np.asarray(direction, dtype=float)
        return Selector("constant", direction=d, index=index)

    @staticmethod
    def piecewise(switch_times, directions, index: int = 0) -> "Selector":
        st = np.asarray(switch_times, dtype=float)
        ds = np.asarray(directions, dtype=float)
        if np.any(np.diff(st) <= 0):
            raise DynamicsError("switch times must be strictly increasing")
        if len(ds) != len(st) + 1:
            raise DynamicsError("need one direction per segment (switches + 1)")
        return Selector("piecewise", switch_times=st, directions=ds, index=index)

    def direction_at(self, t: float) -> Optional[np.ndarray]:
        if self.kind == "constant":
            return self.direction
        seg = int(np.searchsorted(self.switch_times, t, side="right"))
        return self.directions[seg]


def _validate_direction(F: InclusionSpec, d: Optional[np.ndarray]) -> None:
    if F.kind == "singleton":
        return
    if d is None:
        raise DynamicsError(f"{F.kind} inclusion needs a selector direction")
    if F.kind == "ball":
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise DynamicsError("ball selector direction must be a unit vector")
    else:
        if np.any(d < -1e-12) or abs(d.sum() - 1.0) > 1e-9 or len(d) != len(F.fields):
            raise DynamicsError("hull selector weights must be nonnegative and sum to 1")


def select(F: InclusionSpec, x, s: Selector, t: float = 0.0) -> np.ndarray:
    """Evaluate the selected velocity; always an element of F(x)."""
    d = s.direction_at(t)
    _validate_direction(F, d)
    x = np.asarray(x, dtype=float)
    if F.kind == "singleton":
        return F.fields[0](x)
    if F.kind == "ball":
        return F.fields[0](x) + F.epsilon * d
    vals = np.stack([f(x) for f in F.fields], axis=-1)
    return vals @ d


def negate(F: InclusionSpec) -> InclusionSpec:
    """Pointwise negation -F(x); the ball radius is preserved."""
    return replace(F, fields=tuple(f.negated() for f in F.fields),
                   name=f"-({F.name})" if F.name else "")


def rescale_field(f: FieldHandle, V: Callable) -> FieldHandle:
    """x -> f(x) * V(x)/(1+V(x)); vanishes exactly where V vanishes.

    V must be nonnegative and locally Lipschitz; the factor is < 1 everywhere
    so the rescaled field never exceeds f in norm.
    """

    def fn(x):
        x = np.asarray(x, dtype=float)
        v = np.asarray(V(x), dtype=float).reshape(x.shape[:-1])
        if np.any(v < 0):
            raise DynamicsError("rescale_field requires V >= 0")
        return f(x) * (v / (1.0 + v))[..., None]

    return FieldHandle(fn, f.dim, name=f"{f.name}*V/(1+V)")


def lipschitz_estimate(F: InclusionSpec, box: SetSpec, grid: int = 9) -> float:
    """Max over grid pairs of d_H(F(x), F(y)) / |x - y| on the given box."""
    if box.kind != "box":
        raise DynamicsError("lipschitz_estimate expects a box set")
    if grid < 2:
        raise DynamicsError("need at least 2 grid points per axis")
    axes = [np.linspace(box.lo[i], box.hi[i], grid) for i in range(box.dim)]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.column_stack([m.ravel() for m in mesh])
    if F.kind == "hull" and len(F.fields) > 1:
        values = [np.stack([f(p) for f in F.fields]) for p in pts]
        best = 0.0
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                dx = float(np.linalg.norm(pts[i] - pts[j]))
                if dx < 1e-12:
                    continue
                best = max(best, hausdorff_distance(values[i], values[j]) / dx)
        return best
    # singleton and ball variants: the ball radius cancels in d_H
    vals = F.fields[0](pts)
    diff = vals[:, None, :] - vals[None, :, :]
    dist = np.linalg.norm(diff, axis=2)
    sep = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    mask = sep > 1e-12
    return float((dist[mask] / sep[mask]).max(initial=0.0))

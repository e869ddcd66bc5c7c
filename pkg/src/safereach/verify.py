"""End-to-end safety and invariance verdicts.

Simulation verdicts are one-sided: a violation witness is real (it
re-simulates), but "no violation found" is never reported as "safe" - the
bundle covers finitely many selections from finitely many starting points.
Every report carries that disclaimer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .barrier import BarrierFn, CheckReport, RelaxFn, _jsonable
from .dynamics import InclusionSpec, inclusion_extreme_points
from .geometry import (ConeProbe, GeometryError, SetSpec,
                       clarke_gradient_sample, cone_residual,
                       distance_to_set_many)
from .solver import IntegratorConfig, Trajectory, bundle_selectors, integrate

UNDER_APPROX_DISCLAIMER = (
    "one-sided evidence: finitely many selections and initial samples "
    "under-approximate the solution set; upper semicontinuity and convexity "
    "of F are assumed, not verified")

NAGUMO_DEFAULT_TOL = 1e-5   # absorbs curvature x min-step plus distance noise


@dataclass(frozen=True)
class SamplePlan:
    boundary: int = 32
    interior: int = 32
    seed: int = 0
    window: Optional[tuple] = None


@dataclass(frozen=True)
class BundlePlanV:
    directions: int = 8
    switches: int = 0


@dataclass(frozen=True)
class SafetyProblem:
    F: InclusionSpec
    X_o: SetSpec
    X_u: SetSpec
    horizon: float
    cfg: IntegratorConfig = IntegratorConfig()
    samples: SamplePlan = SamplePlan()
    bundle: BundlePlanV = BundlePlanV()
    hit_tol: float = 1e-9

    def unsafe_hits(self, states: np.ndarray) -> np.ndarray:
        """Boolean mask of states counted as entering X_u.

        For a complement-variant X_u (the invariance modes) a hit means
        actually leaving the complemented set: boundary contact alone is not
        an excursion."""
        if self.X_u.kind == "complement":
            return distance_to_set_many(states, self.X_u.members[0]) > self.hit_tol
        return distance_to_set_many(states, self.X_u) <= self.hit_tol

    def unsafe_margins(self, states: np.ndarray) -> np.ndarray:
        if self.X_u.kind == "complement":
            return -distance_to_set_many(states, self.X_u.members[0])
        return distance_to_set_many(states, self.X_u)

    def initial_samples(self) -> np.ndarray:
        pts = []
        if self.samples.interior > 0:
            pts.append(self.X_o.sample_interior(self.samples.interior,
                                                seed=self.samples.seed,
                                                window=self.samples.window))
        if self.samples.boundary > 0:
            try:
                pts.append(self.X_o.sample_boundary(self.samples.boundary,
                                                    seed=self.samples.seed + 1,
                                                    window=self.samples.window))
            except GeometryError:
                pass    # sets without a boundary sampler fall back to interior
        if not pts:
            raise ValueError("sample plan produced no initial points")
        out = np.vstack(pts)
        bad = self.unsafe_hits(out)
        if bad.any():
            raise ValueError("X_o and X_u are not sample-disjoint: "
                             f"sample {out[bad][0].tolist()} lies in both")
        return out


@dataclass
class SafetyReport:
    verdict: str                      # no_violation_found | violation
    witness: dict = field(default_factory=dict)
    coverage: dict = field(default_factory=dict)
    disclaimers: list = field(default_factory=lambda: [UNDER_APPROX_DISCLAIMER])
    escapes: int = 0
    margin: float = float("inf")      # min distance of any node to X_u

    def to_json(self) -> str:
        return json.dumps({
            "verdict": self.verdict,
            "witness": _jsonable(self.witness),
            "coverage": _jsonable(self.coverage),
            "disclaimers": self.disclaimers,
            "escapes": self.escapes,
            "margin": self.margin if np.isfinite(self.margin) else None,
        }, indent=2, sort_keys=True)

    @property
    def passed(self) -> bool:
        return self.verdict == "no_violation_found"


def simulate_safety_check(p: SafetyProblem) -> SafetyReport:
    """Run bundles from every initial sample; violation iff a stored node
    enters X_u.  Escapes are reported, not counted as violations."""
    starts = p.initial_samples()
    sels = bundle_selectors(p.F, m=p.bundle.directions, switches=p.bundle.switches,
                            T=p.horizon, seed=p.samples.seed)
    escapes = 0
    margin = np.inf
    witness = {}
    total = 0
    for sel in sels:
        trajs = _integrate_batch(p, starts, sel)
        for i, tr in enumerate(trajs):
            total += 1
            if tr.termination == "escape":
                escapes += 1
            margin = min(margin, float(p.unsafe_margins(tr.states).min()))
            hits = np.nonzero(p.unsafe_hits(tr.states))[0]
            if len(hits) > 0:
                k = int(hits[0])
                # keep the earliest hit over the whole bundle (deterministic)
                if not witness or tr.times[k] < witness["hit_time"]:
                    witness = {"x0": starts[i].tolist(), "selector": sel.index,
                               "hit_time": float(tr.times[k]),
                               "hit_state": tr.states[k].tolist()}
    verdict = "violation" if witness else "no_violation_found"
    report = SafetyReport(verdict, witness,
                          coverage={"initial_samples": len(starts),
                                    "selectors": len(sels),
                                    "trajectories": total,
                                    "horizon": p.horizon},
                          escapes=escapes, margin=float(margin))
    return report


def _integrate_batch(p: SafetyProblem, starts: np.ndarray, sel) -> list[Trajectory]:
    """Batch all initial points through one selector with shared node grid."""
    from .solver import _batched_select, _rk4_batch

    n_steps = max(1, int(np.ceil(p.horizon / p.cfg.step - 1e-9)))
    h = p.horizon / n_steps
    if sel.kind != "constant":
        return [integrate(p.F, sel, x0, p.horizon, "forward", p.cfg) for x0 in starts]
    fn = lambda X: _batched_select(p.F, X, sel, 0.0)
    path, alive = _rk4_batch(fn, starts, h, n_steps, p.cfg.escape_radius)
    times = h * np.arange(n_steps + 1)
    out = []
    for i in range(len(starts)):
        k = int(alive[i])
        term = "horizon" if k == n_steps else "escape"
        out.append(Trajectory(times[:k + 1], path[:k + 1, i, :], term,
                              "forward", sel.index))
    return out


def resimulate_witness(p: SafetyProblem, report: SafetyReport) -> bool:
    """Fresh run of the violation witness; True iff it reproduces the hit."""
    if not report.witness:
        return False
    sels = bundle_selectors(p.F, m=p.bundle.directions, switches=p.bundle.switches,
                            T=p.horizon, seed=p.samples.seed)
    sel = next(s for s in sels if s.index == report.witness["selector"])
    tr = integrate(p.F, sel, np.asarray(report.witness["x0"]), p.horizon,
                   "forward", p.cfg)
    return bool(p.unsafe_hits(tr.states).any())


def conditional_invariance_check(F: InclusionSpec, X_o: SetSpec, X_s: SetSpec,
                                 horizon: float, cfg: IntegratorConfig = IntegratorConfig(),
                                 samples: SamplePlan = SamplePlan(),
                                 bundle: BundlePlanV = BundlePlanV()) -> SafetyReport:
    """Solutions from X_o must stay in X_s: safety with X_u = complement(X_s)."""
    return simulate_safety_check(SafetyProblem(
        F, X_o, SetSpec.complement(X_s, name=f"not_{X_s.name or X_s.kind}"),
        horizon, cfg, samples, bundle))


def forward_pre_invariance_check(F: InclusionSpec, X_s: SetSpec, horizon: float,
                                 cfg: IntegratorConfig = IntegratorConfig(),
                                 samples: SamplePlan = SamplePlan(),
                                 bundle: BundlePlanV = BundlePlanV()) -> SafetyReport:
    """Solutions from X_s must stay in X_s for as long as they exist."""
    return simulate_safety_check(SafetyProblem(
        F, X_s, SetSpec.complement(X_s, name=f"not_{X_s.name or X_s.kind}"),
        horizon, cfg, samples, bundle))


# ---------------------------------------------------------------------------
# tangent-cone conditions
# ---------------------------------------------------------------------------

def nagumo_check(F: InclusionSpec, K: SetSpec, mode: str = "boundary",
                 n_samples: int = 64, shell_width: float = 1e-3,
                 tol: Optional[float] = None, seed: int = 0,
                 window=None, ball_directions: int = 16,
                 extra_points: Optional[Sequence] = None) -> CheckReport:
    """Tangent-cone test for forward pre-invariance of K.

    boundary mode: every inclusion vertex at boundary samples must be admitted
    by the contingent cone; exterior mode: external-cone residual on a shell
    just outside K must be nonpositive up to tol.  Directions are normalized
    before probing (cones are positively homogeneous) so the residual is an
    outward rate per unit speed; the default tolerances absorb the curvature
    x step floor of the finite quotients (1e-5 on the boundary, 1e-3 on the
    exterior shell where distances are themselves estimates).
    """
    if mode not in ("boundary", "exterior"):
        raise ValueError(f"unknown mode {mode}")
    if tol is None:
        tol = NAGUMO_DEFAULT_TOL if mode == "boundary" else 1e-3
    if mode == "boundary":
        pts = K.sample_boundary(n_samples, seed=seed, window=window)
    else:
        pts = _exterior_shell(K, n_samples, shell_width, seed, window)
        if len(pts) == 0:
            return CheckReport(f"nagumo_{mode}", 0, 0.0, {}, "inconclusive",
                               details={"reason": "empty shell after sampling"})
    if extra_points is not None:
        pts = np.vstack([pts, np.atleast_2d(np.asarray(extra_points, dtype=float))])
    worst = -np.inf
    witness = {}
    checked = 0
    cone_mode = "contingent" if mode == "boundary" else "external"
    for x in pts:
        for eta in inclusion_extreme_points(F, x, ball_directions, seed):
            speed = float(np.linalg.norm(eta))
            checked += 1
            if speed < 1e-15:
                res = 0.0    # zero velocity is in every cone
            else:
                probe = ConeProbe(x, eta / speed, mode=cone_mode)
                res = cone_residual(probe, K, tol=max(tol, shell_width))
            if res > worst:
                worst, witness = float(res), {"x": x.tolist(), "eta": eta.tolist()}
    return CheckReport(f"nagumo_{mode}", checked, worst, witness,
                       "pass" if worst <= tol else "fail",
                       details={"set": K.name or K.kind, "tol": tol})


def _exterior_shell(K: SetSpec, count: int, width: float, seed: int, window):
    box = K.bounding_box()
    if box is None and window is None:
        raise ValueError("exterior shell sampling needs a bounded K or window")
    if window is not None:
        lo, hi = np.asarray(window[0], dtype=float), np.asarray(window[1], dtype=float)
    else:
        lo, hi = box
        lo, hi = lo - 2 * width - 0.1 * (hi - lo) - 1e-6, hi + 2 * width + 0.1 * (hi - lo) + 1e-6
    from . import sampling

    cand = sampling.box_points(lo, hi, count * 32, seed=seed)
    d = distance_to_set_many(cand, K)
    keep = (d > 0.0) & (d <= width)
    return cand[keep][:count]


# ---------------------------------------------------------------------------
# conditional invariance via a time-independent barrier
# ---------------------------------------------------------------------------

def prop1_check(F: InclusionSpec, X_o: SetSpec, X_s: SetSpec, B: BarrierFn,
                g: RelaxFn = None, mode: str = "conditional",
                n_samples: int = 64, shell_width: float = 1e-3, window=None,
                seed: int = 0, tol: float = 1e-7,
                clarke_radius: float = 1e-6, fd: float = 1e-7,
                ball_directions: int = 16) -> CheckReport:
    """Sign conditions plus the Clarke decrease inequality for conditional
    (or strict conditional) invariance of X_s with respect to X_o.

    conditional mode: B > 0 just outside X_s, B <= 0 on the boundary of X_o,
    and <zeta, eta> <= g(B) between the boundary of X_o and the outside shell
    of X_s.  strict mode uses the boundary of X_s and the region X_s \\ X_o.
    """
    if g is None:
        g = RelaxFn.zero()
    if g.kind not in ("minimal", "zero", "linear"):
        raise ValueError("prop1_check expects a minimal-type relaxation")
    if mode not in ("conditional", "strict"):
        raise ValueError(f"unknown mode {mode}")
    sign_margins = []
    if mode == "conditional":
        outside = _exterior_shell(X_s, n_samples, shell_width, seed, window)
        if len(outside) == 0:
            return CheckReport("prop1_conditional", 0, 0.0, {}, "inconclusive",
                               details={"reason": "empty shell outside X_s"})
        pos_vals = B.evaluate_many(np.zeros(len(outside)), outside)
        sign_margins.append(("positivity_outside_X_s", float(-pos_vals.min()),
                             outside[int(np.argmin(pos_vals))]))
    else:
        bd_s = X_s.sample_boundary(n_samples, seed=seed, window=window)
        pos_vals = B.evaluate_many(np.zeros(len(bd_s)), bd_s)
        sign_margins.append(("positivity_on_boundary_X_s", float(-pos_vals.min()),
                             bd_s[int(np.argmin(pos_vals))]))
    bd_o = X_o.sample_boundary(n_samples, seed=seed + 1, window=window)
    neg_vals = B.evaluate_many(np.zeros(len(bd_o)), bd_o)
    sign_margins.append(("nonpositivity_on_boundary_X_o", float(neg_vals.max()),
                         bd_o[int(np.argmax(neg_vals))]))

    region = _between_region(X_o, X_s, mode, n_samples, shell_width, seed + 2, window)
    worst = -np.inf
    witness = {}
    checked = 0
    for name, margin, x in sign_margins:
        checked += 1
        if margin > worst:
            worst, witness = margin, {"condition": name, "x": np.asarray(x).tolist()}
    for x in region:
        zetas = clarke_gradient_sample(lambda p: B.evaluate(0.0, p), x,
                                       radius=clarke_radius, fd_step=fd, seed=seed)
        gb = float(np.asarray(g(B.evaluate(0.0, x))))
        for zeta in zetas:
            for eta in inclusion_extreme_points(F, x, ball_directions, seed):
                m = float(zeta @ eta) - gb
                checked += 1
                if m > worst:
                    worst, witness = m, {"condition": "decrease", "x": x.tolist(),
                                         "eta": eta.tolist(), "zeta": zeta.tolist()}
    if len(region) == 0:
        return CheckReport(f"prop1_{mode}", checked, worst, witness, "inconclusive",
                           details={"reason": "empty decrease region"})
    return CheckReport(f"prop1_{mode}", checked, float(worst), witness,
                       "pass" if worst <= tol else "fail",
                       details={"relaxation": g.kind})


def _between_region(X_o: SetSpec, X_s: SetSpec, mode: str, count: int,
                    width: float, seed: int, window):
    from . import sampling

    if window is not None:
        lo, hi = np.asarray(window[0], dtype=float), np.asarray(window[1], dtype=float)
    else:
        box = X_s.bounding_box() or X_o.bounding_box()
        if box is None:
            raise ValueError("prop1_check needs a window for unbounded sets")
        lo, hi = box
    cand = sampling.box_points(lo, hi, count * 16, seed=seed)
    d_o = distance_to_set_many(cand, X_o)
    d_s = distance_to_set_many(cand, X_s)
    if mode == "conditional":
        keep = (d_o > 0.0) & (d_s <= width)      # U(X_s) \ X_o
    else:
        keep = (d_o > 0.0) & (d_s <= 0.0)        # X_s \ X_o
    return cand[keep][:count]

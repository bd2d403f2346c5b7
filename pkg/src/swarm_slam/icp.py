"""Point-to-point ICP between two scans.

``match_scans(reference, moving, guess)`` returns the pose ``T`` of the
moving scan's anchor in the reference scan's anchor frame, so that
``T * p_moving`` lands on the reference points.  For two scans of the same
drone ``T`` is directly the loop-closure measurement between the two scan
poses.  :func:`world_correction` turns it into the left-multiplied world
correction used by the inter-drone edge algebra.

Each run alternates nearest-neighbour association (scipy KD-tree) with the
closed-form 2D rigid alignment of the associated pairs.  The quantity it
drives down is the truncated mean squared distance
``mean(min(d_i^2, gate^2))`` over all moving points, which cannot increase
from one iteration to the next at a fixed gate.  A coarse gate is used
first, then the configured correspondence gate.  Optionally several
heading hypotheses around the guess are tried and the best kept.

Point-to-point matching of two scans taken from different places is biased
because the two point sets sample the walls at different spots.  A final
point-to-line stage removes that bias: each moving point is compared with
the local line (PCA normal) at its nearest reference point, and Tukey
weights with an annealed MAD scale drop corner and outlier pairs.  On noise-free
straight walls every kept residual is zero at the true pose, so the
refined estimate is exact to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2, compose, inverse


@dataclass
class IcpConfig:
    max_iterations: int = 30
    translation_tol: float = 1e-4
    rotation_tol: float = 1e-4
    max_correspondence_dist: float = 0.5
    min_inlier_fraction: float = 0.3
    coarse_correspondence_dist: float = 1.5
    heading_hypotheses_deg: tuple = (0.0,)
    max_condition: float = 1e4
    normal_radius: float = 0.25
    refine_iterations: int = 100
    max_planarity: float = 0.05

    def __post_init__(self):
        self.heading_hypotheses_deg = tuple(float(v) for v in self.heading_hypotheses_deg)
        positives = (self.max_iterations, self.translation_tol, self.rotation_tol,
                     self.max_correspondence_dist, self.coarse_correspondence_dist,
                     self.max_condition, self.normal_radius)
        if any(v <= 0 for v in positives):
            raise ValueError("ICP iteration counts, tolerances and distances must be positive")
        if not 0 < self.min_inlier_fraction <= 1:
            raise ValueError("min_inlier_fraction must lie in (0, 1]")
        if self.refine_iterations < 0 or not 0 < self.max_planarity < 1:
            raise ValueError("refine_iterations must be >= 0 and max_planarity in (0, 1)")
        if not self.heading_hypotheses_deg:
            raise ValueError("at least one heading hypothesis is required")


@dataclass
class IcpResult:
    transform: Pose2
    rmse: float
    iterations: int
    converged: bool
    inlier_fraction: float
    reason: str = ""
    # truncated MSE per iteration, one list per gate stage
    history: list = field(default_factory=list, repr=False)


def rigid_align(src: np.ndarray, dst: np.ndarray) -> Pose2:
    """Least-squares rigid motion taking ``src`` points onto ``dst`` (2D closed form)."""
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    a, b = src - ms, dst - md
    dot = np.sum(a * b)
    cross = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])
    theta = math.atan2(cross, dot)
    c, s = math.cos(theta), math.sin(theta)
    t = md - np.array([c * ms[0] - s * ms[1], s * ms[0] + c * ms[1]])
    return Pose2(t[0], t[1], theta)


def _apply(T: np.ndarray, pts: np.ndarray) -> np.ndarray:
    c, s = math.cos(T[2]), math.sin(T[2])
    return np.column_stack([c * pts[:, 0] - s * pts[:, 1] + T[0], s * pts[:, 0] + c * pts[:, 1] + T[1]])


def _run(tree, ref, mov, T0, gate, cfg, history):
    """ICP at a fixed gate.  Returns (transform, truncated mse, iterations, converged)."""
    T = np.array(T0, dtype=float)
    g2 = gate * gate
    best_T, best_cost = T.copy(), math.inf
    for it in range(1, cfg.max_iterations + 1):
        moved = _apply(T, mov)
        dist, idx = tree.query(moved, distance_upper_bound=gate)
        inl = np.isfinite(dist)
        cost = float(np.mean(np.where(inl, dist * dist, g2)))
        history.append(cost)
        if cost < best_cost:
            best_T, best_cost = T.copy(), cost
        if inl.sum() < 3:
            return best_T, best_cost, it, False
        step = rigid_align(moved[inl], ref[idx[inl]])
        T = compose(Pose2(*step.as_array()), Pose2(*T)).as_array()
        if math.hypot(step.x, step.y) < cfg.translation_tol and abs(step.psi) < cfg.rotation_tol:
            moved = _apply(T, mov)
            dist, _ = tree.query(moved, distance_upper_bound=gate)
            cost = float(np.mean(np.where(np.isfinite(dist), dist * dist, g2)))
            history.append(cost)
            if cost < best_cost:
                best_T, best_cost = T.copy(), cost
            return best_T, best_cost, it, True
    return best_T, best_cost, cfg.max_iterations, False


def local_normals(points: np.ndarray, radius: float, k: int = 8, tree=None):
    """PCA normal and planarity of every point from its ``k`` nearest neighbours.

    Neighbours farther than ``radius`` are ignored.  Planarity is the ratio
    of the small to the large covariance eigenvalue (0 on a straight line).
    Points with fewer than 3 neighbours get planarity 1.
    """
    n = len(points)
    normals = np.zeros((n, 2))
    planarity = np.ones(n)
    if n < 3:
        return normals, planarity
    k = min(k, n)
    tree = tree if tree is not None else cKDTree(points)
    dist, idx = tree.query(points, k=k, distance_upper_bound=radius)
    ok = np.isfinite(dist)
    enough = ok.sum(axis=1) >= 3
    if not enough.any():
        return normals, planarity
    idx = np.where(ok, idx, 0)[enough]
    w = ok[enough].astype(float)
    nb = points[idx]
    mean = (nb * w[..., None]).sum(axis=1) / w.sum(axis=1)[:, None]
    q = (nb - mean[:, None, :]) * w[..., None]
    cov = np.einsum("nki,nkj->nij", q, q)
    val, vec = np.linalg.eigh(cov)
    normals[enough] = vec[:, :, 0]
    planarity[enough] = np.maximum(val[:, 0], 0.0) / np.maximum(val[:, 1], 1e-300)
    return normals, planarity


def normal_information(points: np.ndarray, radius: float, k: int = 8) -> np.ndarray:
    """Sum of ``n n^T`` over local PCA normals; near-singular along a sliding direction."""
    normals, planarity = local_normals(points, radius, k)
    normals = normals[planarity < 1]
    return normals.T @ normals if len(normals) else np.zeros((2, 2))


def _refine(tree, ref, normals, usable, mov, T0, cfg):
    """Robust point-to-line Gauss-Newton from ``T0``.  Returns the refined transform or ``None``."""
    T = np.array(T0, dtype=float)
    scale = cfg.max_correspondence_dist / 4.685  # start as plain least squares
    for _ in range(cfg.refine_iterations):
        moved = _apply(T, mov)
        dist, idx = tree.query(moved, distance_upper_bound=cfg.max_correspondence_dist)
        ok = np.isfinite(dist)
        ok[ok] = usable[idx[ok]]
        if ok.sum() < 10:
            return None
        p, n = moved[ok], normals[idx[ok]]
        r = np.sum(n * (p - ref[idx[ok]]), axis=1)
        # the scale may shrink at most 4x per step, so walls that converge later keep weight
        mad = 1.4826 * float(np.median(np.abs(r)))
        scale = max(mad, 0.25 * scale, 1e-12)
        u = r / (4.685 * scale)
        w = np.where(np.abs(u) < 1, (1 - u * u) ** 2, 0.0)
        J = np.column_stack([n, n[:, 0] * -p[:, 1] + n[:, 1] * p[:, 0]])
        H = J.T @ (J * w[:, None])
        ev = np.linalg.eigvalsh(H)
        if ev[0] <= 1e-12 * ev[2]:
            return None
        d = np.linalg.solve(H, -J.T @ (w * r))
        T = compose(Pose2(*d), Pose2(*T)).as_array()
        settled = scale <= max(mad, 1e-12)
        if settled and math.hypot(d[0], d[1]) < 1e-12 and abs(d[2]) < 1e-12:
            break
    return T


def condition_number(info: np.ndarray) -> float:
    w = np.linalg.eigvalsh(info)
    return math.inf if w[0] <= 1e-12 * max(w[1], 1e-300) else float(w[1] / w[0])


def match_scans(reference, moving, initial_guess: Pose2 | None = None,
                cfg: IcpConfig | None = None) -> IcpResult:
    """Align ``moving`` onto ``reference``; see the module docstring for the convention.

    ``reference``/``moving`` are :class:`~swarm_slam.scan.Scan` objects or
    ``(n, 2)`` point arrays in their own anchor frames.
    """
    cfg = cfg or IcpConfig()
    ref = np.asarray(getattr(reference, "points", reference), dtype=float).reshape(-1, 2)
    mov = np.asarray(getattr(moving, "points", moving), dtype=float).reshape(-1, 2)
    if len(ref) == 0 or len(mov) == 0:
        raise ValueError("ICP needs two non-empty point sets")
    guess = initial_guess if initial_guess is not None else Pose2()
    tree = cKDTree(ref)

    best = None
    for dpsi in cfg.heading_hypotheses_deg:
        start = compose(guess, Pose2(0.0, 0.0, math.radians(dpsi)))
        # rotate about the moving centroid so hypotheses do not swing the scan away
        c = mov.mean(axis=0)
        shift = _apply(start.as_array(), c[None])[0] - _apply(guess.as_array(), c[None])[0]
        start = Pose2(start.x - shift[0], start.y - shift[1], start.psi)
        history: list = []
        T, _, it1, _ = _run(tree, ref, mov, start.as_array(), cfg.coarse_correspondence_dist, cfg, history)
        fine_hist: list = []
        T, cost, it2, conv = _run(tree, ref, mov, T, cfg.max_correspondence_dist, cfg, fine_hist)
        if best is None or cost < best[1]:
            best = (T, cost, conv, [history, fine_hist], it1 + it2)

    T, cost, conv, stages, iters = best
    if cfg.refine_iterations:
        normals, planarity = local_normals(ref, cfg.normal_radius, tree=tree)
        # corner neighbourhoods are rejected relative to the scan's own noise level
        limit = min(cfg.max_planarity, 10 * float(np.median(planarity)))
        refined = _refine(tree, ref, normals, planarity <= limit, mov, T, cfg)
        # keep the point-to-point answer if refinement wandered off
        if refined is not None and np.hypot(*(refined[:2] - T[:2])) < cfg.max_correspondence_dist / 2:
            T = refined
    moved = _apply(T, mov)
    dist, idx = tree.query(moved, distance_upper_bound=cfg.max_correspondence_dist)
    inl = np.isfinite(dist)
    frac = float(inl.mean())
    rmse = float(np.sqrt(np.mean(dist[inl] ** 2))) if inl.any() else math.inf
    reason = ""
    cond = condition_number(normal_information(ref[np.unique(idx[inl])], cfg.normal_radius)) \
        if inl.sum() >= 3 else math.inf
    if cond > cfg.max_condition:
        reason = f"degenerate geometry (condition {cond:.3g})"
    elif frac < cfg.min_inlier_fraction:
        reason = f"inlier fraction {frac:.2f} below {cfg.min_inlier_fraction}"
    elif not conv:
        reason = "iteration limit"
    conv = not reason
    return IcpResult(Pose2(*T), rmse, iters, conv, frac, reason, stages)


def world_correction(transform: Pose2, reference_anchor: Pose2, moving_anchor: Pose2) -> Pose2:
    """Left-multiplied world correction ``Z`` with ``Z * moving_anchor = reference_anchor * T``."""
    return compose(compose(reference_anchor, transform), inverse(moving_anchor))


def should_pair(distance: float, threshold: float = 1.0) -> bool:
    """Scan poses closer than ``threshold`` are matched (strictly)."""
    if distance < 0:
        raise ValueError("distance must be non-negative")
    return distance < threshold

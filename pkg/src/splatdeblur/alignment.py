"""Pointmap post-processing: focal recovery, PnP RANSAC, global alignment.

A PointMap stores per-pixel 3D points in some camera frame together with
per-pixel confidences. From such maps this module recovers the shared focal
length (Weiszfeld iteration), relative camera poses (RANSAC over a PnP
solver with damped Gauss-Newton refinement), and a globally aligned cloud
over a connected view graph with one similarity scale per edge.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegeneratePointmap,
    DisconnectedGraph,
    EmptySequence,
    InsufficientCorrespondences,
    NoConsensus,
)
from .geometry import CameraIntrinsics, RigidTransform, Twist, se3_exp, se3_log


def _pose_twist(pose: RigidTransform) -> np.ndarray:
    return se3_log(pose).as_vector()

MIN_FOCAL_PIXELS = 10
WEISZFELD_TOL = 1e-8
WEISZFELD_MAX_ITERS = 100
_NORM_EPS = 1e-12


@dataclass(frozen=True)
class PointMap:
    """Per-pixel 3D points with confidences, expressed in a camera frame."""

    points: np.ndarray  # (H, W, 3)
    confidence: np.ndarray  # (H, W), > 0 where valid
    valid: np.ndarray | None = None  # (H, W) bool; default: depth > 0

    def __post_init__(self):
        pts = np.asarray(self.points, float)
        conf = np.asarray(self.confidence, float)
        if pts.ndim != 3 or pts.shape[2] != 3 or conf.shape != pts.shape[:2]:
            raise ValueError("points must be (H, W, 3) with matching confidence")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "confidence", conf)
        valid = self.valid
        if valid is None:
            valid = pts[..., 2] > 0
        else:
            valid = np.asarray(valid, bool) & (pts[..., 2] > 0)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self):
        return self.points.shape[:2]


def estimate_focal_weiszfeld(pointmap: PointMap) -> float:
    """Focal length minimizing the confidence-weighted sum of distances
    between centered pixel coordinates and scaled normalized points.

    Iteratively reweighted least squares with closed-form updates; stops at
    a relative change below 1e-8 or after 100 iterations.
    """
    h, w = pointmap.shape
    mask = pointmap.valid
    if mask.sum() < MIN_FOCAL_PIXELS:
        raise DegeneratePointmap(
            f"need >= {MIN_FOCAL_PIXELS} valid pixels, got {int(mask.sum())}"
        )
    ys, xs = np.nonzero(mask)
    u = np.stack([xs - w / 2.0, ys - h / 2.0], axis=1)
    p = pointmap.points[ys, xs]
    q = p[:, :2] / p[:, 2:3]
    o = pointmap.confidence[ys, xs]

    qq = np.einsum("ij,ij->i", q, q)
    uq = np.einsum("ij,ij->i", u, q)
    focal = float((o * uq).sum() / (o * qq).sum())  # least-squares start
    for _ in range(WEISZFELD_MAX_ITERS):
        r = np.linalg.norm(u - focal * q, axis=1)
        weight = o / np.maximum(r, _NORM_EPS)
        new = float((weight * uq).sum() / (weight * qq).sum())
        done = abs(new - focal) / max(abs(focal), _NORM_EPS) < WEISZFELD_TOL
        focal = new
        if done:
            break
    return focal


def focal_objective(pointmap: PointMap, focal: float) -> float:
    """The Weiszfeld objective value; exposed for verification."""
    h, w = pointmap.shape
    ys, xs = np.nonzero(pointmap.valid)
    u = np.stack([xs - w / 2.0, ys - h / 2.0], axis=1)
    p = pointmap.points[ys, xs]
    q = p[:, :2] / p[:, 2:3]
    o = pointmap.confidence[ys, xs]
    return float((o * np.linalg.norm(u - focal * q, axis=1)).sum())


def average_focal(focals) -> float:
    focals = list(focals)
    if not focals:
        raise EmptySequence("no focal estimates to average")
    return float(np.mean(focals))


# ---------------------------------------------------------------------------
# PnP


@dataclass(frozen=True)
class RansacConfig:
    threshold: float = 2.0  # inlier reprojection error, pixels
    iterations: int = 512
    seed: int = 0
    min_inlier_ratio: float = 0.3


def _project(points_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    z = points_cam[:, 2]
    return np.stack(
        [intr.focal * points_cam[:, 0] / z + intr.cx,
         intr.focal * points_cam[:, 1] / z + intr.cy],
        axis=1,
    )


def _reprojection_errors(pose, points3d, pixels2d, intr):
    cam = points3d @ pose.rotation.T + pose.translation
    bad = cam[:, 2] <= 1e-9
    cam[bad, 2] = 1.0
    err = np.linalg.norm(_project(cam, intr) - pixels2d, axis=1)
    err[bad] = np.inf
    return err


def _refine_pose_gn(pose, points3d, pixels2d, intr, iters=25):
    """Damped Gauss-Newton on reprojection error over a left-perturbation
    twist; the damping factor adapts multiplicatively."""
    damping = 1e-6
    cost = float((_reprojection_errors(pose, points3d, pixels2d, intr) ** 2).sum())
    for _ in range(iters):
        cam = points3d @ pose.rotation.T + pose.translation
        z = cam[:, 2]
        if np.any(z <= 1e-9):
            break
        res = (_project(cam, intr) - pixels2d).ravel()
        f = intr.focal
        n = len(points3d)
        j_proj = np.zeros((n, 2, 3))
        j_proj[:, 0, 0] = f / z
        j_proj[:, 1, 1] = f / z
        j_proj[:, 0, 2] = -f * cam[:, 0] / z**2
        j_proj[:, 1, 2] = -f * cam[:, 1] / z**2
        j_pose = np.concatenate(
            [np.broadcast_to(np.eye(3), (n, 3, 3)), -_skew_batch(cam)], axis=2
        )
        jac = np.einsum("nij,njk->nik", j_proj, j_pose).reshape(-1, 6)
        jtj = jac.T @ jac
        jtr = jac.T @ res
        for _ in range(8):
            try:
                step = np.linalg.solve(jtj + damping * np.eye(6), -jtr)
            except np.linalg.LinAlgError:
                damping *= 10.0
                continue
            candidate = se3_exp(Twist(step[:3], step[3:])) @ pose
            new_cost = float(
                (_reprojection_errors(candidate, points3d, pixels2d, intr) ** 2).sum()
            )
            if new_cost < cost:
                pose, cost = candidate, new_cost
                damping = max(damping * 0.3, 1e-12)
                break
            damping *= 10.0
        else:
            break
        if np.linalg.norm(step) < 1e-12:
            break
    return pose


def _skew_batch(v):
    k = np.zeros((len(v), 3, 3))
    k[:, 0, 1] = -v[:, 2]
    k[:, 0, 2] = v[:, 1]
    k[:, 1, 0] = v[:, 2]
    k[:, 1, 2] = -v[:, 0]
    k[:, 2, 0] = -v[:, 1]
    k[:, 2, 1] = v[:, 0]
    return k


def _solve_pnp_minimal(points3d, pixels2d, intr):
    import cv2

    camera = np.array(
        [[intr.focal, 0, intr.cx], [0, intr.focal, intr.cy], [0, 0, 1]], float
    )
    ok, rvec, tvec = cv2.solvePnP(
        points3d.astype(np.float64).reshape(-1, 1, 3),
        pixels2d.astype(np.float64).reshape(-1, 1, 2),
        camera, None, flags=cv2.SOLVEPNP_EPNP,
    )
    if not ok:
        return None
    from .geometry import so3_exp

    return RigidTransform(so3_exp(rvec.ravel()), tvec.ravel())


def estimate_relative_pose(points3d, pixels2d, intr: CameraIntrinsics,
                           config: RansacConfig = RansacConfig()) -> RigidTransform:
    """RANSAC pose fitting: minimal 4-point PnP hypotheses, Gauss-Newton
    polish, inliers by reprojection error, final refinement on the
    consensus set."""
    points3d = np.asarray(points3d, float).reshape(-1, 3)
    pixels2d = np.asarray(pixels2d, float).reshape(-1, 2)
    n = len(points3d)
    if n < 4 or len(pixels2d) != n:
        raise InsufficientCorrespondences(f"need >= 4 matched pairs, got {n}")

    rng = np.random.default_rng(config.seed)
    best_pose, best_inliers = None, None
    for _ in range(config.iterations):
        subset = rng.choice(n, size=4, replace=False)
        pose = _solve_pnp_minimal(points3d[subset], pixels2d[subset], intr)
        if pose is None:
            continue
        pose = _refine_pose_gn(pose, points3d[subset], pixels2d[subset], intr,
                               iters=5)
        err = _reprojection_errors(pose, points3d, pixels2d, intr)
        inliers = err < config.threshold
        if best_inliers is None or inliers.sum() > best_inliers.sum():
            best_pose, best_inliers = pose, inliers
            if inliers.all():
                break
    if best_pose is None or best_inliers.sum() < config.min_inlier_ratio * n:
        count = 0 if best_inliers is None else int(best_inliers.sum())
        raise NoConsensus(f"only {count}/{n} inliers")
    return _refine_pose_gn(
        best_pose, points3d[best_inliers], pixels2d[best_inliers], intr
    )


def inlier_mask(pose, points3d, pixels2d, intr, threshold=2.0):
    """Correspondences whose reprojection error is below the threshold."""
    return _reprojection_errors(
        pose, np.asarray(points3d, float), np.asarray(pixels2d, float), intr
    ) < threshold


# ---------------------------------------------------------------------------
# global alignment


@dataclass(frozen=True)
class Edge:
    """One view pair with both pointmaps expressed in the pair's frame."""

    first: int
    second: int
    pointmap_first: PointMap
    pointmap_second: PointMap


@dataclass
class ViewGraph:
    n_views: int
    edges: list

    def __post_init__(self):
        for e in self.edges:
            if not (0 <= e.first < self.n_views and 0 <= e.second < self.n_views):
                raise ValueError("edge endpoint out of range")

    def is_connected(self) -> bool:
        if self.n_views == 0:
            return False
        adj = [[] for _ in range(self.n_views)]
        for e in self.edges:
            adj[e.first].append(e.second)
            adj[e.second].append(e.first)
        seen = {0}
        stack = [0]
        while stack:
            for nxt in adj[stack.pop()]:
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return len(seen) == self.n_views


@dataclass(frozen=True)
class AlignmentConfig:
    learning_rate: float = 1e-2
    max_iters: int = 500
    convergence_tol: float = 1e-10
    seed: int = 0


@dataclass
class AlignmentSolution:
    edge_transforms: list  # RigidTransform per edge
    edge_scales: np.ndarray  # sigma_e per edge, product 1
    view_pointmaps: list  # (H, W, 3) global points per view
    objective: float
    history: np.ndarray  # objective per accepted iterate
    converged: bool


class _Adam:
    """Adam moments with the step direction separated from the step size so
    a guarded driver can backtrack without corrupting the state."""

    def __init__(self, shape, lr):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0
        self.lr = lr

    def direction(self, grad):
        self.t += 1
        self.m = 0.9 * self.m + 0.1 * grad
        self.v = 0.999 * self.v + 0.001 * grad**2
        m_hat = self.m / (1 - 0.9**self.t)
        v_hat = self.v / (1 - 0.999**self.t)
        return -self.lr * m_hat / (np.sqrt(v_hat) + 1e-8)


def _edge_terms(edge):
    """Flattened (view index, points, confidences) pairs for one edge."""
    out = []
    for view, pm in ((edge.first, edge.pointmap_first),
                     (edge.second, edge.pointmap_second)):
        mask = pm.valid
        out.append((view, pm.points[mask], pm.confidence[mask], mask))
    return out


def global_align(graph: ViewGraph, config: AlignmentConfig = AlignmentConfig()
                 ) -> AlignmentSolution:
    """Joint recovery of global pointmaps, per-edge rigid transforms, and
    per-edge scales by guarded Adam on the confidence-weighted distance
    objective.

    Log-scales are mean-subtracted after every step so the scale product
    stays exactly one; the first view of the first edge fixes the gauge, so
    that edge's transform is held at its initial value. Steps that would
    increase the objective are rejected and the learning rate halved, which
    makes the accepted-objective sequence non-increasing.
    """
    if not graph.edges:
        raise DisconnectedGraph("graph has no edges")
    if not graph.is_connected():
        raise DisconnectedGraph("view graph must be connected")

    n_edges = len(graph.edges)
    terms = [_edge_terms(e) for e in graph.edges]

    # initialization: the first edge's frame is the world frame; remaining
    # edge transforms and scales come from similarity fits between each
    # edge's local points and global maps assigned so far, walking the graph
    twists = np.zeros((n_edges, 6))
    log_sigma = np.zeros(n_edges)
    pointmaps = [None] * graph.n_views
    first = graph.edges[0]
    pointmaps[first.first] = first.pointmap_first.points.copy()
    pointmaps[first.second] = first.pointmap_second.points.copy()
    pending = list(range(1, n_edges))
    while pending:
        progressed = False
        for e_idx in list(pending):
            edge = graph.edges[e_idx]
            anchor = None
            for view, pm in ((edge.first, edge.pointmap_first),
                             (edge.second, edge.pointmap_second)):
                if pointmaps[view] is not None:
                    anchor = (view, pm)
                    break
            if anchor is None:
                continue
            view, pm = anchor
            mask = pm.valid
            from .metrics import umeyama_alignment

            s, rot, trans = umeyama_alignment(
                pm.points[mask], pointmaps[view][mask], with_scale=True
            )
            pose = RigidTransform(rot, trans / max(s, _NORM_EPS))
            twists[e_idx] = _pose_twist(pose)
            log_sigma[e_idx] = np.log(max(s, _NORM_EPS))
            for other, opm in ((edge.first, edge.pointmap_first),
                               (edge.second, edge.pointmap_second)):
                if pointmaps[other] is None:
                    flat = opm.points.reshape(-1, 3)
                    moved = s * (flat @ rot.T + pose.translation)
                    pointmaps[other] = moved.reshape(opm.points.shape)
            pending.remove(e_idx)
            progressed = True
        if not progressed:  # unreachable for a connected graph
            break
    # renormalize so the scale product starts at one without disturbing the
    # residuals: shrinking every sigma by exp(mean) shrinks the global maps
    # by the same factor
    mean_log = log_sigma.mean()
    log_sigma -= mean_log
    pointmaps = [pm * np.exp(-mean_log) for pm in pointmaps]

    def transforms():
        return [se3_exp(Twist(t[:3], t[3:])) for t in twists]

    def objective(pmaps, tws, lsig):
        total = 0.0
        tfs = [se3_exp(Twist(t[:3], t[3:])) for t in tws]
        for e_idx, edge_terms_ in enumerate(terms):
            t_e = tfs[e_idx]
            sigma = np.exp(lsig[e_idx])
            for view, pts, conf, mask in edge_terms_:
                moved = sigma * (pts @ t_e.rotation.T + t_e.translation)
                r = pmaps[view][mask] - moved
                total += float((conf * np.linalg.norm(r, axis=1)).sum())
        return total

    adam_maps = [_Adam(pm.shape, config.learning_rate) for pm in pointmaps]
    adam_twists = _Adam(twists.shape, config.learning_rate)
    adam_sigma = _Adam(log_sigma.shape, config.learning_rate)

    current = objective(pointmaps, twists, log_sigma)
    history = [current]
    converged = False
    step_scale = 1.0
    small_decreases = 0
    for _ in range(config.max_iters):
        tfs = transforms()
        g_maps = [np.zeros_like(pm) for pm in pointmaps]
        g_twists = np.zeros_like(twists)
        g_sigma = np.zeros_like(log_sigma)
        for e_idx, edge_terms_ in enumerate(terms):
            t_e = tfs[e_idx]
            sigma = np.exp(log_sigma[e_idx])
            for view, pts, conf, mask in edge_terms_:
                tp = pts @ t_e.rotation.T + t_e.translation
                r = pointmaps[view][mask] - sigma * tp
                norms = np.maximum(np.linalg.norm(r, axis=1), _NORM_EPS)
                r_hat = (conf / norms)[:, None] * r
                g_maps[view][mask] += r_hat
                g_twists[e_idx, :3] += -sigma * r_hat.sum(axis=0)
                g_twists[e_idx, 3:] += -sigma * np.cross(tp, r_hat).sum(axis=0)
                g_sigma[e_idx] += -sigma * float(np.einsum("ij,ij->", tp, r_hat))
        g_twists[0] = 0.0  # gauge: first edge frame is the world frame

        d_maps = [opt.direction(g) for opt, g in zip(adam_maps, g_maps)]
        d_twists = adam_twists.direction(g_twists)
        d_sigma = adam_sigma.direction(g_sigma)

        # backtracking guard: shrink the step until the objective does not
        # increase; the scale recovers across accepted iterations
        accepted = False
        for _ in range(30):
            new_maps = [
                pm + step_scale * d for pm, d in zip(pointmaps, d_maps)
            ]
            new_twists = twists + step_scale * d_twists
            new_sigma = log_sigma + step_scale * d_sigma
            new_sigma -= new_sigma.mean()  # keep the scale product at one
            candidate = objective(new_maps, new_twists, new_sigma)
            if candidate <= current:
                accepted = True
                break
            step_scale *= 0.5
        if not accepted:
            converged = True
            break
        decrease = current - candidate
        pointmaps, twists, log_sigma = new_maps, new_twists, new_sigma
        current = candidate
        history.append(current)
        step_scale = min(step_scale * 1.3, 1.0)
        small_decreases = small_decreases + 1 if decrease < config.convergence_tol else 0
        if small_decreases >= 5:
            converged = True
            break

    return AlignmentSolution(
        edge_transforms=transforms(),
        edge_scales=np.exp(log_sigma),
        view_pointmaps=pointmaps,
        objective=current,
        history=np.array(history),
        converged=converged,
    )

"""EPnP pose recovery with optional Gauss-Newton pose polish.

The 3D points are written as barycentric combinations of four control
points (three for planar sets).  Each 2D-3D correspondence gives two
linear constraints on the camera-frame control points; the solution lies
in the (approximate) null space of the resulting ``2K x 3m`` matrix and
the mixing coefficients are fixed by the known inter-control-point
distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import DegenerateGeometry, NoValidSolution, PointBehindCamera, UndefinedWeighting
from .geometry import MIN_DEPTH, CameraModel, Pose, rotvec_to_matrix, skew

PLANAR_RTOL = 1e-8


@dataclass(frozen=True)
class Correspondences:
    points3d: np.ndarray
    points2d: np.ndarray
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        p3 = np.array(self.points3d, dtype=float)
        p2 = np.array(self.points2d, dtype=float)
        if p3.ndim != 2 or p3.shape[1] != 3 or p2.shape != (len(p3), 2):
            raise DegenerateGeometry("points3d must be (K, 3) and points2d (K, 2)")
        if len(p3) < 4:
            raise DegenerateGeometry(f"need at least 4 correspondences, got {len(p3)}")
        w = np.ones(len(p3)) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != (len(p3),) or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise UndefinedWeighting("weights must be K non-negative finite values")
        for a in (p3, p2, w):
            a.setflags(write=False)
        object.__setattr__(self, "points3d", p3)
        object.__setattr__(self, "points2d", p2)
        object.__setattr__(self, "weights", w)

    def __len__(self):
        return len(self.points3d)


@dataclass(frozen=True)
class PnpSolution:
    pose: Pose
    reprojection_rms: float
    num_inliers: int


def reprojection_residuals(R: np.ndarray, t: np.ndarray, corr: Correspondences,
                           camera: CameraModel) -> np.ndarray:
    """Unweighted pixel residuals ``(K, 2)``: projected minus observed."""
    P = corr.points3d @ R.T + t
    z = P[:, 2]
    if np.any(z <= MIN_DEPTH):
        raise PointBehindCamera("point at or behind the camera plane")
    u = camera.fx * P[:, 0] / z + camera.cx
    v = camera.fy * P[:, 1] / z + camera.cy
    return np.column_stack((u, v)) - corr.points2d


def _weighted_rms(res: np.ndarray, w: np.ndarray) -> float:
    sw = w.sum()
    if sw <= 0.0:
        raise UndefinedWeighting("all weights are zero")
    return float(np.sqrt(np.sum(w * np.sum(res**2, axis=1)) / sw))


def reprojection_rms(pose: Pose, corr: Correspondences, camera: CameraModel) -> float:
    """Weighted RMS of per-keypoint residual norms, in pixels."""
    if corr.weights.sum() <= 0.0:
        raise UndefinedWeighting("all weights are zero")
    res = reprojection_residuals(pose.R, pose.translation, corr, camera)
    return _weighted_rms(res, corr.weights)


def absolute_orientation(src: np.ndarray, dst: np.ndarray, w: np.ndarray | None = None):
    """Least-squares rigid ``R, t`` with ``dst ≈ R @ src + t`` and ``det(R) = +1``."""
    if w is None:
        w = np.ones(len(src))
    w = w / w.sum()
    mu_s = w @ src
    mu_d = w @ dst
    H = (src - mu_s).T @ ((dst - mu_d) * w[:, None])
    U, _, Vt = np.linalg.svd(H)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(Vt.T @ U.T)) or 1.0
    R = Vt.T @ D @ U.T
    return R, mu_d - R @ mu_s


def _control_points(X: np.ndarray):
    c0 = X.mean(axis=0)
    Xc = X - c0
    _, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    if s[0] <= 0.0 or s[1] < PLANAR_RTOL * s[0]:
        raise DegenerateGeometry("3D points are collinear or coincident")
    n_axes = 2 if s[2] < PLANAR_RTOL * s[0] else 3
    scale = s[:n_axes] / np.sqrt(len(X))
    axes = Vt[:n_axes] * scale[:, None]
    ctrl = np.vstack((c0, c0 + axes))
    # barycentric coords: X - c0 = sum_j a_j * axes_j (axes orthogonal)
    a = Xc @ axes.T / (scale**2)[None, :]
    alphas = np.column_stack((1.0 - a.sum(axis=1), a))
    return ctrl, alphas


def _betas_linearized(L6: np.ndarray, rho: np.ndarray, n: int):
    """Closed-form betas for null-space dimension ``n`` (1..3)."""
    # L6 columns: products (11, 12, 13, 14, 22, 23, 24, 33, 34, 44) of dv_k . dv_l
    idx = {(0, 0): 0, (0, 1): 1, (0, 2): 2, (0, 3): 3, (1, 1): 4, (1, 2): 5,
           (1, 3): 6, (2, 2): 7, (2, 3): 8, (3, 3): 9}
    if n == 1:
        dvv = L6[:, idx[0, 0]]
        b = np.sum(np.sqrt(np.maximum(dvv, 0.0)) * np.sqrt(rho)) / max(np.sum(dvv), 1e-300)
        return np.array([b])
    pairs = [(k, l) for k in range(n) for l in range(k, n)]
    if len(pairs) > len(rho):
        return None
    A = L6[:, [idx[p] for p in pairs]]
    sol, *_ = np.linalg.lstsq(A, rho, rcond=None)
    bb = dict(zip(pairs, sol))
    b = np.zeros(n)
    b[0] = np.sqrt(abs(bb[0, 0]))
    for k in range(1, n):
        b[k] = np.sign(bb[0, k]) * np.sqrt(abs(bb[k, k]))
    return b


def _gauss_newton_betas(G: np.ndarray, rho: np.ndarray, beta: np.ndarray, iters: int = 5):
    """Refine betas on the distance constraints ``b^T G_p b = rho_p``.

    ``G_p`` is the Gram matrix of the null-vector differences for pair ``p``.
    """
    def residual(b):
        Gb = G @ b
        return Gb @ b - rho, Gb

    r, Gb = residual(beta)
    cost = r @ r
    for _ in range(iters):
        J = 2.0 * Gb
        try:
            step = np.linalg.solve(J.T @ J, -J.T @ r)
        except np.linalg.LinAlgError:
            step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        cand = beta + step
        r2, Gb2 = residual(cand)
        c2 = r2 @ r2
        if not c2 < cost:
            break
        beta, r, Gb, cost = cand, r2, Gb2, c2
    return beta


def _check_image_spread(corr: Correspondences) -> None:
    used = corr.points2d[corr.weights > 0]
    if len(used) < 3:
        raise DegenerateGeometry(f"only {len(used)} correspondences carry weight")
    s = np.linalg.svd(used - used.mean(axis=0), compute_uv=False)
    if s[0] <= 0.0 or s[1] < PLANAR_RTOL * s[0]:
        raise DegenerateGeometry("image points are collinear or coincident")


def _candidates(corr: Correspondences, camera: CameraModel):
    _check_image_spread(corr)
    X = corr.points3d
    ctrl, alphas = _control_points(X)
    m = len(ctrl)
    x = (corr.points2d[:, 0] - camera.cx) / camera.fx
    y = (corr.points2d[:, 1] - camera.cy) / camera.fy
    sw = np.sqrt(corr.weights)
    n = len(X)
    M = np.zeros((2 * n, 3 * m))
    M[0::2, 0::3] = alphas
    M[0::2, 2::3] = -alphas * x[:, None]
    M[1::2, 1::3] = alphas
    M[1::2, 2::3] = -alphas * y[:, None]
    M[0::2] *= sw[:, None]
    M[1::2] *= sw[:, None]
    _, _, Vt = np.linalg.svd(M)
    V = Vt[::-1][:4].reshape(4, m, 3)

    pairs = list(combinations(range(m), 2))
    ia = [p[0] for p in pairs]
    ib = [p[1] for p in pairs]
    dV = V[:, ia] - V[:, ib]                 # (k, pairs, 3)
    rho = np.sum((ctrl[ia] - ctrl[ib]) ** 2, axis=1)
    G = np.einsum("kpc,lpc->pkl", dV, dV)
    L6 = np.stack([G[:, k, l] for k in range(4) for l in range(k, 4)], axis=1)

    found = []
    for N in (1, 2, 3):
        b = _betas_linearized(L6, rho, N)
        if b is None:
            continue
        # planar sets give only 3 distance constraints; refine just the used betas
        n_refine = 4 if m == 4 else N
        beta = np.zeros(4)
        beta[:N] = b
        beta[:n_refine] = _gauss_newton_betas(G[:, :n_refine, :n_refine], rho, beta[:n_refine])
        Cc = np.einsum("k,kjc->jc", beta, V)
        Pc = alphas @ Cc
        if Pc[:, 2].mean() < 0:
            Pc = -Pc
        for R, t, rms in _fit_camera_points(X, Pc, corr, camera):
            found.append((R, t, rms, Pc))
    if found:
        # near-affine views cannot tell the structure from its mirror image in depth;
        # noise can make EPnP land on the mirrored one, so also try reflecting it back
        best = min(found, key=lambda f: f[2])
        for R, t, rms in _fit_camera_points(X, _depth_mirror(best[3]), corr, camera):
            found.append((R, t, rms, None))
    return [f[:3] for f in found]


def _depth_mirror(Pc: np.ndarray) -> np.ndarray:
    """Reflect points through the plane at their centroid normal to the line of sight."""
    c = Pc.mean(axis=0)
    d = c / np.linalg.norm(c)
    return Pc - 2.0 * np.outer((Pc - c) @ d, d)


def _fit_camera_points(X, Pc, corr, camera):
    if np.any(Pc[:, 2] <= MIN_DEPTH):
        return
    R, t = absolute_orientation(X, Pc, corr.weights if corr.weights.sum() > 0 else None)
    try:
        rms = _weighted_rms(reprojection_residuals(R, t, corr, camera), corr.weights)
    except PointBehindCamera:
        return
    yield R, t, rms


def epnp_candidates(corr: Correspondences, camera: CameraModel) -> list[PnpSolution]:
    """All valid candidates: one per null-space dimension tried, plus the depth mirror of the best."""
    if corr.weights.sum() <= 0.0:
        raise UndefinedWeighting("all weights are zero")
    n_in = int(np.count_nonzero(corr.weights))
    return [PnpSolution(Pose.from_rt(R, t), rms, n_in) for R, t, rms in _candidates(corr, camera)]


def solve_epnp(corr: Correspondences, camera: CameraModel) -> PnpSolution:
    """EPnP; returns the candidate with the lowest reprojection RMS."""
    if corr.weights.sum() <= 0.0:
        raise UndefinedWeighting("all weights are zero")
    cands = _candidates(corr, camera)
    if not cands:
        raise NoValidSolution("every EPnP candidate places points behind the camera")
    R, t, rms = min(cands, key=lambda c: c[2])
    return PnpSolution(Pose.from_rt(R, t), rms, int(np.count_nonzero(corr.weights)))


def _pose_jacobian(R, t, corr, camera):
    P = corr.points3d @ R.T + t
    X, Y, Z = P.T
    n = len(P)
    J = np.zeros((2 * n, 6))
    du = np.column_stack((camera.fx / Z, np.zeros(n), -camera.fx * X / Z**2))
    dv = np.column_stack((np.zeros(n), camera.fy / Z, -camera.fy * Y / Z**2))
    RX = P - t
    for i in range(n):
        # left perturbation R <- exp(w) R: d(RX)/dw = -[RX]x
        dP_dw = -skew(RX[i])
        J[2 * i, :3] = du[i] @ dP_dw
        J[2 * i + 1, :3] = dv[i] @ dP_dw
        J[2 * i, 3:] = du[i]
        J[2 * i + 1, 3:] = dv[i]
    return J


def refine_gauss_newton(initial: PnpSolution, corr: Correspondences, camera: CameraModel,
                        max_iters: int = 10, tol: float = 1e-8) -> PnpSolution:
    """Polish a pose by Gauss-Newton on weighted pixel residuals.

    Steps that do not lower the RMS are halved up to a few times and then
    abandoned, so the RMS never increases.
    """
    if max_iters <= 0:
        return initial
    w = corr.weights
    sw = np.sqrt(np.repeat(w, 2))
    R, t = initial.pose.R, initial.pose.translation.copy()
    rms = _weighted_rms(reprojection_residuals(R, t, corr, camera), w)
    improved = False
    for _ in range(max_iters):
        r = reprojection_residuals(R, t, corr, camera).reshape(-1) * sw
        J = _pose_jacobian(R, t, corr, camera) * sw[:, None]
        step, *_ = np.linalg.lstsq(J, -r, rcond=None)
        accepted = False
        for _halving in range(4):
            R2 = rotvec_to_matrix(step[:3]) @ R
            t2 = t + step[3:]
            try:
                rms2 = _weighted_rms(reprojection_residuals(R2, t2, corr, camera), w)
            except PointBehindCamera:
                rms2 = np.inf
            if rms2 < rms:
                accepted = True
                break
            step = 0.5 * step
        if not accepted:
            break
        gain = rms - rms2
        R, t, rms = R2, t2, rms2
        improved = True
        if gain < tol:
            break
    if not improved:
        return initial
    U, _, Vt = np.linalg.svd(R)
    R = U @ Vt
    return PnpSolution(Pose.from_rt(R, t), rms, initial.num_inliers)


def solve_pnp(corr: Correspondences, camera: CameraModel, refine: bool = True,
              max_iters: int = 10, tol: float = 1e-8) -> PnpSolution:
    """EPnP, then (optionally) Gauss-Newton polish.

    With ``refine`` every EPnP candidate is polished and the lowest final RMS
    wins: at long range the best raw candidate can sit in the basin of a
    flipped local minimum that a worse-looking candidate avoids.
    """
    if not refine:
        return solve_epnp(corr, camera)
    cands = epnp_candidates(corr, camera)
    if not cands:
        raise NoValidSolution("every EPnP candidate places points behind the camera")
    polished = [refine_gauss_newton(c, corr, camera, max_iters=max_iters, tol=tol) for c in cands]
    return min(polished, key=lambda s: s.reprojection_rms)

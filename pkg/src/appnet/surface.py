"""Per-point surface descriptors: PCA normals and curvature.

Each point's local covariance over its k nearest neighbors is diagonalized
with a cyclic Jacobi sweep (vectorized across all points, branch-free, run in
float64). The normal is the eigenvector of the smallest eigenvalue, flipped
toward a fixed viewpoint; the curvature is the smallest eigenvalue's share of
the trace, which is 0 on planes and at most 1/3 for isotropic neighborhoods.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, knn

JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 32
DEGENERATE_TRACE = 1e-12


@dataclass
class SurfaceDescriptor:
    normals: np.ndarray  # (N, 3) unit vectors oriented toward the viewpoint
    curvature: np.ndarray  # (N, 1) in [0, 1/3]

    def feature_matrix(self, with_curvature: bool = True) -> np.ndarray:
        if with_curvature:
            return np.concatenate([self.normals, self.curvature], axis=1)
        return self.normals


def local_covariance(points: np.ndarray, neighbors: np.ndarray) -> np.ndarray:
    """Per-point covariance (1/k) sum_j (p_j - p_i)(p_j - p_i)^T over the
    k listed neighbors, centered on the point itself. Coincident
    neighborhoods produce the zero matrix; callers detect them by trace."""
    points = np.asarray(points, dtype=np.float64)
    neighbors = np.asarray(neighbors, dtype=np.int64)
    if neighbors.shape[1] < 3:
        raise ValueError("need k >= 3 neighbors for a covariance estimate")
    diffs = points[neighbors] - points[:, None, :]
    return np.einsum("nki,nkj->nij", diffs, diffs) / neighbors.shape[1]


def _jacobi_batch(mats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a batch of symmetric 3x3 matrices.

    Cyclic Jacobi over the pairs (0,1), (0,2), (1,2); every rotation uses the
    inner-angle root so off-diagonal mass decreases monotonically. Returns
    ascending eigenvalues (B, 3) and matching eigenvector columns (B, 3, 3).
    """
    a = np.array(mats, dtype=np.float64)
    b = a.shape[0]
    v = np.broadcast_to(np.eye(3), (b, 3, 3)).copy()
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.abs(a[:, [0, 0, 1], [1, 2, 2]]).max(initial=0.0)
        if off <= JACOBI_TOL:
            break
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = a[:, p, q]
            small = np.abs(apq) < 1e-300
            denom = np.where(small, 1.0, 2.0 * apq)
            tau = (a[:, q, q] - a[:, p, p]) / denom
            t = np.sign(tau) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            t = np.where(tau == 0.0, 1.0, t)
            t = np.where(small, 0.0, t)
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            j = np.broadcast_to(np.eye(3), (b, 3, 3)).copy()
            j[:, p, p] = c
            j[:, q, q] = c
            j[:, p, q] = s
            j[:, q, p] = -s
            a = np.matmul(np.matmul(j.transpose(0, 2, 1), a), j)
            v = np.matmul(v, j)
    diag = a[:, [0, 1, 2], [0, 1, 2]]
    order = np.argsort(diag, axis=1, kind="stable")
    eigvals = diag[np.arange(b)[:, None], order]
    eigvecs = v[np.arange(b)[:, None, None], np.arange(3)[None, :, None], order[:, None, :]]
    return eigvals, eigvecs


def sym3_eigen(c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and orthonormal eigenvector columns of one
    symmetric 3x3 matrix."""
    c = np.asarray(c, dtype=np.float64)
    if c.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got {c.shape}")
    if np.abs(c - c.T).max() > 1e-9:
        raise ValueError("matrix is not symmetric within 1e-9")
    eigvals, eigvecs = _jacobi_batch(c[None])
    return eigvals[0], eigvecs[0]


def estimate(cloud: PointCloud, k: int = 16, viewpoint=(0.0, 0.0, 0.0)) -> SurfaceDescriptor:
    """Normals and curvature for every point of the cloud.

    Neighborhoods come from a k-nearest query of the cloud against itself
    (each point is its own nearest neighbor and contributes nothing to its
    covariance). Normals with n . (viewpoint - p) < 0 are flipped; coincident
    neighborhoods fall back to the +z normal with zero curvature.
    """
    points = cloud.positions
    n = len(points)
    if not 3 <= k < n:
        raise ValueError(f"need N > k >= 3, got N={n}, k={k}")
    neighbors = knn(points, points, k)
    cov = local_covariance(points, neighbors)
    eigvals, eigvecs = _jacobi_batch(cov)

    normals = eigvecs[:, :, 0]
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    degenerate = eigvals.sum(axis=1) < DEGENERATE_TRACE
    safe = np.where(norms > 0, norms, 1.0)
    normals = normals / safe
    normals[degenerate] = (0.0, 0.0, 1.0)

    toward = np.asarray(viewpoint, dtype=np.float64) - points
    flip = (normals * toward).sum(axis=1) < 0.0
    normals[flip] *= -1.0

    trace = eigvals.sum(axis=1)
    sigma = np.where(degenerate, 0.0, eigvals[:, 0] / np.where(degenerate, 1.0, trace))
    sigma = np.clip(sigma, 0.0, 1.0 / 3.0)
    return SurfaceDescriptor(normals=normals, curvature=sigma[:, None])

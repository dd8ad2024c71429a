"""Decoder-side restoration of the enhancement-layer pixels missing from the epitome.

Each missing N x N patch is predicted from its co-located patch in the
upsampled base layer: its K nearest base-layer patches are searched among the
positions lying inside the epitome, and the paired (base, enhancement)
patches drive either a neighbor-embedding (E-LLE) or a local linear mapping
(E-LLM) estimate. Overlapping estimates are averaged.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericalError, ShapeError
from .image_core import PEAK, as_plane

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 1e-3
# Upper bound on the (queries x candidates) distance block held in memory.
_MAX_BLOCK_ELEMENTS = 1 << 22


class Method(str, Enum):
    LLE = "e-lle"
    LLM = "e-llm"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        v = str(value).lower().replace("_", "-")
        if not v.startswith("e-"):
            v = "e-" + v
        return cls(v)


@dataclass(frozen=True)
class RestorationParams:
    n: int = 8
    s: int = 3
    k: int = 20
    method: Method = Method.LLE
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if self.n < 1 or not 1 <= self.s <= self.n or self.k < 1 or self.lam < 0:
            raise ValueError(f"invalid restoration parameters: {self}")


@dataclass
class PatchDictionary:
    """Paired training patches, one vectorized patch per column."""

    m_y: np.ndarray   # (n*n, k) base-layer patches
    m_x: np.ndarray   # (n*n, k) enhancement-layer patches

    def __post_init__(self):
        if self.m_y.shape != self.m_x.shape:
            raise ShapeError(f"M_y {self.m_y.shape} and M_x {self.m_x.shape} differ")


# ---------------------------------------------------------------------------
# K-NN search


def qualifying_origins(mask: np.ndarray, n: int) -> np.ndarray:
    """Origins (raster order) of every n x n patch lying entirely inside ``mask``."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape[0] < n or mask.shape[1] < n:
        return np.empty((0, 2), dtype=np.int64)
    S = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    S[1:, 1:] = np.cumsum(np.cumsum(mask, 0), 1)
    inside = (S[n:, n:] - S[:-n, n:] - S[n:, :-n] + S[:-n, :-n]) == n * n
    return np.argwhere(inside)


class PatchIndex:
    """Exhaustive Euclidean K-NN over the patches of a plane at fixed origins."""

    def __init__(self, plane: np.ndarray, origins: np.ndarray, n: int):
        self.n = n
        self.origins = np.asarray(origins, dtype=np.int64).reshape(-1, 2)
        windows = sliding_window_view(as_plane(plane), (n, n))
        self.vectors = windows[self.origins[:, 0], self.origins[:, 1]].reshape(-1, n * n)
        self.sqnorms = np.einsum("ij,ij->i", self.vectors, self.vectors)

    def __len__(self) -> int:
        return len(self.origins)

    def query(self, ys: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Indices and squared distances of the ``k`` nearest candidates of each row of ``ys``.

        Ties are broken by candidate order. A fast BLAS pass shortlists
        candidates and the shortlist is re-ranked with exact distances.
        """
        ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        q = len(self)
        k = min(k, q)
        out_i = np.empty((len(ys), k), dtype=np.int64)
        out_d = np.empty((len(ys), k))
        if k == 0:
            return out_i, out_d
        step = max(1, _MAX_BLOCK_ELEMENTS // q)
        cmax = float(self.sqnorms.max())
        for s in range(0, len(ys), step):
            y = ys[s:s + step]
            yy = np.einsum("ij,ij->i", y, y)
            approx = yy[:, None] - 2.0 * (y @ self.vectors.T) + self.sqnorms[None, :]
            kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
            slack = 1e-9 * (yy + cmax) + 1e-9
            for j in range(len(y)):
                short = np.flatnonzero(approx[j] <= kth[j] + slack[j])
                d = np.sum((self.vectors[short] - y[j]) ** 2, axis=1)
                order = np.lexsort((short, d))[:k]
                out_i[s + j] = short[order]
                out_d[s + j] = d[order]
        return out_i, out_d


def knn_search(y, bl_up, epitome_mask, k: int, n: int) -> tuple[list[tuple[int, int]], bool]:
    """K nearest base-layer patches of ``y`` among patches fully inside the epitome.

    Returns ``(origins, degraded)``; ``degraded`` is True when fewer than
    ``k`` candidate positions exist, in which case all of them are returned.
    """
    origins = qualifying_origins(epitome_mask, n)
    index = PatchIndex(bl_up, origins, n)
    idx, _ = index.query(np.asarray(y, dtype=np.float64).reshape(1, -1), k)
    found = [tuple(map(int, origins[i])) for i in idx[0]]
    return found, len(origins) < k


# ---------------------------------------------------------------------------
# E-LLE


def _lle_weights_batch(ys: np.ndarray, m_y: np.ndarray, lam: float) -> np.ndarray:
    """ys: (B, d); m_y: (B, d, k) -> weights (B, k)."""
    z = m_y - ys[:, :, None]
    cov = np.einsum("bdi,bdj->bij", z, z)
    k = cov.shape[-1]
    tr = np.trace(cov, axis1=1, axis2=2)
    reg = cov + (lam * tr / k)[:, None, None] * np.eye(k)
    w = np.empty((len(ys), k))
    if lam == 0:
        rank = np.linalg.matrix_rank(cov, hermitian=True)
        if np.any((rank < k) & (tr > 0)):
            raise NumericalError("singular local covariance with lambda=0")
    # Zero local covariance: y coincides with every neighbor, any affine mix is exact.
    flat = tr == 0
    w[flat] = 1.0 / k
    live = ~flat
    if np.any(live):
        try:
            sol = np.linalg.solve(reg[live], np.ones((int(live.sum()), k, 1)))[..., 0]
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular local covariance; increase lambda") from exc
        total = sol.sum(axis=1)
        if not np.all(np.isfinite(sol)) or np.any(total == 0):
            raise NumericalError("degenerate LLE weights; increase lambda")
        w[live] = sol / total[:, None]
    return w


def lle_weights(y, m_y, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Affine weights reconstructing ``y`` from the columns of ``m_y``.

    Solves ``(D + lam * tr(D) / k * I) w = 1`` for the local covariance
    ``D = (M_y - y 1^T)^T (M_y - y 1^T)`` and rescales ``w`` to sum to one.
    """
    m_y = np.asarray(m_y, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if m_y.ndim != 2 or m_y.shape[0] != y.size:
        raise ShapeError(f"M_y {m_y.shape} incompatible with patch of size {y.size}")
    return _lle_weights_batch(y[None], m_y[None], lam)[0]


def lle_restore(w, m_x) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    m_x = np.asarray(m_x, dtype=np.float64)
    if m_x.ndim != 2 or m_x.shape[1] != w.size:
        raise ShapeError(f"{w.size} weights for M_x of shape {m_x.shape}")
    return m_x @ w


# ---------------------------------------------------------------------------
# E-LLM


def _llm_map_batch(m_y: np.ndarray, m_x: np.ndarray, lam: float) -> np.ndarray:
    """m_y, m_x: (B, d, k) -> P: (B, d, d) with P (G + mu I) = M_x M_y^T."""
    gram = m_y @ m_y.transpose(0, 2, 1)
    d = gram.shape[-1]
    mu = lam * np.trace(gram, axis1=1, axis2=2) / d
    a = gram + mu[:, None, None] * np.eye(d)
    if lam == 0 and np.any(np.linalg.matrix_rank(gram, hermitian=True) < d):
        raise NumericalError("rank-deficient Gram matrix with lambda=0")
    rhs = m_x @ m_y.transpose(0, 2, 1)
    try:
        # a is symmetric: P a = rhs  <=>  a P^T = rhs^T
        p_t = np.linalg.solve(a, rhs.transpose(0, 2, 1))
    except np.linalg.LinAlgError as exc:
        raise NumericalError("singular Gram matrix; increase lambda") from exc
    if not np.all(np.isfinite(p_t)):
        raise NumericalError("non-finite linear mapping; increase lambda")
    return p_t.transpose(0, 2, 1)


def llm_map(m_y, m_x, lam: float = DEFAULT_LAMBDA) -> np.ndarray:
    """Least-squares linear map P from base-layer to enhancement-layer patches.

    With ``lam == 0`` this is ``M_x M_y^T (M_y M_y^T)^-1`` and needs a full-rank
    Gram matrix; ``lam > 0`` adds ``lam * tr(G) / d`` to its diagonal.
    """
    m_y = np.asarray(m_y, dtype=np.float64)
    m_x = np.asarray(m_x, dtype=np.float64)
    if m_y.ndim != 2 or m_y.shape != m_x.shape:
        raise ShapeError(f"M_y {m_y.shape} and M_x {m_x.shape} differ")
    return _llm_map_batch(m_y[None], m_x[None], lam)[0]


def llm_restore(p, y) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if p.ndim != 2 or p.shape[1] != y.size:
        raise ShapeError(f"map {p.shape} incompatible with patch of size {y.size}")
    return p @ y


# ---------------------------------------------------------------------------
# Full-plane restoration


def grid_positions(length: int, n: int, s: int) -> np.ndarray:
    """Patch origins every ``s`` pixels, plus a final origin flush with the border."""
    pos = list(range(0, length - n + 1, s))
    if pos[-1] != length - n:
        pos.append(length - n)
    return np.array(pos, dtype=np.int64)


def processed_origins(mask: np.ndarray, n: int, s: int) -> np.ndarray:
    """Grid origins whose patch contains at least one non-epitome pixel."""
    h, w = mask.shape
    rr, cc = np.meshgrid(grid_positions(h, n, s), grid_positions(w, n, s), indexing="ij")
    origins = np.stack([rr.ravel(), cc.ravel()], axis=1)
    S = np.zeros((h + 1, w + 1), dtype=np.int64)
    S[1:, 1:] = np.cumsum(np.cumsum(mask, 0), 1)
    r, c = origins[:, 0], origins[:, 1]
    inside = S[r + n, c + n] - S[r, c + n] - S[r + n, c] + S[r, c]
    return origins[inside < n * n]


def _restore_chunk(ys, nbr, index_y, index_x, params):
    """Estimates (B, n*n) for query patches ``ys`` with neighbor indices ``nbr``."""
    m_y = index_y.vectors[nbr].transpose(0, 2, 1)
    m_x = index_x[nbr].transpose(0, 2, 1)
    if params.method is Method.LLE:
        w = _lle_weights_batch(ys, m_y, params.lam)
        return np.einsum("bdk,bk->bd", m_x, w)
    p = _llm_map_batch(m_y, m_x, params.lam)
    return np.einsum("bij,bj->bi", p, ys)


def restore_el(bl_up, el_epitome, mask, params: RestorationParams = RestorationParams(),
               peak: float = PEAK, threads: int = 1,
               diagnostics: list | None = None) -> np.ndarray:
    """Fill the non-epitome pixels of ``el_epitome`` from the upsampled base layer.

    Epitome pixels are returned verbatim. Non-epitome pixels receive the
    average of the overlapping patch estimates (clamped to ``[0, peak]``);
    a pixel no processed patch covers keeps its ``bl_up`` value. When
    ``diagnostics`` is a list, one record per processed patch is appended.
    """
    bl_up = as_plane(bl_up)
    el_epitome = as_plane(el_epitome)
    mask = np.asarray(mask, dtype=bool)
    if bl_up.shape != el_epitome.shape or mask.shape != bl_up.shape:
        raise ShapeError("bl_up, el_epitome and mask must share dimensions")
    n = params.n
    out = el_epitome.copy()
    if mask.all():
        return out

    cand = qualifying_origins(mask, n)
    todo = processed_origins(mask, n, params.s)
    if len(cand) == 0:
        log.warning("no epitome patch available for K-NN; non-epitome pixels keep bl_up")
        out[~mask] = bl_up[~mask]
        return out
    if len(cand) < params.k:
        log.warning("only %d K-NN candidates for k=%d; restoring in degraded mode",
                    len(cand), params.k)
    index_y = PatchIndex(bl_up, cand, n)
    index_x = sliding_window_view(el_epitome, (n, n))[cand[:, 0], cand[:, 1]].reshape(-1, n * n)
    queries = sliding_window_view(bl_up, (n, n))[todo[:, 0], todo[:, 1]].reshape(-1, n * n)
    k = min(params.k, len(cand))

    chunk = 256
    starts = list(range(0, len(todo), chunk))

    def work(s):
        ys = queries[s:s + chunk]
        nbr, dist = index_y.query(ys, k)
        return nbr, dist, _restore_chunk(ys, nbr, index_y, index_x, params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]

    acc = np.zeros_like(bl_up)
    cnt = np.zeros(bl_up.shape, dtype=np.int64)
    keep = ~mask
    # Fixed accumulation order keeps the output independent of the thread count.
    for s, (nbr, dist, est) in zip(starts, results):
        for j in range(len(est)):
            r, c = todo[s + j]
            sl = (slice(r, r + n), slice(c, c + n))
            m = keep[sl]
            acc[sl][m] += est[j].reshape(n, n)[m]
            cnt[sl][m] += 1
            if diagnostics is not None:
                diagnostics.append({"row": int(r), "col": int(c), "method": params.method.value,
                                    "distances": np.sqrt(dist[j]).tolist()})
    covered = keep & (cnt > 0)
    out[covered] = np.clip(acc[covered] / cnt[covered], 0.0, peak)
    holes = keep & (cnt == 0)
    out[holes] = bl_up[holes]
    return out

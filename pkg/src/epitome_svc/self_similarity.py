"""Two-step clustering self-similarity search.

Blocks of the grid are first grouped into clusters whose centroid lies within
the assignation threshold of every member. For each cluster, the block closest
to the centroid is matched exhaustively against every patch position of the
image; the resulting list is handed to all members and re-verified per member
against the matching threshold, so every stored (block, patch) pair truly
satisfies ``mse <= eps_m``.

Match lists and reverse lists are stored in compressed (CSR) form. Patch
positions are flattened as ``row * width + col`` of the source image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import fft as sp_fft

from .errors import IntegrityError
from .image_core import BlockGrid, PixelRegion, as_plane

ASSIGNATION_RATIO = 0.5


@dataclass
class BlockClustering:
    labels: np.ndarray            # (n_blocks,) cluster index of each block
    centroids: np.ndarray         # (n_clusters, b*b)
    representatives: np.ndarray   # (n_clusters,) block index closest to the centroid
    assignation_threshold: float

    @property
    def n_clusters(self) -> int:
        return len(self.centroids)

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)


def cluster_blocks(grid: BlockGrid, image, eps_a: float) -> BlockClustering:
    """Greedy leader clustering of the grid blocks in raster order.

    A block joins the first cluster (in creation order) whose centroid is
    within ``eps_a`` of it, provided the updated centroid stays within
    ``eps_a`` of every member; otherwise it founds a new cluster.
    """
    if eps_a < 0:
        raise ValueError("assignation threshold must be >= 0")
    vecs = grid.block_vectors(as_plane(image))
    n, dim = vecs.shape
    labels = np.empty(n, dtype=np.int64)
    sums = np.zeros((n, dim))
    centroids = np.zeros((n, dim))
    counts = np.zeros(n, dtype=np.int64)
    members: list[list[int]] = []
    n_clusters = 0
    for i in range(n):
        v = vecs[i]
        joined = -1
        if n_clusters:
            d = np.mean((centroids[:n_clusters] - v) ** 2, axis=1)
            for c in np.flatnonzero(d <= eps_a):
                new_centroid = (sums[c] + v) / (counts[c] + 1)
                if np.mean((v - new_centroid) ** 2) > eps_a:
                    continue
                m = vecs[members[c]]
                if np.max(np.mean((m - new_centroid) ** 2, axis=1)) <= eps_a:
                    joined = int(c)
                    break
        if joined < 0:
            joined = n_clusters
            n_clusters += 1
            members.append([])
        c = joined
        members[c].append(i)
        sums[c] += v
        counts[c] += 1
        centroids[c] = sums[c] / counts[c]
        labels[i] = c

    centroids = centroids[:n_clusters].copy()
    reps = np.empty(n_clusters, dtype=np.int64)
    for c, idx in enumerate(members):
        d = np.mean((vecs[idx] - centroids[c]) ** 2, axis=1)
        reps[c] = idx[int(np.argmin(d))]
    return BlockClustering(labels, centroids, reps, float(eps_a))


class PatchSearcher:
    """Exhaustive SSD search of one ``b``x``b`` template over every position of an image.

    A circular FFT correlation gives approximate SSDs for all positions at
    once; anything near the threshold is re-checked exactly so the returned
    values never depend on FFT round-off.
    """

    def __init__(self, image, block_size: int):
        self.image = as_plane(image)
        self.b = block_size
        h, w = self.image.shape
        self.shape = (h, w)
        self.pos_shape = (h - block_size + 1, w - block_size + 1)
        self._windows = sliding_window_view(self.image, (block_size, block_size))
        self._fimage = sp_fft.rfft2(self.image)
        sq = np.pad(np.cumsum(np.cumsum(self.image ** 2, 0), 1), ((1, 0), (1, 0)))
        b = block_size
        self._energy = sq[b:, b:] - sq[:-b, b:] - sq[b:, :-b] + sq[:-b, :-b]
        # FFT round-off scales with the signal energy involved.
        self._tol = 1e-9 * float(self.image.size) * max(1.0, float(np.max(np.abs(self.image)))) ** 2

    def approx_ssd(self, template: np.ndarray) -> np.ndarray:
        t = np.zeros(self.shape)
        t[:self.b, :self.b] = template.reshape(self.b, self.b)
        corr = sp_fft.irfft2(self._fimage * np.conj(sp_fft.rfft2(t)), s=self.shape)
        ph, pw = self.pos_shape
        return self._energy - 2.0 * corr[:ph, :pw] + float(np.sum(template ** 2))

    def exact_ssd(self, template: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        out = np.empty(len(rows))
        t = template.reshape(self.b, self.b)
        step = max(1, 2 ** 22 // (self.b * self.b))
        for s in range(0, len(rows), step):
            p = self._windows[rows[s:s + step], cols[s:s + step]]
            out[s:s + step] = np.sum((p - t) ** 2, axis=(1, 2))
        return out

    def search(self, template, max_ssd: float, step: int = 1,
               within: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Positions (flat, raster order) whose SSD to ``template`` is ``<= max_ssd``.

        ``within`` restricts the scan to a sorted array of flat positions.
        Returns ``(positions, ssd)``.
        """
        template = np.asarray(template, dtype=np.float64).reshape(-1)
        ph, pw = self.pos_shape
        approx = self.approx_ssd(template)
        if step > 1:
            keep = np.zeros(self.pos_shape, dtype=bool)
            keep[::step, ::step] = True
            approx = np.where(keep, approx, np.inf)
        flat = approx.reshape(-1)
        if within is None:
            cand = np.flatnonzero(flat <= max_ssd + self._tol)
        else:
            cand = within[flat[within] <= max_ssd + self._tol]
        rows, cols = np.divmod(cand, pw)
        ssd = self.exact_ssd(template, rows, cols)
        ok = ssd <= max_ssd
        # Flat index over the position grid -> flat index over the image.
        return (rows[ok] * self.shape[1] + cols[ok]).astype(np.int64), ssd[ok]


def match_patches_for_cluster(rep_block, image, eps_m: float, search_step: int = 1,
                              searcher: PatchSearcher | None = None) -> list[PixelRegion]:
    """Every patch position (scanned at ``search_step``) with MSE to ``rep_block`` <= ``eps_m``.

    ``rep_block`` is either a :class:`PixelRegion` of ``image`` or a square array.
    """
    if eps_m < 0:
        raise ValueError("matching threshold must be >= 0")
    if search_step < 1:
        raise ValueError("search_step must be >= 1")
    image = as_plane(image)
    if isinstance(rep_block, PixelRegion):
        template = image[rep_block.slices()]
    else:
        template = np.asarray(rep_block, dtype=np.float64)
    b = template.shape[0]
    searcher = searcher or PatchSearcher(image, b)
    pos, _ = searcher.search(template, eps_m * b * b, search_step)
    rows, cols = np.divmod(pos, image.shape[1])
    return [PixelRegion(int(r), int(c), b, b) for r, c in zip(rows, cols)]


@dataclass
class MatchLists:
    """Per-block match lists ML(B_i) in CSR layout.

    ``positions[indptr[i]:indptr[i+1]]`` are the flat origins matched to block
    ``i`` in raster order and ``mse`` holds the corresponding errors.
    """

    shape: tuple[int, int]
    block_size: int
    threshold: float
    indptr: np.ndarray
    positions: np.ndarray
    mse: np.ndarray

    @property
    def n_blocks(self) -> int:
        return len(self.indptr) - 1

    @property
    def n_entries(self) -> int:
        return len(self.positions)

    def block_ids(self) -> np.ndarray:
        """Block index of every entry."""
        return np.repeat(np.arange(self.n_blocks), np.diff(self.indptr))

    def origins(self, block: int) -> np.ndarray:
        p = self.positions[self.indptr[block]:self.indptr[block + 1]]
        return np.stack(np.divmod(p, self.shape[1]), axis=1)

    def entry_mse(self, block: int) -> np.ndarray:
        return self.mse[self.indptr[block]:self.indptr[block + 1]]

    def for_block(self, block: int) -> list[PixelRegion]:
        b = self.block_size
        return [PixelRegion(int(r), int(c), b, b) for r, c in self.origins(block)]

    def as_dict(self) -> dict[int, list[tuple[int, int]]]:
        return {i: [tuple(map(int, o)) for o in self.origins(i)] for i in range(self.n_blocks)}

    @classmethod
    def from_entries(cls, shape, block_size, threshold, blocks, positions, mse, n_blocks):
        blocks = np.asarray(blocks, dtype=np.int64)
        positions = np.asarray(positions, dtype=np.int64)
        order = np.lexsort((positions, blocks))
        blocks, positions = blocks[order], positions[order]
        mse = np.asarray(mse, dtype=np.float64)[order]
        keep = np.ones(len(blocks), dtype=bool)
        keep[1:] = (blocks[1:] != blocks[:-1]) | (positions[1:] != positions[:-1])
        blocks, positions, mse = blocks[keep], positions[keep], mse[keep]
        indptr = np.zeros(n_blocks + 1, dtype=np.int64)
        np.cumsum(np.bincount(blocks, minlength=n_blocks), out=indptr[1:])
        return cls(tuple(shape), int(block_size), float(threshold), indptr, positions, mse)

    def to_json(self) -> dict:
        return {
            "shape": list(self.shape),
            "block_size": self.block_size,
            "threshold": self.threshold,
            "lists": {str(i): [[int(r), int(c)] for r, c in self.origins(i)]
                      for i in range(self.n_blocks)},
            "mse": {str(i): self.entry_mse(i).tolist() for i in range(self.n_blocks)},
        }

    @classmethod
    def from_json(cls, data: dict) -> "MatchLists":
        shape = tuple(data["shape"])
        n = len(data["lists"])
        blocks, pos, err = [], [], []
        for i in range(n):
            origins = data["lists"][str(i)]
            blocks += [i] * len(origins)
            pos += [r * shape[1] + c for r, c in origins]
            err += data["mse"][str(i)]
        return cls.from_entries(shape, data["block_size"], data["threshold"],
                                blocks, pos, err, n)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> "MatchLists":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass
class ReverseLists:
    """RL(M_j): blocks representable by each distinct matching patch, CSR by patch."""

    shape: tuple[int, int]
    block_size: int
    keys: np.ndarray      # sorted distinct flat positions
    indptr: np.ndarray
    blocks: np.ndarray
    mse: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)

    def blocks_for(self, origin: tuple[int, int]) -> np.ndarray:
        key = origin[0] * self.shape[1] + origin[1]
        j = np.searchsorted(self.keys, key)
        if j == len(self.keys) or self.keys[j] != key:
            return np.empty(0, dtype=np.int64)
        return self.blocks[self.indptr[j]:self.indptr[j + 1]]

    def as_dict(self) -> dict[tuple[int, int], list[int]]:
        out = {}
        for j, key in enumerate(self.keys):
            r, c = divmod(int(key), self.shape[1])
            out[(r, c)] = self.blocks[self.indptr[j]:self.indptr[j + 1]].tolist()
        return out

    def to_json(self) -> dict:
        return {
            "shape": list(self.shape),
            "block_size": self.block_size,
            "lists": [{"origin": list(divmod(int(k), self.shape[1])),
                       "blocks": self.blocks[self.indptr[j]:self.indptr[j + 1]].tolist()}
                      for j, k in enumerate(self.keys)],
        }


def build_reverse_lists(ml: MatchLists) -> ReverseLists:
    blocks = ml.block_ids()
    order = np.argsort(ml.positions, kind="stable")
    pos = ml.positions[order]
    keys, counts = np.unique(pos, return_counts=True)
    indptr = np.zeros(len(keys) + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    return ReverseLists(ml.shape, ml.block_size, keys, indptr, blocks[order], ml.mse[order])


def match_lists_from_reverse(rl: ReverseLists, n_blocks: int, threshold: float) -> MatchLists:
    """Invert reverse lists back into match lists."""
    pos = np.repeat(rl.keys, np.diff(rl.indptr))
    return MatchLists.from_entries(rl.shape, rl.block_size, threshold,
                                   rl.blocks, pos, rl.mse, n_blocks)


def find_matches(image, block_size: int, eps_m: float, search_step: int = 1,
                 clustering: BlockClustering | None = None,
                 grid: BlockGrid | None = None) -> tuple[MatchLists, BlockClustering]:
    """Build ML(B_i) for every block of ``image`` with the two-step clustered search."""
    if eps_m < 0:
        raise ValueError("matching threshold must be >= 0")
    image = as_plane(image)
    grid = grid or BlockGrid.for_plane(image, block_size)
    if clustering is None:
        clustering = cluster_blocks(grid, image, ASSIGNATION_RATIO * eps_m)
    b = block_size
    max_ssd = eps_m * b * b
    vecs = grid.block_vectors(image)
    origins = grid.origins()
    self_pos = origins[:, 0] * image.shape[1] + origins[:, 1]
    searcher = PatchSearcher(image, b)
    pw = searcher.pos_shape[1]

    all_blocks, all_pos, all_ssd = [], [], []
    for c in range(clustering.n_clusters):
        members = clustering.members(c)
        rep = clustering.representatives[c]
        rep_pos, rep_ssd = searcher.search(vecs[rep], max_ssd, search_step)
        rows, cols = np.divmod(rep_pos, image.shape[1])
        grid_idx = rows * pw + cols
        direct = len(rep_pos) * b * b <= 4 * image.size
        for m in members:
            if m == rep:
                pos, ssd = rep_pos, rep_ssd
            elif direct:
                ssd = searcher.exact_ssd(vecs[m], rows, cols)
                ok = ssd <= max_ssd
                pos, ssd = rep_pos[ok], ssd[ok]
            else:
                pos, ssd = searcher.search(vecs[m], max_ssd, within=grid_idx)
            all_blocks.append(np.full(len(pos) + 1, m, dtype=np.int64))
            all_pos.append(np.append(pos, self_pos[m]))
            all_ssd.append(np.append(ssd, 0.0))

    ml = MatchLists.from_entries(
        image.shape, b, eps_m,
        np.concatenate(all_blocks), np.concatenate(all_pos),
        np.concatenate(all_ssd) / (b * b), len(grid),
    )
    return ml, clustering


def check_match_lists(ml: MatchLists, image) -> None:
    """Raise :class:`IntegrityError` unless every stored pair satisfies ``mse <= eps_m``."""
    image = as_plane(image)
    b = ml.block_size
    windows = sliding_window_view(image, (b, b))
    grid = BlockGrid(ml.shape, b)
    vecs = grid.block_vectors(image)
    blocks = ml.block_ids()
    r, c = np.divmod(ml.positions, ml.shape[1])
    err = np.mean((windows[r, c].reshape(len(r), -1) - vecs[blocks]) ** 2, axis=1)
    if np.any(err > ml.threshold) or not np.allclose(err, ml.mse, rtol=0, atol=1e-9):
        raise IntegrityError("match list entry violates the matching threshold")
    for i in range(ml.n_blocks):
        if not np.any(ml.positions[ml.indptr[i]:ml.indptr[i + 1]] ==
                      grid.blocks[i].row * ml.shape[1] + grid.blocks[i].col):
            raise IntegrityError(f"block {i} is missing its self-match")

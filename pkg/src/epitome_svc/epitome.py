"""Greedy epitome chart growth, block-grid padding and reconstruction.

Charts are grown one matching patch at a time. Every step evaluates all valid
candidate patches and keeps the one minimizing the MSE between the input
image and its reconstruction from the epitome; pixels that cannot be
reconstructed yet count as the maximal error ``peak**2``. A candidate makes
reconstructable every unassigned block that owns a matching patch lying inside
the epitome once the candidate is added (its reverse list plus the inferred
blocks straddling the chart and the extension).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from numba import njit
from scipy import ndimage

from .errors import IntegrityError, ShapeError
from .image_core import PEAK, BlockGrid, PixelRegion, as_plane, write_pgm, read_pgm
from .self_similarity import MatchLists, ReverseLists, build_reverse_lists, find_matches

log = logging.getLogger(__name__)

EIGHT_NEIGHBORHOOD = np.ones((3, 3), dtype=bool)


@dataclass
class Epitome:
    """Epitome charts over the source image.

    ``chart_map`` holds the chart index of every source pixel, -1 outside the
    epitome.
    """

    chart_map: np.ndarray
    block_size: int
    threshold: float
    padded_to: int | None = None

    @property
    def shape(self) -> tuple[int, int]:
        return self.chart_map.shape

    @property
    def mask(self) -> np.ndarray:
        return self.chart_map >= 0

    @property
    def n_charts(self) -> int:
        return int(self.chart_map.max()) + 1 if self.chart_map.size else 0

    @property
    def charts(self) -> list[np.ndarray]:
        """Boolean mask of each chart."""
        return [self.chart_map == k for k in range(self.n_charts)]

    @property
    def fraction(self) -> float:
        """Epitome size as a percentage of the image."""
        return 100.0 * float(np.count_nonzero(self.mask)) / self.chart_map.size

    def chart_boxes(self) -> list[list[int]]:
        """[row, col, height, width] bounding box of each chart."""
        boxes = []
        for sl in ndimage.find_objects(self.chart_map + 1):
            if sl is None:
                continue
            boxes.append([sl[0].start, sl[1].start,
                          sl[0].stop - sl[0].start, sl[1].stop - sl[1].start])
        return boxes


@dataclass
class AssignationMap:
    """Origin of the epitome patch reconstructing each block (-1 when unassigned)."""

    block_size: int
    origins: np.ndarray   # (n_blocks, 2)
    mse: np.ndarray       # (n_blocks,)

    @classmethod
    def empty(cls, n_blocks: int, block_size: int) -> "AssignationMap":
        return cls(block_size, np.full((n_blocks, 2), -1, dtype=np.int64),
                   np.full(n_blocks, np.nan))

    @property
    def complete(self) -> bool:
        return bool(np.all(self.origins[:, 0] >= 0))

    def to_json(self) -> dict:
        return {str(i): [int(r), int(c)] for i, (r, c) in enumerate(self.origins)}


# ---------------------------------------------------------------------------
# Scoring kernels


@njit(cache=True)
def _rect_count(S, r, c, h, w):
    return S[r + h, c + w] - S[r, c + w] - S[r + h, c] + S[r, c]


@njit(cache=True)
def _fitting_blocks(r, c, b, nonep, rl_start, rl_count, rl_blocks, rl_mse, alive,
                    only_self, stamp, tag, best, best_pos, touched, img_w):
    """Collect the alive blocks reconstructable once patch (r, c) joins the epitome.

    ``nonep`` is the integral image of the non-epitome indicator. For each
    touched block the lowest-MSE fitting patch is kept in ``best``/``best_pos``
    (ties go to the first patch in raster order). Returns the number of
    touched blocks written to ``touched``.
    """
    ph, pw = rl_start.shape
    n = 0
    lo = 0 if only_self else b - 1
    for dr in range(-lo, lo + 1):
        pr = r + dr
        if pr < 0 or pr >= ph:
            continue
        r0 = max(r, pr)
        ih = min(r, pr) + b - r0
        for dc in range(-lo, lo + 1):
            pc = c + dc
            if pc < 0 or pc >= pw:
                continue
            cnt = rl_count[pr, pc]
            if cnt == 0:
                continue
            if dr != 0 or dc != 0:
                c0 = max(c, pc)
                iw = min(c, pc) + b - c0
                inter = _rect_count(nonep, r0, c0, ih, iw)
                # p must add new pixels and lie inside epitome + candidate.
                if inter == 0 or _rect_count(nonep, pr, pc, b, b) != inter:
                    continue
            start = rl_start[pr, pc]
            pos = pr * img_w + pc
            for e in range(start, start + cnt):
                blk = rl_blocks[e]
                if not alive[blk]:
                    continue
                err = rl_mse[e]
                if stamp[blk] != tag:
                    stamp[blk] = tag
                    best[blk] = err
                    best_pos[blk] = pos
                    touched[n] = blk
                    n += 1
                elif err < best[blk]:
                    best[blk] = err
                    best_pos[blk] = pos
    return n


@njit(cache=True)
def _score_kernel(cand_r, cand_c, b, nonep, rl_start, rl_count, rl_blocks, rl_mse,
                  alive, only_self, stamp, tag0, best, best_pos, touched, img_w, unit):
    m = len(cand_r)
    gains = np.zeros(m)
    counts = np.zeros(m, dtype=np.int64)
    for i in range(m):
        n = _fitting_blocks(cand_r[i], cand_c[i], b, nonep, rl_start, rl_count,
                            rl_blocks, rl_mse, alive, only_self, stamp, tag0 + i,
                            best, best_pos, touched, img_w)
        g = 0.0
        for j in range(n):
            g += unit - best[touched[j]] * b * b
        gains[i] = g
        counts[i] = n
    return gains, counts


# ---------------------------------------------------------------------------
# Growth state


def _integral(mask: np.ndarray) -> np.ndarray:
    S = np.zeros((mask.shape[0] + 1, mask.shape[1] + 1), dtype=np.int64)
    np.cumsum(np.cumsum(mask, axis=0, dtype=np.int64), axis=1, out=S[1:, 1:])
    return S


def _window_counts(S: np.ndarray, b: int) -> np.ndarray:
    """Number of set pixels in every b x b window, indexed by window origin."""
    return S[b:, b:] - S[:-b, b:] - S[b:, :-b] + S[:-b, :-b]


@dataclass
class Candidate:
    """Candidate region: a matching patch minus the pixels already in the epitome."""

    origin: tuple[int, int]
    chart: int | None   # chart to extend; None initializes a new chart


class GrowthState:
    """Running epitome, reconstruction and assignation map during chart growth."""

    def __init__(self, image, grid: BlockGrid, ml: MatchLists, rl: ReverseLists,
                 peak: float = PEAK):
        self.image = as_plane(image)
        self.grid = grid
        self.ml = ml
        self.rl = rl
        self.peak = float(peak)
        self.b = b = grid.block_size
        h, w = self.image.shape
        self.pos_shape = (h - b + 1, w - b + 1)
        self.chart_map = np.full((h, w), -1, dtype=np.int32)
        n = len(grid)
        self.amap = AssignationMap.empty(n, b)
        self.alive = np.ones(n, dtype=np.bool_)
        self.sse = 0.0
        self.unit = float(b * b) * self.peak ** 2

        rows, cols = np.divmod(rl.keys, w)
        self.rl_start = np.zeros(self.pos_shape, dtype=np.int64)
        self.rl_count = np.zeros(self.pos_shape, dtype=np.int64)
        self.rl_start[rows, cols] = rl.indptr[:-1]
        self.rl_count[rows, cols] = np.diff(rl.indptr)
        self.rl_blocks = rl.blocks.astype(np.int64)
        self.rl_mse = rl.mse.astype(np.float64)
        self._stamp = np.full(n, -1, dtype=np.int64)
        self._tag = 0
        self._best = np.zeros(n)
        self._best_pos = np.zeros(n, dtype=np.int64)
        self._touched = np.zeros(n, dtype=np.int64)
        self._refresh()

    # -- bookkeeping --------------------------------------------------------

    def _refresh(self) -> None:
        mask = self.chart_map >= 0
        self.nonep = _integral(~mask)
        self.dilated = ndimage.binary_dilation(mask, EIGHT_NEIGHBORHOOD)

    @property
    def mask(self) -> np.ndarray:
        return self.chart_map >= 0

    @property
    def n_unassigned(self) -> int:
        return int(np.count_nonzero(self.alive))

    @property
    def current_mse(self) -> float:
        missing = self.n_unassigned * self.b * self.b * self.peak ** 2
        return (self.sse + missing) / self.image.size

    def epitome(self) -> Epitome:
        return Epitome(self.chart_map.copy(), self.b, self.ml.threshold)

    def reconstruction(self) -> np.ndarray:
        """Current I': assigned blocks copied from their patches, others left at 0."""
        out = np.zeros_like(self.image)
        b = self.b
        for blk, (r, c) in zip(self.grid.blocks, self.amap.origins):
            if r >= 0:
                out[blk.slices()] = self.image[r:r + b, c:c + b]
        return out

    # -- candidates ---------------------------------------------------------

    def enumerate_candidates(self, chart: int | None) -> list[Candidate]:
        """Valid candidate regions for extending ``chart`` or, with None, for a new chart.

        Only patches that appear in some match list qualify. Extension
        candidates touch ``chart`` (8-neighborhood) and are not fully inside
        the epitome; initialization candidates are disjoint from, and not
        adjacent to, every chart.
        """
        return [Candidate(o, chart) for o in self._candidate_origins(chart)]

    def _candidate_origins(self, chart: int | None, any_chart: bool = False) -> list[tuple[int, int]]:
        b = self.b
        has_list = self.rl_count > 0
        if chart is None and not any_chart:
            near = _window_counts(_integral(self.dilated), b)
            ok = has_list & (near == 0)
        else:
            new = _window_counts(self.nonep, b)
            if any_chart:
                touch = self.dilated
            else:
                touch = ndimage.binary_dilation(self.chart_map == chart, EIGHT_NEIGHBORHOOD)
            near = _window_counts(_integral(touch), b)
            ok = has_list & (new > 0) & (near > 0)
        r, c = np.nonzero(ok)
        return list(zip(r.tolist(), c.tolist()))

    def _score(self, origins: np.ndarray, only_self: bool) -> tuple[np.ndarray, np.ndarray]:
        if len(origins) == 0:
            return np.zeros(0), np.zeros(0, dtype=np.int64)
        gains, counts = _score_kernel(
            origins[:, 0].astype(np.int64), origins[:, 1].astype(np.int64), self.b, self.nonep,
            self.rl_start, self.rl_count, self.rl_blocks, self.rl_mse, self.alive, only_self,
            self._stamp, self._tag, self._best, self._best_pos, self._touched,
            self.image.shape[1], self.unit)
        self._tag += len(origins)
        return gains, counts

    def score_candidate(self, cand: Candidate | tuple[int, int]) -> float:
        """Global MSE(I, I'_m) if the candidate were added; the state is unchanged."""
        origin = cand.origin if isinstance(cand, Candidate) else cand
        gains, _ = self._score(np.array([origin], dtype=np.int64), only_self=False)
        missing = self.n_unassigned * self.unit
        return float((self.sse + missing - gains[0]) / self.image.size)

    def commit(self, origin: tuple[int, int], chart: int) -> int:
        """Add the candidate to ``chart``, assign the blocks it completes, return their count."""
        r, c = origin
        b = self.b
        n = _fitting_blocks(r, c, b, self.nonep, self.rl_start, self.rl_count, self.rl_blocks,
                            self.rl_mse, self.alive, False, self._stamp, self._tag,
                            self._best, self._best_pos, self._touched, self.image.shape[1])
        self._tag += 1
        region = self.chart_map[r:r + b, c:c + b]
        region[region < 0] = chart
        blocks = self._touched[:n].copy()
        w = self.image.shape[1]
        self.amap.origins[blocks, 0], self.amap.origins[blocks, 1] = np.divmod(self._best_pos[blocks], w)
        self.amap.mse[blocks] = self._best[blocks]
        self.alive[blocks] = False
        self.sse += float(np.sum(self._best[blocks])) * b * b
        self._refresh()
        return n

    def best_candidate(self, chart: int | None, any_chart: bool = False):
        """Arg-min of the global MSE over valid candidates; ties go to the lowest origin.

        Candidates completing no block are not valid. Returns ``(origin, score)``
        or None.
        """
        origins = np.array(self._candidate_origins(chart, any_chart), dtype=np.int64).reshape(-1, 2)
        gains, counts = self._score(origins, only_self=chart is None and not any_chart)
        valid = np.flatnonzero(counts > 0)
        if len(valid) == 0:
            return None
        i = valid[int(np.argmax(gains[valid]))]
        missing = self.n_unassigned * self.unit
        score = float((self.sse + missing - gains[i]) / self.image.size)
        return (int(origins[i, 0]), int(origins[i, 1])), score


StepCallback = Callable[[GrowthState, str, tuple[int, int], float, int], None]


def grow_epitome(image, grid: BlockGrid, ml: MatchLists, rl: ReverseLists | None = None,
                 peak: float = PEAK, on_step: StepCallback | None = None
                 ) -> tuple[Epitome, AssignationMap]:
    """Grow epitome charts until every block of ``grid`` is reconstructed.

    The current chart is extended while a valid extension exists; then a new
    chart is initialized at a location disconnected from all charts. If no
    such location is left, the best candidate touching any chart extends
    that chart instead. ``on_step(state, mode, origin, score, chart)`` is
    called before each commit with ``mode`` one of ``"extend"``, ``"init"``
    or ``"fallback"``.
    """
    if rl is None:
        rl = build_reverse_lists(ml)
    counts = np.diff(ml.indptr)
    if np.any(counts == 0):
        raise IntegrityError("every block needs a non-empty match list")
    state = GrowthState(image, grid, ml, rl, peak)
    current: int | None = None
    n_charts = 0
    while state.n_unassigned:
        if current is not None:
            found = state.best_candidate(current)
            if found is not None:
                origin, score = found
                if on_step:
                    on_step(state, "extend", origin, score, current)
                state.commit(origin, current)
                continue
            current = None
        found = state.best_candidate(None)
        if found is not None:
            origin, score = found
            current = n_charts
            n_charts += 1
            if on_step:
                on_step(state, "init", origin, score, current)
            state.commit(origin, current)
            continue
        found = state.best_candidate(None, any_chart=True)
        if found is None:
            raise IntegrityError("chart growth stalled with unassigned blocks")
        origin, score = found
        r, c = origin
        b = grid.block_size
        ring = state.chart_map[max(r - 1, 0):r + b + 1, max(c - 1, 0):c + b + 1]
        current = int(ring[ring >= 0].min())
        if on_step:
            on_step(state, "fallback", origin, score, current)
        state.commit(origin, current)
    log.debug("epitome grown: %d charts, %.2f%% of the image", n_charts, state.epitome().fraction)
    return state.epitome(), state.amap


def pad_to_block_grid(epitome: Epitome, codec_block: int) -> Epitome:
    """Dilate the epitome to the union of every codec block it intersects.

    Charts of the padded epitome are the 8-connected components of the padded mask.
    """
    h, w = epitome.shape
    if h % codec_block or w % codec_block:
        raise ShapeError(f"codec block {codec_block} does not divide {epitome.shape}")
    m = epitome.mask.reshape(h // codec_block, codec_block, w // codec_block, codec_block)
    hit = m.any(axis=(1, 3))
    padded = np.repeat(np.repeat(hit, codec_block, axis=0), codec_block, axis=1)
    labels, _ = ndimage.label(padded, structure=EIGHT_NEIGHBORHOOD)
    return Epitome((labels - 1).astype(np.int32), epitome.block_size, epitome.threshold,
                   padded_to=codec_block)


def reconstruct_from_epitome(image_dims, epitome_plane, amap: AssignationMap,
                             epitome: Epitome | None = None) -> np.ndarray:
    """Copy each block's assigned patch from ``epitome_plane`` onto the block.

    ``epitome_plane`` carries the epitome samples at their source positions
    (only pixels under the epitome mask are read when ``epitome`` is given).
    """
    h, w = image_dims
    b = amap.block_size
    grid = BlockGrid((h, w), b)
    if len(amap.origins) != len(grid) or not amap.complete:
        raise IntegrityError("assignation map leaves blocks unassigned")
    src = as_plane(epitome_plane)
    if epitome is not None:
        mask = epitome.mask
        for r, c in amap.origins:
            if not mask[r:r + b, c:c + b].all():
                raise IntegrityError(f"assigned patch at {(r, c)} leaves the epitome")
    out = np.empty((h, w))
    for blk, (r, c) in zip(grid.blocks, amap.origins):
        out[blk.slices()] = src[r:r + b, c:c + b]
    return out


def generate_epitome(image, block_size: int, eps_m: float, search_step: int = 1,
                     peak: float = PEAK) -> tuple[Epitome, AssignationMap, MatchLists]:
    """Self-similarity search followed by chart growth."""
    image = as_plane(image)
    grid = BlockGrid.for_plane(image, block_size)
    ml, _ = find_matches(image, block_size, eps_m, search_step, grid=grid)
    epitome, amap = grow_epitome(image, grid, ml, peak=peak)
    return epitome, amap, ml


def block_mask(epitome: Epitome, codec_block: int) -> np.ndarray:
    """Per-codec-block boolean map, True where the block lies in the (padded) epitome."""
    h, w = epitome.shape
    m = epitome.mask.reshape(h // codec_block, codec_block, w // codec_block, codec_block)
    return m.all(axis=(1, 3))


def save_epitome(epitome: Epitome, amap: AssignationMap, mask_path, meta_path) -> None:
    """Write the mask as a 0/255 PGM and its metadata as JSON."""
    write_pgm(mask_path, epitome.mask * 255.0)
    meta = {
        "block_size": epitome.block_size,
        "eps_m": epitome.threshold,
        "padded_to": epitome.padded_to,
        "epitome_fraction": epitome.fraction,
        "charts": epitome.chart_boxes(),
        "assignation_map": amap.to_json(),
    }
    Path(meta_path).write_text(json.dumps(meta, indent=1))


def load_epitome(mask_path, meta_path=None) -> tuple[Epitome, AssignationMap | None]:
    mask = read_pgm(mask_path) > 127
    labels, _ = ndimage.label(mask, structure=EIGHT_NEIGHBORHOOD)
    meta = json.loads(Path(meta_path).read_text()) if meta_path else {}
    block_size = int(meta.get("block_size", 8))
    ep = Epitome((labels - 1).astype(np.int32), block_size,
                 float(meta.get("eps_m", float("nan"))), meta.get("padded_to"))
    amap = None
    if "assignation_map" in meta:
        items = meta["assignation_map"]
        origins = np.array([items[str(i)] for i in range(len(items))], dtype=np.int64).reshape(-1, 2)
        amap = AssignationMap(block_size, origins, np.full(len(origins), np.nan))
    return ep, amap


__all__ = [
    "AssignationMap", "Candidate", "Epitome", "GrowthState", "PixelRegion",
    "block_mask", "generate_epitome", "grow_epitome", "load_epitome",
    "pad_to_block_grid", "reconstruct_from_epitome", "save_epitome",
]

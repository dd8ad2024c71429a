"""Two-layer scalable coding simulation.

A block-DCT / uniform-quantizer codec with an order-0 entropy rate proxy
stands in for the base- and enhancement-layer encoders. The enhancement layer
only codes the epitome blocks, predicted from the upsampled decoded base
layer; every other block is copied from that prediction and costs nothing.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import fft as sp_fft

from .epitome import Epitome, block_mask, generate_epitome, pad_to_block_grid
from .errors import IntegrityError, ShapeError
from .image_core import PEAK, as_plane, downsample_2x, psnr, upsample_2x
from .restoration import RestorationParams, restore_el

log = logging.getLogger(__name__)

DEFAULT_QUANT_STEPS = (4.0, 8.0, 16.0, 32.0)


@dataclass(frozen=True)
class CodecConfig:
    quant_step: float = 8.0
    transform_block: int = 8

    def __post_init__(self):
        if not self.quant_step > 0:
            raise ValueError("quant_step must be > 0")
        if self.transform_block < 1:
            raise ValueError("transform_block must be >= 1")


@dataclass
class LayerBitstreamStats:
    bl_rate: float                 # bits
    el_rate: float                 # bits
    coded_block_count: int         # EL transform blocks actually coded
    epitome_fraction: float        # percent of EL pixels
    mask_bits: float = 0.0         # side information, reported apart from el_rate

    @property
    def total_rate(self) -> float:
        return self.bl_rate + self.el_rate


@dataclass
class PipelineResult:
    decoded_bl: np.ndarray
    bl_up: np.ndarray
    el_epitome_plane: np.ndarray
    restored_el: np.ndarray
    stats: LayerBitstreamStats
    psnr_el: float
    epitome: Epitome | None = field(default=None, repr=False)
    n_pixels: int = 0

    def stats_json(self) -> dict:
        bpp = 1.0 / self.n_pixels if self.n_pixels else 1.0
        d = asdict(self.stats)
        d.update(total_rate=self.stats.total_rate, psnr_el=self.psnr_el,
                 bl_bpp=self.stats.bl_rate * bpp, el_bpp=self.stats.el_rate * bpp,
                 pixels=self.n_pixels)
        return d


def _blockify(plane: np.ndarray, b: int) -> np.ndarray:
    h, w = plane.shape
    return plane.reshape(h // b, b, w // b, b).transpose(0, 2, 1, 3)


def _unblockify(blocks: np.ndarray) -> np.ndarray:
    nr, nc, b, _ = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(nr * b, nc * b)


def entropy_bits(symbols: np.ndarray) -> float:
    """Order-0 code length sum(-log2 p(s)) with p the empirical frequency of each symbol."""
    symbols = np.asarray(symbols).reshape(-1)
    if symbols.size == 0:
        return 0.0
    _, counts = np.unique(symbols, return_counts=True)
    p = counts / symbols.size
    return float(-np.sum(counts * np.log2(p)))


def coefficient_rate(levels: np.ndarray) -> float:
    """Rate proxy for quantized blocks of shape (n_blocks, b, b).

    Each coefficient frequency has its own order-0 model, estimated on the
    coded blocks of the plane.
    """
    if levels.size == 0:
        return 0.0
    flat = levels.reshape(levels.shape[0], -1)
    return float(sum(entropy_bits(flat[:, j]) for j in range(flat.shape[1])))


def code_plane(plane, cfg: CodecConfig = CodecConfig(), coded_mask: np.ndarray | None = None,
               prediction=None, peak: float = PEAK) -> tuple[np.ndarray, float]:
    """Transform-code the blocks of ``plane`` selected by ``coded_mask``.

    ``coded_mask`` is a per-transform-block boolean map (None codes every
    block). With ``prediction`` the residual ``plane - prediction`` is coded
    and added back. Coded blocks are decoded to integers in ``[0, peak]``;
    the other blocks are returned unmodified at zero rate.
    """
    x = as_plane(plane)
    b = cfg.transform_block
    h, w = x.shape
    if h % b or w % b:
        raise ShapeError(f"plane {x.shape} is not a multiple of the {b}x{b} transform")
    grid_shape = (h // b, w // b)
    if coded_mask is None:
        coded_mask = np.ones(grid_shape, dtype=bool)
    coded_mask = np.asarray(coded_mask, dtype=bool)
    if coded_mask.shape != grid_shape:
        raise ShapeError(f"coded mask {coded_mask.shape} does not match block grid {grid_shape}")
    pred = np.zeros_like(x) if prediction is None else as_plane(prediction)
    if pred.shape != x.shape:
        raise ShapeError("prediction and plane dimensions differ")

    res = _blockify(x - pred, b)[coded_mask]
    coeffs = sp_fft.dctn(res, type=2, axes=(1, 2), norm="ortho")
    levels = np.round(coeffs / cfg.quant_step)
    rate = coefficient_rate(levels)
    rec = sp_fft.idctn(levels * cfg.quant_step, type=2, axes=(1, 2), norm="ortho")

    out_blocks = _blockify(x.copy(), b)
    pred_blocks = _blockify(pred, b)[coded_mask]
    out_blocks[coded_mask] = np.clip(np.round(pred_blocks + rec), 0.0, peak)
    return _unblockify(out_blocks), rate


def assemble_el(el_source, epitome_mask, bl_up, codec_block: int | None = None) -> np.ndarray:
    """Enhancement layer made of ``el_source`` on epitome blocks and ``bl_up`` elsewhere."""
    el_source = as_plane(el_source)
    bl_up = as_plane(bl_up)
    mask = np.asarray(epitome_mask, dtype=bool)
    if el_source.shape != bl_up.shape or mask.shape != el_source.shape:
        raise ShapeError("el_source, bl_up and mask must share dimensions")
    if codec_block:
        h, w = mask.shape
        blk = mask.reshape(h // codec_block, codec_block, w // codec_block, codec_block)
        if np.any(blk.any(axis=(1, 3)) != blk.all(axis=(1, 3))):
            raise IntegrityError("epitome mask is not aligned with the codec block grid")
    return np.where(mask, el_source, bl_up)


def code_base_layer(image, cfg: CodecConfig, peak: float = PEAK):
    """Downsample, code and upsample; returns ``(decoded_bl, bl_up, bl_rate)``."""
    bl = downsample_2x(as_plane(image))
    decoded_bl, bl_rate = code_plane(bl, cfg, peak=peak)
    return decoded_bl, upsample_2x(decoded_bl, peak), bl_rate


def code_full_el(image, cfg: CodecConfig, bl_up=None, peak: float = PEAK):
    """Reference: code every EL block predictively from ``bl_up``; returns ``(decoded, el_rate)``."""
    image = as_plane(image)
    if bl_up is None:
        _, bl_up, _ = code_base_layer(image, cfg, peak)
    return code_plane(image, cfg, None, prediction=bl_up, peak=peak)


def _check_dims(image: np.ndarray, block_size: int, cfg: CodecConfig) -> None:
    unit = 2 * max(block_size, cfg.transform_block)
    if image.shape[0] % unit or image.shape[1] % unit:
        raise ShapeError(f"image {image.shape} must be a multiple of {unit} in both dimensions")


def run_pipeline(image, eps_m: float, cfg: CodecConfig = CodecConfig(),
                 params: RestorationParams = RestorationParams(), block_size: int = 8,
                 epitome: Epitome | None = None, base_layer=None, search_step: int = 1,
                 peak: float = PEAK, threads: int = 1) -> PipelineResult:
    """Encode ``image`` as base layer + epitome enhancement layer and decode it.

    ``epitome`` (already padded or not) and ``base_layer`` (the tuple returned
    by :func:`code_base_layer`) may be passed in to reuse work across runs.
    """
    image = as_plane(image)
    _check_dims(image, block_size, cfg)
    if base_layer is None:
        base_layer = code_base_layer(image, cfg, peak)
    decoded_bl, bl_up, bl_rate = base_layer

    if epitome is None:
        epitome, _, _ = generate_epitome(image, block_size, eps_m, search_step, peak)
    tb = cfg.transform_block
    if epitome.padded_to != tb:
        epitome = pad_to_block_grid(epitome, tb)
    coded = block_mask(epitome, tb)
    mask = epitome.mask

    decoded_el, el_rate = code_plane(image, cfg, coded, prediction=bl_up, peak=peak)
    el_epitome_plane = assemble_el(decoded_el, mask, bl_up, tb)
    restored = restore_el(bl_up, el_epitome_plane, mask, params, peak, threads)
    stats = LayerBitstreamStats(
        bl_rate=bl_rate,
        el_rate=el_rate,
        coded_block_count=int(coded.sum()),
        epitome_fraction=epitome.fraction,
        mask_bits=float(coded.size),
    )
    return PipelineResult(decoded_bl, bl_up, el_epitome_plane, restored, stats,
                          psnr(image, restored, peak), epitome, image.size)


def full_epitome(shape: tuple[int, int], block_size: int = 8) -> Epitome:
    """An epitome covering the whole image (simulcast-like control)."""
    return Epitome(np.zeros(shape, dtype=np.int32), block_size, 0.0)

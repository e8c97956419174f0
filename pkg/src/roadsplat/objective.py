"""Losses and evaluation metrics for elevation maps and rendered images."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .scene import ElevationMap

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
PSNR_CAP_DB = 100.0
SMOOTH_L1_BETA = 0.01


class DegenerateSceneError(ValueError):
    """No rendered frame covers any pixel."""


def _same_shape(pred: ElevationMap, gt: ElevationMap) -> None:
    if pred.shape != gt.shape:
        raise ValueError(f"resolution mismatch: pred {pred.shape} vs gt {gt.shape}")


def smooth_l1(err: np.ndarray, beta: float = SMOOTH_L1_BETA) -> np.ndarray:
    a = np.abs(err)
    if beta <= 0:
        return a
    return np.where(a < beta, 0.5 * a * a / beta, a - 0.5 * beta)


def elevation_loss(pred: ElevationMap, gt: ElevationMap, beta: float = SMOOTH_L1_BETA) -> float:
    """Smooth-L1 elevation error summed over the ground truth's valid cells."""
    _same_shape(pred, gt)
    err = (pred.values - gt.values)[gt.valid]
    return float(smooth_l1(err, beta).sum())


def elevation_metrics(pred: ElevationMap, gt: ElevationMap) -> tuple[float, float, float]:
    """(AAE m, RMSE m, percentage of cells with |error| > 5 mm)."""
    _same_shape(pred, gt)
    err = (pred.values - gt.values)[gt.valid]
    if err.size == 0:
        raise ValueError("no valid cells to evaluate")
    abs_err = np.abs(err)
    return (float(abs_err.mean()), float(np.sqrt(np.mean(err * err))),
            float(100.0 * np.count_nonzero(abs_err > 0.005) / err.size))


def segment_bounds(n_rows: int, n_segments: int) -> list[tuple[int, int]]:
    """Balanced split of ``n_rows`` into contiguous runs; earlier runs take the remainder."""
    base, extra = divmod(n_rows, n_segments)
    bounds, start = [], 0
    for k in range(n_segments):
        stop = start + base + (1 if k < extra else 0)
        bounds.append((start, stop))
        start = stop
    return bounds


def segment_aae(pred: ElevationMap, gt: ElevationMap, n_segments: int = 15) -> list[float]:
    """AAE per longitudinal segment, near to far; NaN marks a segment without valid cells."""
    _same_shape(pred, gt)
    abs_err = np.abs(pred.values - gt.values)
    out = []
    for start, stop in segment_bounds(gt.shape[1], n_segments):
        m = gt.valid[:, start:stop]
        out.append(float(abs_err[:, start:stop][m].mean()) if m.any() else math.nan)
    return out


def psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray | None = None,
         cap: float = PSNR_CAP_DB) -> float:
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(1.0 / mse))


def _gauss_kernel() -> np.ndarray:
    x = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    k = np.exp(-(x ** 2) / (2 * SSIM_SIGMA ** 2))
    return k / k.sum()


_KERNEL = _gauss_kernel()


def _blur(img: np.ndarray) -> np.ndarray:
    # separable window sum over the two spatial axes; symmetric so it is its own adjoint
    out = ndimage.correlate1d(img, _KERNEL, axis=0, mode="constant")
    return ndimage.correlate1d(out, _KERNEL, axis=1, mode="constant")


def _as_hwc(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return img[..., None] if img.ndim == 2 else img


def window_mask(coverage: np.ndarray | None, shape: tuple[int, int]) -> np.ndarray:
    """Window centres whose whole 11x11 window lies inside the image (and the coverage)."""
    base = np.ones(shape, dtype=bool) if coverage is None else np.asarray(coverage, dtype=bool)
    return ndimage.binary_erosion(base, structure=np.ones((SSIM_WINDOW, SSIM_WINDOW)),
                                  border_value=0)


def _ssim_terms(a, b):
    mu_a, mu_b = _blur(a), _blur(b)
    var_a = _blur(a * a) - mu_a ** 2
    var_b = _blur(b * b) - mu_b ** 2
    cov = _blur(a * b) - mu_a * mu_b
    a1 = 2 * mu_a * mu_b + SSIM_C1
    a2 = 2 * cov + SSIM_C2
    b1 = mu_a ** 2 + mu_b ** 2 + SSIM_C1
    b2 = var_a + var_b + SSIM_C2
    return mu_a, mu_b, a1, a2, b1, b2


def ssim(a: np.ndarray, b: np.ndarray, coverage: np.ndarray | None = None):
    """Mean SSIM and the per-pixel map (channel-averaged; NaN where no full window).

    With ``coverage`` only windows lying entirely inside the covered pixels count.
    """
    a, b = _as_hwc(a), _as_hwc(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    h, w = a.shape[:2]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    _, _, a1, a2, b1, b2 = _ssim_terms(a, b)
    smap = (a1 * a2 / (b1 * b2)).mean(axis=2)
    valid = window_mask(coverage, (h, w))
    smap = np.where(valid, smap, np.nan)
    mean = float(np.nanmean(smap)) if valid.any() else math.nan
    return mean, smap


def ssim_with_grad(a: np.ndarray, b: np.ndarray, valid: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean SSIM over ``valid`` window centres and its gradient w.r.t. ``a``."""
    a, b = _as_hwc(a), _as_hwc(b)
    n = int(valid.sum()) * a.shape[2]
    mu_a, mu_b, a1, a2, b1, b2 = _ssim_terms(a, b)
    s = a1 * a2 / (b1 * b2)
    wgt = valid[..., None] / n
    value = float((s * wgt).sum())
    d_var = -s / b2 * wgt  # d s / d var_a (= d s / d E[a^2])
    d_cov = 2 * a1 / (b1 * b2) * wgt  # d s / d cov (= d s / d E[ab])
    d_mu = (2 * mu_b * a2 / (b1 * b2) - s * 2 * mu_a / b1) * wgt
    d_mu = d_mu - 2 * mu_a * d_var - mu_b * d_cov
    grad = _blur(d_mu) + 2 * a * _blur(d_var) + b * _blur(d_cov)
    return value, grad


def masked_l1_with_grad(a: np.ndarray, b: np.ndarray, coverage: np.ndarray):
    n = int(coverage.sum()) * a.shape[2]
    diff = a - b
    m = coverage[..., None]
    return float(np.abs(diff)[np.broadcast_to(m, diff.shape)].sum() / n), np.sign(diff) * m / n


def frame_loss_with_grad(rendered: np.ndarray, actual: np.ndarray, coverage: np.ndarray,
                         lam: float = 0.5) -> tuple[float, np.ndarray]:
    """One frame's photometric loss and dL/d(rendered); zero when nothing is covered."""
    rendered = np.asarray(rendered, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if rendered.shape != actual.shape:
        raise ValueError(f"shape mismatch {rendered.shape} vs {actual.shape}")
    if not coverage.any():
        return 0.0, np.zeros_like(rendered)
    l1, g_l1 = masked_l1_with_grad(rendered, actual, coverage)
    value, grad = lam * l1, lam * g_l1
    valid = window_mask(coverage, coverage.shape)
    if valid.any() and lam < 1.0:
        s, g_s = ssim_with_grad(rendered, actual, valid)
        value += (1 - lam) * (1 - s)
        grad = grad - (1 - lam) * g_s
    return value, grad


def rgb_loss(rendered, actual, lam: float = 0.5) -> float:
    """Masked L1 + SSIM photometric loss summed over paired frames."""
    if len(rendered) != len(actual):
        raise ValueError("rendered and actual lists differ in length")
    if not any(r.coverage.any() for r in rendered):
        raise DegenerateSceneError("no frame has any splatted pixel")
    return float(sum(frame_loss_with_grad(r.rgb, img, r.coverage, lam)[0]
                     for r, img in zip(rendered, actual)))


@dataclass
class MetricReport:
    aae_cm: float = math.nan
    rmse_cm: float = math.nan
    pct_gt_5mm: float = math.nan
    psnr_db: float = math.nan
    ssim: float = math.nan
    segment_aae_cm: list[float] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in asdict(self).items() if k != "segment_aae_cm"]
        lines += [f"segment_aae_cm[{i}]={_fmt(v)}" for i, v in enumerate(self.segment_aae_cm)]
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        data = {k: _json_num(v) for k, v in asdict(self).items() if k != "segment_aae_cm"}
        data["segment_aae_cm"] = [_json_num(v) for v in self.segment_aae_cm]
        return json.dumps(data, sort_keys=True, indent=2) + "\n"


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else repr(float(v))


def _json_num(v: float):
    return None if math.isnan(v) else float(v)


def evaluate(pred: ElevationMap | None = None, gt: ElevationMap | None = None,
             images: list[tuple[np.ndarray, np.ndarray]] = (), n_segments: int = 15) -> MetricReport:
    """Collect elevation and image metrics into a report (fields left NaN when not given)."""
    report = MetricReport()
    if pred is not None and gt is not None:
        aae, rmse, pct = elevation_metrics(pred, gt)
        report.aae_cm, report.rmse_cm, report.pct_gt_5mm = 100 * aae, 100 * rmse, pct
        report.segment_aae_cm = [100 * v for v in segment_aae(pred, gt, n_segments)]
    if images:
        report.psnr_db = float(np.mean([psnr(a, b) for a, b in images]))
        report.ssim = float(np.mean([ssim(a, b)[0] for a, b in images]))
    return report

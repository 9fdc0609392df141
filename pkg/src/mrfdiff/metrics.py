"""Masked error metrics for parameter maps and multichannel complex timeseries."""

import csv
from dataclasses import dataclass, asdict, fields

import numpy as np
from scipy import ndimage


def _masked(pred, ref, mask):
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    mask = np.ones(ref.shape[:2], bool) if mask is None else np.asarray(mask, bool)
    if not mask.any():
        raise ValueError("empty mask")
    return pred[mask], ref[mask]


def mape(pred, ref, mask=None, return_excluded=False):
    """Mean absolute percentage error over the mask; zero-reference voxels are skipped."""
    p, r = _masked(pred, ref, mask)
    keep = r != 0
    if not keep.any():
        raise ValueError("reference is zero everywhere on the mask")
    val = 100.0 * float(np.mean(np.abs((r[keep] - p[keep]) / r[keep])))
    return (val, int((~keep).sum())) if return_excluded else val


def rmse(pred, ref, mask=None):
    p, r = _masked(pred, ref, mask)
    return float(np.sqrt(np.mean(np.abs(r - p) ** 2)))


def nrmse(pred, ref, mask=None):
    """Channel-averaged |error|_2 / |ref|_2; 2-D inputs count as one channel."""
    p, r = _masked(pred, ref, mask)
    if p.ndim == 1:
        p, r = p[:, None], r[:, None]
    return float(np.mean(np.linalg.norm(r - p, axis=0) / np.linalg.norm(r, axis=0)))


def gaussian_window(size=7, sigma=1.5):
    g = np.exp(-((np.arange(size) - size // 2) ** 2) / (2 * sigma ** 2))
    w = np.outer(g, g)
    return w / w.sum()


def ssim_map(pred, ref, data_range, win=None, k1=0.01, k2=0.03):
    win = gaussian_window() if win is None else win
    if min(pred.shape) < win.shape[0]:
        raise ValueError("image smaller than the SSIM window")
    f = lambda a: ndimage.correlate(a, win, mode="reflect")
    mx, my = f(pred), f(ref)
    sxx = f(pred * pred) - mx * mx
    syy = f(ref * ref) - my * my
    sxy = f(pred * ref) - mx * my
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    return ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (sxx + syy + c2))


def ssim(pred, ref, mask=None, data_range=None):
    """Mean SSIM over the mask, averaged over real planes (real and imaginary part of each channel)."""
    pred, ref = np.asarray(pred), np.asarray(ref)
    if pred.shape != ref.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {ref.shape}")
    mask = np.ones(ref.shape[:2], bool) if mask is None else np.asarray(mask, bool)
    if pred.ndim == 2:
        pred, ref = pred[..., None], ref[..., None]
    planes = []
    for c in range(ref.shape[-1]):
        parts = (np.real, np.imag) if np.iscomplexobj(ref) or np.iscomplexobj(pred) else (np.real,)
        for part in parts:
            a, b = part(pred[..., c]).astype(float), part(ref[..., c]).astype(float)
            dr = data_range if data_range is not None else float(b[mask].max() - b[mask].min())
            if dr == 0:
                dr = 1.0
            planes.append(float(np.mean(ssim_map(a, b, dr)[mask])))
    return float(np.mean(planes))


@dataclass
class ErrorReport:
    method: str
    mask_kind: str
    mape_t1: float
    mape_t2: float
    rmse_t1: float  # ms
    rmse_t2: float  # ms
    nrmse_t1: float
    nrmse_t2: float
    nrmse_tsmi: float
    ssim_t1: float
    ssim_t2: float
    ssim_tsmi: float


def error_report(method, t1, t2, x, ref_t1, ref_t2, ref_x, mask, mask_kind="brain"):
    return ErrorReport(
        method, mask_kind,
        mape(t1, ref_t1, mask), mape(t2, ref_t2, mask),
        1e3 * rmse(t1, ref_t1, mask), 1e3 * rmse(t2, ref_t2, mask),
        nrmse(t1, ref_t1, mask), nrmse(t2, ref_t2, mask), nrmse(x, ref_x, mask),
        ssim(t1, ref_t1, mask), ssim(t2, ref_t2, mask), ssim(x, ref_x, mask))


def write_reports(path, reports, extra=None):
    """One CSV row per report; ``extra`` maps column -> value for every row."""
    extra = extra or {}
    cols = list(extra) + [f.name for f in fields(ErrorReport)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for r in reports:
            d = asdict(r)
            w.writerow([extra[k] for k in extra] + [d[c] if isinstance(d[c], str) else f"{d[c]:.6g}" for c in cols[len(extra):]])

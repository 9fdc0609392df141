"""Multicoil, per-frame undersampled Cartesian acquisition and its adjoint.

Images are (H, W, channels) complex arrays; k-space masks are stored in numpy's
FFT layout (DC at index [0, 0]) and FFTs are unitary.
"""

from dataclasses import dataclass

import numpy as np

from .subspace import decompress

GOLDEN_ANGLE = np.pi * (3 - np.sqrt(5))


@dataclass(frozen=True)
class CoilSet:
    sens: np.ndarray  # (c, H, W)

    @property
    def n_coils(self):
        return self.sens.shape[0]


@dataclass(frozen=True)
class SamplingPattern:
    masks: np.ndarray  # (l, H, W) bool
    kind: str
    R: float
    seed: int

    @property
    def n_frames(self):
        return self.masks.shape[0]

    def truncate(self, l_new):
        if not 1 <= l_new <= self.n_frames:
            raise ValueError(f"l_new={l_new} outside [1, {self.n_frames}]")
        return SamplingPattern(self.masks[:l_new].copy(), self.kind, self.R, self.seed)


@dataclass(frozen=True)
class KSpace:
    data: np.ndarray  # (c, m_total)
    pattern: SamplingPattern
    coils: CoilSet

    def __post_init__(self):
        m = int(self.pattern.masks.sum())
        if self.data.shape != (self.coils.n_coils, m):
            raise ValueError(f"k-space data shape {self.data.shape} != ({self.coils.n_coils}, {m})")


def make_coils(n_side, c, seed=0, width=0.8):
    """Smooth complex Gaussian sensitivities around the border, root-sum-of-squares normalized."""
    if c < 1:
        raise ValueError("need at least one coil")
    rng = np.random.default_rng(seed)
    g = (np.arange(n_side) + 0.5) / n_side * 2 - 1
    y, x = np.meshgrid(g, g, indexing="ij")
    sens = np.empty((c, n_side, n_side), complex)
    for i in range(c):
        a = 2 * np.pi * i / c
        mag = np.exp(-((x - np.cos(a)) ** 2 + (y - np.sin(a)) ** 2) / (2 * width ** 2))
        kx, ky = rng.uniform(-1, 1, 2)
        sens[i] = mag * np.exp(1j * (rng.uniform(0, 2 * np.pi) + kx * x + ky * y))
    sos = np.sqrt(np.sum(np.abs(sens) ** 2, axis=0))
    return CoilSet(sens / sos)


def _centered_freqs(n):
    k = np.arange(n) - n // 2
    ky, kx = np.meshgrid(k, k, indexing="ij")
    return kx, ky


def _center_block(n):
    m = np.zeros((n, n), bool)
    c = n // 2
    m[c - 2:c + 2, c - 2:c + 2] = True
    return m


def _vd_frame(n, m, rng, sigma):
    kx, ky = _centered_freqs(n)
    base = _center_block(n)
    w = np.exp(-(kx ** 2 + ky ** 2) / (2 * sigma ** 2)).ravel()
    w[base.ravel()] = 0
    need = m - int(base.sum())
    mask = base.ravel().copy()
    if need > 0:
        pick = rng.choice(n * n, size=need, replace=False, p=w / w.sum())
        mask[pick] = True
    return mask.reshape(n, n)


def _radial_frame(n, m, rng, frame):
    c = n // 2
    mask = _center_block(n)
    count = int(mask.sum())
    ang = rng.uniform(0, np.pi) + frame * GOLDEN_ANGLE
    r = np.arange(-n, n + 1) * 0.5
    r = r[np.argsort(np.abs(r), kind="stable")]
    while count < m:
        ix = np.round(c + r * np.cos(ang)).astype(int)
        iy = np.round(c + r * np.sin(ang)).astype(int)
        ok = (ix >= 0) & (ix < n) & (iy >= 0) & (iy < n)
        for yy, xx in zip(iy[ok], ix[ok]):
            if not mask[yy, xx]:
                mask[yy, xx] = True
                count += 1
                if count == m:
                    break
        ang += GOLDEN_ANGLE
    return mask


def make_sampling(kind, n_side, l, R, seed=0, sigma=None):
    """Frame-varying k-space masks keeping round(n_side**2 / R) samples per frame.

    kind is "vd" (variable-density random Cartesian points, Gaussian density) or
    "radial" (golden-angle rasterized spokes). The central 4x4 block is always kept.
    """
    if R < 1:
        raise ValueError("acceleration R must be >= 1")
    n = n_side * n_side
    if R > n:
        raise ValueError(f"R={R} exceeds the number of k-space points {n}")
    if kind not in ("vd", "radial"):
        raise ValueError(f"unknown sampling kind {kind!r}")
    m = max(int(round(n / R)), 16)
    sigma = n_side / 4 if sigma is None else sigma
    masks = np.empty((l, n_side, n_side), bool)
    for f in range(l):
        if m >= n:
            masks[f] = True
            continue
        rng = np.random.default_rng([seed, f])
        fr = _vd_frame(n_side, m, rng, sigma) if kind == "vd" else _radial_frame(n_side, m, rng, f)
        masks[f] = np.fft.ifftshift(fr)
    return SamplingPattern(masks, kind, float(R), int(seed))


def forward_full(x_full, coils, pattern):
    """Uncompressed operator: (H, W, l) timeseries -> (c, m_total) samples."""
    frames = np.moveaxis(np.asarray(x_full), -1, 0)
    if frames.shape != pattern.masks.shape:
        raise ValueError(f"timeseries shape {frames.shape} does not match pattern {pattern.masks.shape}")
    if frames.shape[1:] != coils.sens.shape[1:]:
        raise ValueError("image size does not match coil sensitivities")
    k = np.fft.fft2(coils.sens[:, None] * frames[None], norm="ortho")
    return KSpace(k[:, pattern.masks], pattern, coils)


def adjoint_full(y):
    c = y.coils.n_coils
    l, h, w = y.pattern.masks.shape
    k = np.zeros((c, l, h, w), complex)
    k[:, y.pattern.masks] = y.data
    frames = np.einsum("clhw,chw->lhw", np.fft.ifft2(k, norm="ortho"), y.coils.sens.conj())
    return np.moveaxis(frames, 0, -1)


def _check_basis(basis, pattern):
    if basis.source_l != pattern.n_frames:
        raise ValueError(f"basis length {basis.source_l} != pattern frames {pattern.n_frames}")


def forward(x, basis, coils, pattern):
    """y = mask * FFT(coil * (x V^H)) per frame."""
    _check_basis(basis, pattern)
    return forward_full(decompress(x, basis), coils, pattern)


def adjoint(y, basis):
    """Gridding reconstruction x = A^H y, projected onto the basis."""
    _check_basis(basis, y.pattern)
    return adjoint_full(y) @ basis.V


def add_noise(y, sigma, seed=0):
    if sigma <= 0:
        return y
    rng = np.random.default_rng(seed)
    noise = (rng.standard_normal(y.data.shape) + 1j * rng.standard_normal(y.data.shape)) * (sigma / np.sqrt(2))
    return KSpace(y.data + noise, y.pattern, y.coils)


def save_kspace(prefix, y):
    from .tensorio import write_tensor
    write_tensor(f"{prefix}_data.qmrf", y.data.astype(np.complex64), kind="kspace")
    write_tensor(f"{prefix}_masks.qmrf", y.pattern.masks, kind="sampling_masks", pattern_kind=y.pattern.kind,
                 R=y.pattern.R, seed=y.pattern.seed)
    write_tensor(f"{prefix}_coils.qmrf", y.coils.sens.astype(np.complex64), kind="coil_sensitivities")


class NormalOperator:
    """Exact A^H A for Cartesian masks, applied in the compressed domain.

    Uses per-k-space-point s x s weights W(k) = sum_f V[f] V[f]^H mask_f(k), so one
    application costs c * 2s FFTs instead of c * 2l.
    """

    def __init__(self, basis, coils, pattern):
        _check_basis(basis, pattern)
        V = basis.V
        self.weights = np.einsum("fs,ft,fhw->hwst", V, V.conj(), pattern.masks.astype(float), optimize=True)
        self.sens = coils.sens

    def __call__(self, x):
        k = np.fft.fft2(self.sens[:, :, :, None] * x[None], axes=(1, 2), norm="ortho")
        k = np.einsum("hwst,chwt->chws", self.weights, k, optimize=True)
        img = np.fft.ifft2(k, axes=(1, 2), norm="ortho")
        return np.einsum("chws,chw->hws", img, self.sens.conj())


def truncate_kspace(y, l_new):
    """Keep the samples of the first ``l_new`` frames."""
    pat = y.pattern.truncate(l_new)
    m = int(pat.masks.sum())
    return KSpace(y.data[:, :m].copy(), pat, y.coils)

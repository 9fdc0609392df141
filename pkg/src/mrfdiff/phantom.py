"""Synthetic brain-like phantoms and their Bloch-model image timeseries.

Tissue values are literature-typical stand-ins, not measured data.
"""

from dataclasses import dataclass, field, asdict

import numpy as np

from .epg import epg_fisp_batch

TISSUES = {
    "wm": (0.8, 0.07, 0.7),
    "gm": (1.4, 0.10, 0.85),
    "csf": (4.0, 1.8, 1.0),
    "skull": (0.35, 0.06, 0.9),
}


@dataclass
class Region:
    center: tuple  # (x, y) in [-1, 1] image coordinates
    axes: tuple  # semi-axes (a, b), same units
    angle: float  # degrees
    t1: float
    t2: float
    rho: float
    phase: float = 0.0  # radians
    skull: bool = False


@dataclass
class PhantomSpec:
    size: int = 64
    regions: list = field(default_factory=list)
    seed: int = 0
    texture: float = 0.0  # relative amplitude of smooth |rho| modulation
    phase_order: int = 2  # degree of the smooth receive-phase polynomial (0 = none)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["regions"] = [r if isinstance(r, Region) else Region(**r) for r in d.get("regions", [])]
        return cls(**d)


@dataclass
class QMaps:
    t1: np.ndarray
    t2: np.ndarray
    rho: np.ndarray
    head_mask: np.ndarray
    brain_mask: np.ndarray


def pixel_coords(size):
    c = (np.arange(size) + 0.5) / size * 2 - 1
    y, x = np.meshgrid(c, c, indexing="ij")
    return x, y


def ellipse_mask(size, center, axes, angle):
    x, y = pixel_coords(size)
    th = np.deg2rad(angle)
    dx, dy = x - center[0], y - center[1]
    u = dx * np.cos(th) + dy * np.sin(th)
    v = -dx * np.sin(th) + dy * np.cos(th)
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def brain_regions(scale=1.0, tissues=TISSUES):
    """Default layout: skull ring, CSF layer, gray matter, white matter, two ventricles."""
    def reg(name, center, axes, angle=0.0, skull=False):
        t1, t2, rho = tissues[name]
        return Region(center, (axes[0] * scale, axes[1] * scale), angle, t1, t2, rho, skull=skull)
    return [
        reg("skull", (0, 0), (0.86, 0.94), skull=True),
        reg("csf", (0, 0), (0.76, 0.84)),
        reg("gm", (0, 0), (0.71, 0.79)),
        reg("wm", (0, 0.02), (0.52, 0.60)),
        reg("csf", (-0.13, -0.05), (0.07, 0.24), angle=-12),
        reg("csf", (0.13, -0.05), (0.07, 0.24), angle=12),
    ]


def default_spec(size=64, seed=0):
    return PhantomSpec(size=size, regions=brain_regions(), seed=seed, texture=0.1)


def random_spec(size=64, seed=0, jitter=0.1, n_lesions=(0, 3)):
    """A randomly perturbed brain-like phantom for building training sets."""
    rng = np.random.default_rng(seed)
    tissues = {k: (t1 * np.exp(rng.uniform(-jitter, jitter)), t2 * np.exp(rng.uniform(-jitter, jitter)),
                   rho * rng.uniform(1 - jitter, 1 + jitter)) for k, (t1, t2, rho) in TISSUES.items()}
    regions = brain_regions(scale=rng.uniform(0.85, 1.05), tissues=tissues)
    rot = rng.uniform(-15, 15)
    squash = rng.uniform(0.9, 1.1)
    for r in regions:
        r.axes = (r.axes[0] * squash, r.axes[1] / squash)
        r.angle += rot
        th = np.deg2rad(rot)
        cx, cy = r.center
        r.center = (cx * np.cos(th) - cy * np.sin(th), cx * np.sin(th) + cy * np.cos(th))
    for _ in range(rng.integers(n_lesions[0], n_lesions[1] + 1)):
        ang, rad = rng.uniform(0, 2 * np.pi), rng.uniform(0.1, 0.45)
        t1 = float(rng.uniform(0.5, 2.5))
        t2 = float(min(rng.uniform(0.04, 0.3), t1))
        regions.append(Region((rad * np.cos(ang), rad * np.sin(ang)), tuple(rng.uniform(0.04, 0.12, 2)),
                              float(rng.uniform(0, 180)), t1, t2, float(rng.uniform(0.6, 1.0))))
    return PhantomSpec(size=size, regions=regions, seed=seed, texture=float(rng.uniform(0.05, 0.15)))


def _smooth_field(size, rng, n_modes=4):
    x, y = pixel_coords(size)
    f = np.zeros((size, size))
    for _ in range(n_modes):
        kx, ky = rng.uniform(-3, 3, 2)
        f += rng.normal() * np.cos(np.pi * (kx * x + ky * y) + rng.uniform(0, 2 * np.pi))
    return f / max(np.abs(f).max(), 1e-12)


def make_phantom(spec):
    """Rasterize ellipses into T1/T2/rho maps; later regions overwrite earlier ones."""
    if spec.size < 16:
        raise ValueError("phantom grid must be at least 16 voxels per side")
    if not spec.regions:
        raise ValueError("phantom needs at least one region")
    n = spec.size
    t1 = np.zeros((n, n))
    t2 = np.zeros((n, n))
    rho = np.zeros((n, n), complex)
    skull = np.zeros((n, n), bool)
    head = np.zeros((n, n), bool)
    for r in spec.regions:
        if not (r.t1 > 0 and r.t2 > 0 and r.t2 <= r.t1 and r.rho > 0):
            raise ValueError(f"region values violate 0 < T2 <= T1 and rho > 0: {r}")
        m = ellipse_mask(n, r.center, r.axes, r.angle)
        t1[m], t2[m] = r.t1, r.t2
        rho[m] = r.rho * np.exp(1j * r.phase)
        skull[m] = r.skull
        head |= m
    rng = np.random.default_rng(spec.seed)
    if spec.texture:
        rho = rho * (1 + spec.texture * _smooth_field(n, rng))
    if spec.phase_order:
        x, y = pixel_coords(n)
        ph = np.zeros((n, n))
        for i in range(spec.phase_order + 1):
            for j in range(spec.phase_order + 1 - i):
                ph += rng.uniform(-0.5, 0.5) * x ** i * y ** j
        rho = rho * np.exp(1j * ph)
    rho[~head] = 0
    return QMaps(t1, t2, rho, head, head & ~skull)


def qmaps_to_tsmi(q, seq, max_order=None):
    """Per-voxel rho * fingerprint(T1, T2); (H, W, l) complex, zero outside the head."""
    h, w = q.t1.shape
    out = np.zeros((h, w, seq.length), complex)
    idx = np.flatnonzero(q.head_mask)
    if idx.size == 0:
        return out
    pairs = np.stack([q.t1.ravel()[idx], q.t2.ravel()[idx]], axis=1)
    uniq, inv = np.unique(pairs, axis=0, return_inverse=True)
    atoms = epg_fisp_batch(uniq[:, 0], uniq[:, 1], seq, max_order)
    flat = out.reshape(h * w, -1)
    flat[idx] = q.rho.ravel()[idx, None] * atoms[inv.ravel()]
    return out


def save_qmaps(prefix, q):
    from .tensorio import write_tensor
    write_tensor(f"{prefix}_t1.qmrf", q.t1, kind="qmap_t1", units="s")
    write_tensor(f"{prefix}_t2.qmrf", q.t2, kind="qmap_t2", units="s")
    write_tensor(f"{prefix}_rho.qmrf", q.rho.astype(np.complex64), kind="qmap_rho")
    write_tensor(f"{prefix}_head.qmrf", q.head_mask, kind="mask_head")
    write_tensor(f"{prefix}_brain.qmrf", q.brain_mask, kind="mask_brain")

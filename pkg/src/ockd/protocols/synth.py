"""Procedural face-like images with domain-dependent capture conditions.

Genuine samples are soft elliptical "faces" (skin-toned blob with eye and
mouth blobs, shading and skin texture) over a smooth background.  Attack
samples re-render a genuine scene through a recapture chain: blur, color
cast and a moire grid.  Every domain then applies its own illumination gain
and sensor noise, which is what makes source and target domains differ.
"""
from __future__ import annotations

import colorsys
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.special import expit

from ..data import ATTACK, GENUINE, Dataset
from ..errors import ConfigurationError
from ..net import IMAGE_SIZE

SPLITS = {"train": 0, "test": 1}


@dataclass(frozen=True)
class DomainSpec:
    domain_id: int = 0
    hue: float = 0.06
    gain: float = 1.0
    noise: float = 0.02
    grid_strength: float = 0.08
    grid_period: float = 4.0
    blur: float = 0.6
    color_shift: tuple[float, float, float] = (0.04, 0.0, -0.04)
    train_genuine: int = 600
    train_attack: int = 600
    test_genuine: int = 100
    test_attack: int = 200
    seed: int = 0

    def __post_init__(self):
        checks = [
            (0 <= self.hue <= 1, "hue"),
            (0.2 <= self.gain <= 2.0, "gain"),
            (0 <= self.noise <= 0.3, "noise"),
            (0 <= self.grid_strength <= 0.5, "grid_strength"),
            (2.0 <= self.grid_period <= 32.0, "grid_period"),
            (0 <= self.blur <= 8.0, "blur"),
            (len(self.color_shift) == 3 and all(abs(c) <= 0.5 for c in self.color_shift), "color_shift"),
            (self.train_genuine >= 0 and self.train_attack >= 0, "train counts"),
            (self.test_genuine >= 1 and self.test_attack >= 1, "test counts"),
            (0 <= self.domain_id < 1000, "domain_id"),
        ]
        for ok, what in checks:
            if not ok:
                raise ConfigurationError(f"domain parameter out of range: {what}", key=what)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["color_shift"] = list(self.color_shift)
        return d


def _coords(n: int = IMAGE_SIZE):
    ax = (np.arange(n) + 0.5) / n * 2 - 1
    return np.meshgrid(ax, ax, indexing="ij")


_YY, _XX = _coords()


def _blob(cx, cy, rx, ry, sharp):
    r = ((_XX - cx) / rx) ** 2 + ((_YY - cy) / ry) ** 2
    return expit(sharp * (1.0 - r))


def render_scene(rng: np.random.Generator, hue: float) -> np.ndarray:
    """One genuine scene as float RGB (3, H, W), before capture effects."""
    bg_col = rng.uniform(0.15, 0.75, size=3)
    gdir = rng.normal(size=2)
    bg = bg_col[:, None, None] * (1 + 0.25 * (gdir[0] * _XX + gdir[1] * _YY))[None]
    bg = bg + 0.05 * gaussian_filter(rng.normal(size=(IMAGE_SIZE, IMAGE_SIZE)), 8)[None] * 4

    cx, cy = rng.uniform(-0.12, 0.12, size=2)
    rx, ry = rng.uniform(0.40, 0.52), rng.uniform(0.56, 0.70)
    face = _blob(cx, cy, rx, ry, 10.0)
    skin = np.array(
        colorsys.hsv_to_rgb(
            (hue + rng.normal(0, 0.015)) % 1.0, rng.uniform(0.35, 0.55), rng.uniform(0.65, 0.9)
        )
    )
    ldir = rng.normal(size=2)
    ldir /= np.linalg.norm(ldir) + 1e-12
    shade = 1 + 0.3 * (ldir[0] * (_XX - cx) / rx + ldir[1] * (_YY - cy) / ry)
    texture = gaussian_filter(rng.normal(size=(IMAGE_SIZE, IMAGE_SIZE)), 2.0) * 0.08
    skin_img = skin[:, None, None] * (shade + texture)[None]

    feat = np.zeros_like(face)
    ex = 0.38 * rx
    eyy = cy - 0.22 * ry
    for sx in (-1, 1):
        feat = np.maximum(feat, _blob(cx + sx * ex, eyy, 0.11 * rx, 0.06 * ry, 6.0))
    feat = np.maximum(feat, _blob(cx, cy + 0.45 * ry, 0.28 * rx, 0.06 * ry, 6.0))
    feat = np.maximum(feat, 0.6 * _blob(cx, cy + 0.08 * ry, 0.06 * rx, 0.18 * ry, 4.0))
    hair = _blob(cx, cy - 0.85 * ry, 1.05 * rx, 0.45 * ry, 8.0) * (_YY < cy - 0.3 * ry)
    hair_col = rng.uniform(0.05, 0.35) * np.array([1.0, 0.85, 0.7])

    img = bg * (1 - face)[None] + skin_img * face[None]
    img = img * (1 - 0.7 * feat)[None]
    img = img * (1 - hair)[None] + hair_col[:, None, None] * hair[None]
    return img


def recapture(rng: np.random.Generator, img: np.ndarray, spec: DomainSpec) -> np.ndarray:
    """Simulate presenting ``img`` on a display or print and re-imaging it."""
    jitter = rng.uniform(0.7, 1.3)
    if spec.blur > 0:
        sigma = spec.blur * rng.uniform(0.8, 1.2)
        img = np.stack([gaussian_filter(c, sigma) for c in img])
    img = img + np.asarray(spec.color_shift)[:, None, None] * jitter
    img = 0.9 * img + 0.05
    theta = rng.uniform(-0.35, 0.35)
    period = spec.grid_period * rng.uniform(0.85, 1.15)
    ph = rng.uniform(0, 2 * np.pi, size=2)
    u = (np.cos(theta) * _XX + np.sin(theta) * _YY) * IMAGE_SIZE / 2
    v = (-np.sin(theta) * _XX + np.cos(theta) * _YY) * IMAGE_SIZE / 2
    grid = 0.5 * (np.sin(2 * np.pi * u / period + ph[0]) + np.sin(2 * np.pi * v / period + ph[1]))
    return img + spec.grid_strength * jitter * grid[None]


def capture(rng: np.random.Generator, img: np.ndarray, spec: DomainSpec) -> np.ndarray:
    img = img * spec.gain * rng.uniform(0.9, 1.1)
    img = img + rng.normal(0, spec.noise, size=img.shape)
    return np.clip(img, 0.0, 1.0)


def render_sample(rng: np.random.Generator, spec: DomainSpec, label: int) -> np.ndarray:
    img = render_scene(rng, spec.hue)
    if label == ATTACK:
        img = recapture(rng, img, spec)
    img = capture(rng, img, spec)
    return np.round(img * 255).astype(np.uint8)


def _split(spec: DomainSpec, split: str, n_gen: int, n_att: int, client: int) -> Dataset:
    code = SPLITS[split]
    seq = np.random.SeedSequence([spec.seed, spec.domain_id, code])
    rng = np.random.default_rng(seq)
    labels = np.array([GENUINE] * n_gen + [ATTACK] * n_att, dtype=np.int64)
    images = np.empty((len(labels), 3, IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
    for i, lab in enumerate(labels):
        images[i] = render_sample(rng, spec, int(lab))
    ids = spec.domain_id * 10_000_000 + code * 1_000_000 + np.arange(len(labels), dtype=np.int64)
    return Dataset(images, labels, ids, np.full(len(labels), client, dtype=np.int64))


@dataclass
class DomainData:
    spec: DomainSpec
    train: Dataset
    test: Dataset
    client: int = -1
    extra: dict = field(default_factory=dict)


def generate_domain(spec: DomainSpec, client: int = -1) -> DomainData:
    """Deterministic train/test splits for one domain.

    Splits draw from independent seed streams and carry disjoint id ranges.
    """
    train = _split(spec, "train", spec.train_genuine, spec.train_attack, client)
    test = _split(spec, "test", spec.test_genuine, spec.test_attack, client)
    return DomainData(spec, train, test, client)


def client_specs(base: DomainSpec, n_clients: int, train_genuine: int, seed: int) -> list[DomainSpec]:
    """Per-client variations of a target domain (each client is its own small domain)."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, base.domain_id, 7]))
    out = []
    for c in range(n_clients):
        out.append(
            replace(
                base,
                domain_id=base.domain_id * 10 + c + 1,
                hue=float(np.clip(base.hue + rng.uniform(-0.03, 0.03), 0, 1)),
                gain=float(np.clip(base.gain * rng.uniform(0.85, 1.15), 0.2, 2.0)),
                noise=float(np.clip(base.noise * rng.uniform(0.7, 1.3), 0, 0.3)),
                grid_strength=float(np.clip(base.grid_strength * rng.uniform(0.7, 1.3), 0, 0.5)),
                grid_period=float(np.clip(base.grid_period * rng.uniform(0.8, 1.25), 2, 32)),
                blur=float(np.clip(base.blur * rng.uniform(0.7, 1.3), 0, 8)),
                color_shift=tuple(float(c) for c in np.clip(
                    np.asarray(base.color_shift) + rng.uniform(-0.03, 0.03, size=3), -0.5, 0.5
                )),
                train_genuine=train_genuine,
                train_attack=0,
                seed=base.seed + 1000 * (c + 1),
            )
        )
    return out


def grid_band_energy(images: np.ndarray, low: float = 1 / 10, high: float = 1 / 2.5) -> np.ndarray:
    """Per-image share of luminance spectral power in a mid/high frequency band."""
    x = images.astype(np.float64).mean(axis=1) / 255.0
    x = x - x.mean(axis=(1, 2), keepdims=True)
    power = np.abs(np.fft.fft2(x)) ** 2
    f = np.fft.fftfreq(x.shape[-1])
    rad = np.sqrt(f[:, None] ** 2 + f[None, :] ** 2)
    band = (rad >= low) & (rad <= high)
    total = power.sum(axis=(1, 2)) + 1e-12
    return power[:, band].sum(axis=1) / total

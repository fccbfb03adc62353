"""Synthetic Mueller-matrix material dataset.

Each material is a mixture of a rotated Fresnel reflector (diattenuating
retarder) and an ideal depolarizer::

    M = alpha * C(-psi) F(r_s, r_p, delta) C(psi) + beta * diag(1, 0, 0, 0)

Samples of one material share these parameters and differ only by a small
Gaussian perturbation of every entry. Randomness is keyed by
``(seed, material_id, sample_index)`` so any sample can be regenerated alone.

The per-category ranges in ``CATEGORY_CONFIG`` are tunable configuration,
not measured statistics.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mueller import is_passive, maps_to_physical, rotate_mueller, rotate_mueller_batch

CATEGORIES = ("wood", "metal", "resin", "fabric", "stone")
N_CLASSES = len(CATEGORIES)

MAX_ATTEMPTS = 100
NOISE_REL_SIGMA = 0.01
TEST_FRACTION = 0.3
INTENSITY_RANGE = (0.01, 10.0)

_STREAM_PARAMS, _STREAM_NOISE, _STREAM_SPLIT = 0, 1, 2


def category_index(category) -> int:
    if isinstance(category, (int, np.integer)):
        if not 0 <= category < N_CLASSES:
            raise ValueError(f"category index out of range: {category}")
        return int(category)
    try:
        return CATEGORIES.index(str(category).lower())
    except ValueError:
        raise ValueError(f"unknown category {category!r}") from None


# Ranges are (low, high) for uniform draws. ``rp_ratio`` scales r_s to get r_p,
# ``delta`` is (centre, half_width) in radians.
CATEGORY_CONFIG = {
    "wood": dict(alpha=(0.20, 0.30), beta=(0.50, 0.70), rs=(0.50, 0.80), rp_ratio=(0.60, 0.85), delta=(0.0, 0.4)),
    "metal": dict(alpha=(0.60, 0.95), beta=(0.03, 0.10), rs=(0.80, 0.95), rp_ratio=(0.90, 1.00), delta=(math.pi, 0.35)),
    "resin": dict(alpha=(0.30, 0.60), beta=(0.20, 0.45), rs=(0.50, 0.90), rp_ratio=(0.30, 0.60), delta=(0.0, 0.3)),
    "fabric": dict(alpha=(0.03, 0.12), beta=(0.60, 0.90), rs=(0.40, 0.80), rp_ratio=(0.70, 0.95), delta=(0.0, math.pi)),
    "stone": dict(alpha=(0.30, 0.50), beta=(0.25, 0.45), rs=(0.50, 0.85), rp_ratio=(0.75, 0.95), delta=(math.pi / 2, 0.6)),
}


@dataclass(frozen=True)
class FresnelParams:
    """Three-parameter Fresnel reflection, ordered so that ``r_p <= r_s``."""

    r_s: float
    r_p: float
    delta: float

    def __post_init__(self):
        if not (0.0 <= self.r_p <= self.r_s <= 1.0):
            raise ValueError(f"need 0 <= r_p <= r_s <= 1, got r_s={self.r_s}, r_p={self.r_p}")
        if not (0.0 <= self.delta < 2 * math.pi):
            raise ValueError(f"phase delay must lie in [0, 2π), got {self.delta}")


def fresnel_mueller(p: FresnelParams) -> np.ndarray:
    g = math.sqrt(p.r_s * p.r_p)
    mean, diff = (p.r_s + p.r_p) / 2, (p.r_s - p.r_p) / 2
    cd, sd = g * math.cos(p.delta), g * math.sin(p.delta)
    return np.array(
        [
            [mean, diff, 0.0, 0.0],
            [diff, mean, 0.0, 0.0],
            [0.0, 0.0, cd, sd],
            [0.0, 0.0, -sd, cd],
        ]
    )


@dataclass(frozen=True)
class MaterialParams:
    alpha: float
    beta: float
    fresnel: FresnelParams
    psi: float

    def mueller(self) -> np.ndarray:
        spec = rotate_mueller(fresnel_mueller(self.fresnel), self.psi)
        return self.alpha * spec + self.beta * np.diag([1.0, 0.0, 0.0, 0.0])


@dataclass(frozen=True)
class MaterialSample:
    mueller: np.ndarray = field(repr=False)
    category: int
    material_id: int

    @property
    def category_name(self) -> str:
        return CATEGORIES[self.category]


def draw_material_params(category, rng: np.random.Generator) -> MaterialParams:
    cfg = CATEGORY_CONFIG[CATEGORIES[category_index(category)]]
    alpha = rng.uniform(*cfg["alpha"])
    beta = min(rng.uniform(*cfg["beta"]), 1.0 - alpha)
    r_s = rng.uniform(*cfg["rs"])
    r_p = r_s * rng.uniform(*cfg["rp_ratio"])
    centre, half = cfg["delta"]
    delta = float(np.mod(centre + rng.uniform(-half, half), 2 * math.pi))
    psi = rng.uniform(0.0, math.pi)
    return MaterialParams(alpha, beta, FresnelParams(r_s, r_p, delta), psi)


def _valid(m: np.ndarray) -> bool:
    return is_passive(m) and maps_to_physical(m)


def perturb(m: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Add entry-wise Gaussian noise, re-drawing until the result stays physical."""
    sigma = NOISE_REL_SIGMA * m[0, 0]
    for _ in range(MAX_ATTEMPTS):
        out = m + rng.normal(0.0, sigma, size=(4, 4))
        if _valid(out):
            return out
    raise RuntimeError("perturbation kept producing non-physical matrices; check the category config")


def draw_valid_params(category, rng: np.random.Generator) -> MaterialParams:
    """Draw material parameters whose noiseless matrix is physical."""
    idx = category_index(category)
    for _ in range(MAX_ATTEMPTS):
        p = draw_material_params(idx, rng)
        if _valid(p.mueller()):
            return p
    raise RuntimeError(f"could not draw a physical {CATEGORIES[idx]} material in {MAX_ATTEMPTS} attempts")


def synthesize_material(
    category,
    rng: np.random.Generator,
    *,
    material_id: int = 0,
    params: MaterialParams | None = None,
    noise: bool = True,
) -> MaterialSample:
    """Draw one material sample. Pass ``params`` to pin the material parameters."""
    idx = category_index(category)
    if params is None:
        params = draw_valid_params(idx, rng)
    base = params.mueller()
    if not _valid(base):
        raise ValueError("pinned material parameters give a non-physical matrix")
    m = perturb(base, rng) if noise else base
    return MaterialSample(m, idx, material_id)


@dataclass
class Dataset:
    samples: list[MaterialSample]
    train_ids: list[int]
    test_ids: list[int]
    seed: int | None = None
    materials_per_category: int | None = None
    samples_per_material: int | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """Mueller matrices (N, 4, 4) and labels (N,) for ``"train"``, ``"test"`` or ``"all"``."""
        if name == "all":
            chosen = self.samples
        else:
            ids = {"train": self.train_ids, "test": self.test_ids}[name]
            keep = set(ids)
            chosen = [s for s in self.samples if s.material_id in keep]
        if not chosen:
            return np.zeros((0, 4, 4)), np.zeros(0, dtype=int)
        return np.stack([s.mueller for s in chosen]), np.array([s.category for s in chosen])

    def manifest(self) -> dict:
        return {
            "seed": self.seed,
            "materials_per_category": self.materials_per_category,
            "samples_per_material": self.samples_per_material,
            "split": {"train": list(self.train_ids), "test": list(self.test_ids)},
        }


def _rng(*key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def split_materials(ids_by_category: dict[int, list[int]], seed: int) -> tuple[list[int], list[int]]:
    """Stratified 70/30 split of material ids."""
    rng = _rng(seed, _STREAM_SPLIT)
    train, test = [], []
    for cat in sorted(ids_by_category):
        ids = np.array(sorted(ids_by_category[cat]))
        ids = ids[rng.permutation(len(ids))]
        n_test = int(round(TEST_FRACTION * len(ids)))
        if n_test >= len(ids):
            n_test = len(ids) - 1
        test += ids[:n_test].tolist()
        train += ids[n_test:].tolist()
    return sorted(train), sorted(test)


def generate_dataset(materials_per_category: int = 17, samples_per_material: int = 10, seed: int = 1) -> Dataset:
    if materials_per_category < 1 or samples_per_material < 1:
        raise ValueError("counts must be at least 1")
    samples: list[MaterialSample] = []
    ids_by_category: dict[int, list[int]] = {}
    for cat in range(N_CLASSES):
        for j in range(materials_per_category):
            mid = cat * materials_per_category + j
            ids_by_category.setdefault(cat, []).append(mid)
            base = draw_valid_params(cat, _rng(seed, _STREAM_PARAMS, mid)).mueller()
            for k in range(samples_per_material):
                m = perturb(base, _rng(seed, _STREAM_NOISE, mid, k))
                samples.append(MaterialSample(m, cat, mid))
    train, test = split_materials(ids_by_category, seed)
    return Dataset(samples, train, test, seed, materials_per_category, samples_per_material)


def write_dataset(ds: Dataset, out_dir, name: str = "dataset") -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    jsonl, manifest = out / f"{name}.jsonl", out / f"{name}.manifest.json"
    with open(jsonl, "w") as fh:
        for s in ds.samples:
            rec = {
                "material_id": s.material_id,
                "category": s.category_name,
                "mueller": [float(v) for v in s.mueller.ravel()],
            }
            fh.write(json.dumps(rec) + "\n")
    manifest.write_text(json.dumps(ds.manifest(), indent=2) + "\n")
    return jsonl, manifest


def read_dataset(path, split_seed: int = 0) -> Dataset:
    """Load a JSONL dataset; ``path`` may be the file or its directory.

    Without a manifest next to it the split is regenerated from ``split_seed``.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "dataset.jsonl"
    samples = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                m = np.array(rec["mueller"], dtype=float).reshape(4, 4)
                samples.append(MaterialSample(m, category_index(rec["category"]), int(rec["material_id"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad record ({exc})") from exc
    manifest_path = path.with_name(path.stem + ".manifest.json")
    if manifest_path.exists():
        man = json.loads(manifest_path.read_text())
        return Dataset(
            samples,
            list(man["split"]["train"]),
            list(man["split"]["test"]),
            man.get("seed"),
            man.get("materials_per_category"),
            man.get("samples_per_material"),
        )
    by_cat: dict[int, list[int]] = {}
    for s in samples:
        if s.material_id not in by_cat.setdefault(s.category, []):
            by_cat[s.category].append(s.material_id)
    train, test = split_materials(by_cat, split_seed)
    return Dataset(samples, train, test, split_seed)


def augment_intensity(m: np.ndarray, rng: np.random.Generator | None = None, scale: float | None = None) -> np.ndarray:
    """Multiply by ``scale`` or by a draw from Uniform(0.01, 10)."""
    c = rng.uniform(*INTENSITY_RANGE) if scale is None else scale
    return c * np.asarray(m)


def augment_rotation(m: np.ndarray, rng: np.random.Generator | None = None, rho: float | None = None) -> np.ndarray:
    """Rotate the sample about the optical axis by ``rho`` or by a draw from Uniform(0, π)."""
    r = rng.uniform(0.0, math.pi) if rho is None else rho
    return rotate_mueller(np.asarray(m), r)


def augment_batch(m: np.ndarray, rng: np.random.Generator, *, intensity: bool = True, rotation: bool = True) -> np.ndarray:
    """Both augmentations over a (B, 4, 4) batch, one draw per sample."""
    b = m.shape[0]
    scale = rng.uniform(*INTENSITY_RANGE, size=b) if intensity else np.ones(b)
    rho = rng.uniform(0.0, math.pi, size=b) if rotation else np.zeros(b)
    return scale[:, None, None] * rotate_mueller_batch(m, rho)

"""Clustered geometric channel model for a dual-polarized uniform planar array.

Every channel sample is a pure function of ``(scenario.seed, site, split,
index)``: the random stream of sample ``i`` is a Philox generator keyed by the
scenario seed whose counter starts at ``[i, split, site, 0]``.  Datasets are
therefore reproducible bit-for-bit regardless of how many workers produce
them or how large the other splits are.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidInputError

__all__ = [
    "ArrayGeometry",
    "ScenarioConfig",
    "ChannelDataset",
    "SPLITS",
    "steering_vector",
    "draw_channel",
    "sample_stream",
    "generate_dataset",
    "generate_multiscenario_dataset",
    "resolve_cluster_centers",
    "site_indices",
]

SPLITS = ("train", "val", "test")
SPLIT_TAGS = {"train": 0, "val": 1, "test": 2}

# counter word used for per-site cluster-center draws (never collides with a split tag)
_CENTERS_TAG = 7
_CHUNK = 2048
_MAX_COUNT = 2**40


@dataclass(frozen=True)
class ArrayGeometry:
    """Uniform planar array with ``n_h`` x ``n_v`` dual-polarized elements."""

    n_h: int = 4
    n_v: int = 4
    element_spacing: float = 0.5

    def __post_init__(self):
        if int(self.n_h) < 1 or int(self.n_v) < 1:
            raise InvalidInputError(f"array needs n_h, n_v >= 1, got {self.n_h}x{self.n_v}")
        if not np.isfinite(self.element_spacing) or self.element_spacing <= 0:
            raise InvalidInputError("element_spacing must be positive")

    @property
    def n_t(self) -> int:
        return self.n_h * self.n_v

    @property
    def n_c(self) -> int:
        return 2 * self.n_t


@dataclass(frozen=True)
class ScenarioConfig:
    """Propagation scenario seen by one base-station site.

    ``cluster_azimuth_centers`` / ``cluster_elevation_centers`` may be left as
    ``None``; the centers are then drawn uniformly from ``azimuth_range`` and
    ``elevation_range`` using the scenario seed.
    """

    geometry: ArrayGeometry = field(default_factory=ArrayGeometry)
    num_clusters: int = 6
    paths_per_cluster: int = 4
    cluster_azimuth_centers: Optional[tuple[float, ...]] = None
    cluster_elevation_centers: Optional[tuple[float, ...]] = None
    azimuth_range: tuple[float, float] = (-np.pi / 3, np.pi / 3)
    elevation_range: tuple[float, float] = (-np.pi / 8, np.pi / 8)
    intra_cluster_angle_spread: float = 0.05
    per_path_power_decay: float = 0.7
    cross_pol_leakage: float = 0.3
    env_id: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.num_clusters < 1:
            raise InvalidInputError("num_clusters must be >= 1")
        if self.paths_per_cluster < 1:
            raise InvalidInputError("paths_per_cluster must be >= 1")
        if not 0.0 <= self.cross_pol_leakage <= 1.0:
            raise InvalidInputError("cross_pol_leakage must lie in [0, 1]")
        if not self.per_path_power_decay > 0:
            raise InvalidInputError("per_path_power_decay must be positive")
        if not self.intra_cluster_angle_spread >= 0:
            raise InvalidInputError("intra_cluster_angle_spread must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        for name in ("cluster_azimuth_centers", "cluster_elevation_centers"):
            centers = getattr(self, name)
            if centers is None:
                continue
            centers = tuple(float(c) for c in centers)
            object.__setattr__(self, name, centers)
            if len(centers) != self.num_clusters:
                raise InvalidInputError(f"{name} needs {self.num_clusters} values, got {len(centers)}")
        _check_angles(self.cluster_azimuth_centers or (), np.pi, "azimuth")
        _check_angles(self.cluster_elevation_centers or (), np.pi / 2, "elevation")
        _check_angles(self.azimuth_range, np.pi, "azimuth")
        _check_angles(self.elevation_range, np.pi / 2, "elevation")

    @property
    def n_c(self) -> int:
        return self.geometry.n_c

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        data["geometry"] = ArrayGeometry(**data.get("geometry", {}))
        for key in ("cluster_azimuth_centers", "cluster_elevation_centers", "azimuth_range", "elevation_range"):
            if data.get(key) is not None:
                data[key] = tuple(float(v) for v in data[key])
        return cls(**data)


def _check_angles(values, bound, what):
    arr = np.asarray(values, dtype=float)
    if arr.size and (not np.all(np.isfinite(arr)) or np.any(np.abs(arr) > bound + 1e-12)):
        raise InvalidInputError(f"{what} angles must be finite and within +/-{bound:.4f} rad")


@dataclass(eq=False)
class ChannelDataset:
    """Train/val/test channel matrices (one row per sample, complex64)."""

    scenario: ScenarioConfig
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray
    n_sites: int = 1

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise InvalidInputError(f"unknown split {name!r}")
        return getattr(self, name)

    @property
    def counts(self) -> dict:
        return {name: len(getattr(self, name)) for name in SPLITS}


def steering_vector(geometry: ArrayGeometry, azimuth: float, elevation: float) -> np.ndarray:
    """UPA response for a plane wave from ``(azimuth, elevation)``.

    Element ``(p, q)`` (horizontal ``p``, vertical ``q``, row-major, 0-indexed)
    carries ``exp(j 2 pi d (p sin(az) cos(el) + q sin(el)))``.

    Examples
    --------
    >>> steering_vector(ArrayGeometry(2, 1), np.pi / 2, 0.0).round(12)
    array([ 1.+0.j, -1.+0.j])
    """
    az = np.asarray(azimuth, dtype=float)
    el = np.asarray(elevation, dtype=float)
    if not (np.all(np.isfinite(az)) and np.all(np.isfinite(el))):
        raise InvalidInputError("steering angles must be finite")
    return _steering(geometry, az, el)


def _steering(geometry: ArrayGeometry, az: np.ndarray, el: np.ndarray) -> np.ndarray:
    # broadcasts over leading dims of az/el; trailing axis is the element index
    p = np.repeat(np.arange(geometry.n_h), geometry.n_v)
    q = np.tile(np.arange(geometry.n_v), geometry.n_h)
    u = (np.sin(az) * np.cos(el))[..., None]
    v = np.sin(el)[..., None]
    phase = 2.0 * np.pi * geometry.element_spacing * (p * u + q * v)
    return np.exp(1j * phase)


def _key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(2, dtype=np.uint64)


def sample_stream(seed: int, index: int, split: int = 0, site: int = 0) -> np.random.Generator:
    """Counter-based random stream for one sample."""
    return np.random.Generator(np.random.Philox(key=_key(seed), counter=[index, split, site, 0]))


def resolve_cluster_centers(scenario: ScenarioConfig, site: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Cluster centers for ``site``.

    Site 0 honours explicit centers in the scenario; any other site always
    re-draws them from the configured angle ranges.
    """
    n = scenario.num_clusters
    az, el = scenario.cluster_azimuth_centers, scenario.cluster_elevation_centers
    if site == 0 and az is not None and el is not None:
        return np.array(az, dtype=float), np.array(el, dtype=float)
    rng = np.random.Generator(np.random.Philox(key=_key(scenario.seed), counter=[site, _CENTERS_TAG, 0, 0]))
    draw_az = rng.uniform(*scenario.azimuth_range, size=n)
    draw_el = rng.uniform(*scenario.elevation_range, size=n)
    if site == 0:
        if az is not None:
            draw_az = np.array(az, dtype=float)
        if el is not None:
            draw_el = np.array(el, dtype=float)
    return draw_az, draw_el


def _path_powers(scenario: ScenarioConfig) -> np.ndarray:
    per_cluster = scenario.per_path_power_decay ** np.arange(scenario.paths_per_cluster)
    powers = np.tile(per_cluster, scenario.num_clusters)
    return powers / powers.sum()


def _draw_variates(scenario: ScenarioConfig, rng: np.random.Generator):
    n_paths = scenario.num_clusters * scenario.paths_per_cluster
    offsets = rng.standard_normal((2, n_paths))
    gains = rng.standard_normal((2, 2, n_paths))
    return offsets, (gains[:, 0] + 1j * gains[:, 1]) / np.sqrt(2.0)


def _synthesize(scenario: ScenarioConfig, centers, offsets: np.ndarray, gains: np.ndarray) -> np.ndarray:
    """Channels from stacked variates; offsets (N, 2, P), gains (N, 2, P)."""
    az_c, el_c = centers
    per = scenario.paths_per_cluster
    spread = scenario.intra_cluster_angle_spread
    az = np.repeat(az_c, per) + spread * offsets[:, 0]
    el = np.repeat(el_c, per) + spread * offsets[:, 1]
    az = np.mod(az + np.pi, 2 * np.pi) - np.pi
    el = np.clip(el, -np.pi / 2, np.pi / 2)
    a = _steering(scenario.geometry, az, el)  # (N, P, n_t)
    amp = np.sqrt(_path_powers(scenario))
    chi = scenario.cross_pol_leakage
    g1 = gains[:, 0]
    g2 = np.sqrt(1.0 - chi) * gains[:, 1] + np.sqrt(chi) * g1
    h1 = np.einsum("np,npt->nt", amp * g1, a)
    h2 = np.einsum("np,npt->nt", amp * g2, a)
    return np.concatenate([h1, h2], axis=1)


def draw_channel(scenario: ScenarioConfig, rng: np.random.Generator, site: int = 0) -> np.ndarray:
    """Draw one channel vector of length ``n_c`` from ``rng``.

    Gains are normalized so that ``E[||h||^2] = n_c``.
    """
    offsets, gains = _draw_variates(scenario, rng)
    centers = resolve_cluster_centers(scenario, site)
    return _synthesize(scenario, centers, offsets[None], gains[None])[0]


def _generate_block(scenario, centers, seed, split_tag, site_word, indices):
    key = _key(seed)
    n_paths = scenario.num_clusters * scenario.paths_per_cluster
    offsets = np.empty((len(indices), 2, n_paths))
    gains = np.empty((len(indices), 2, n_paths), dtype=complex)
    for row, i in enumerate(indices):
        rng = np.random.Generator(np.random.Philox(key=key, counter=[int(i), split_tag, site_word, 0]))
        offsets[row], gains[row] = _draw_variates(scenario, rng)
    return _synthesize(scenario, centers, offsets, gains).astype(np.complex64)


def _generate_split(scenario, split, count, site_of, workers):
    """Generate ``count`` samples; ``site_of(i)`` maps sample index to site."""
    tag = SPLIT_TAGS[split]
    out = np.empty((count, scenario.n_c), dtype=np.complex64)
    if count == 0:
        return out
    sites = np.array([site_of(i) for i in range(count)])
    jobs = []
    for site in np.unique(sites):
        idx = np.flatnonzero(sites == site)
        centers = resolve_cluster_centers(scenario, int(site))
        for start in range(0, len(idx), _CHUNK):
            jobs.append((idx[start:start + _CHUNK], int(site), centers))

    def run(job):
        idx, site, centers = job
        return idx, _generate_block(scenario, centers, scenario.seed, tag, site, idx)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    for idx, block in results:
        out[idx] = block
    return out


def _check_counts(counts):
    for name, n in counts.items():
        if not isinstance(n, (int, np.integer)) or n < 0 or n > _MAX_COUNT:
            raise InvalidInputError(f"{name} count must be an integer in [0, 2^40], got {n!r}")


def generate_dataset(scenario: ScenarioConfig, n_train: int, n_val: int, n_test: int,
                     workers: int = 1) -> ChannelDataset:
    """Site-specific dataset with exactly the requested split sizes."""
    counts = {"train": n_train, "val": n_val, "test": n_test}
    _check_counts(counts)
    splits = {name: _generate_split(scenario, name, int(n), lambda i: 0, workers) for name, n in counts.items()}
    return ChannelDataset(scenario, **splits)


def generate_multiscenario_dataset(base: ScenarioConfig, n_sites: int, n_train: int, n_val: int,
                                   n_test: int, workers: int = 1) -> ChannelDataset:
    """Pool samples from ``n_sites`` deployments sharing ``base``'s statistics.

    Site ``s`` re-draws its cluster centers; sample ``i`` of every split comes
    from site ``i % n_sites``, so each site contributes ``count // n_sites``
    samples (+1 for the first ``count % n_sites`` sites).
    """
    if not isinstance(n_sites, (int, np.integer)) or n_sites < 1:
        raise InvalidInputError("n_sites must be >= 1")
    counts = {"train": n_train, "val": n_val, "test": n_test}
    _check_counts(counts)
    if n_sites == 1:
        return generate_dataset(base, n_train, n_val, n_test, workers=workers)
    for name, n in counts.items():
        if 0 < n < n_sites:
            raise InvalidInputError(f"{name} count {n} smaller than n_sites={n_sites}")
    splits = {
        name: _generate_split(base, name, int(n), lambda i: 1 + i % n_sites, workers)
        for name, n in counts.items()
    }
    return ChannelDataset(base, n_sites=n_sites, **splits)


def site_indices(count: int, n_sites: int, site: int) -> np.ndarray:
    """Row indices of a pooled split that belong to ``site`` (0-based)."""
    return np.arange(site, count, n_sites)

"""Candidate nuclear lattice sites with precomputed hyperfine couplings.

A catalog file is delimited text with a header row and the columns
``x_angstrom, y_angstrom, z_angstrom, a_par_khz, a_perp_khz``.  Lines starting
with ``#`` are ignored.  Coordinates are Cartesian, in the defect frame, with
the defect at the origin and the defect axis along z.
"""
from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.spatial import cKDTree

COLUMNS = ("x_angstrom", "y_angstrom", "z_angstrom", "a_par_khz", "a_perp_khz")

DEFAULT_CUTOFF_KHZ = 5.0
DEFAULT_RADIUS = 5.0
# couplings equal after rounding to this many decimals (kHz) share a class
COUPLING_DECIMALS = 2


class CatalogError(ValueError):
    pass


@dataclass(frozen=True)
class LatticeSite:
    site_id: int
    position: tuple[float, float, float]
    a_par: float
    a_perp: float
    symmetry_class: int

    @property
    def magnitude(self) -> float:
        return math.hypot(self.a_par, self.a_perp)


@dataclass(eq=False)
class LatticeCatalog:
    """Immutable table of candidate sites.

    Site ``i`` is row ``i`` of every array.  ``neighbor_index[i]`` holds the
    sorted ids of sites within ``radius`` of site ``i`` (never ``i`` itself).
    """

    positions: np.ndarray
    a_par: np.ndarray
    a_perp: np.ndarray
    cutoff_khz: float = DEFAULT_CUTOFF_KHZ
    radius: float = DEFAULT_RADIUS
    symmetry_class: np.ndarray = field(init=False)
    neighbor_index: list[np.ndarray] = field(init=False)

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.a_par = np.asarray(self.a_par, dtype=float).ravel()
        self.a_perp = np.asarray(self.a_perp, dtype=float).ravel()
        n = len(self.positions)
        if n == 0:
            raise CatalogError("catalog contains no sites")
        if len(self.a_par) != n or len(self.a_perp) != n:
            raise CatalogError("positions and couplings differ in length")
        if np.any(self.a_perp < 0):
            raise CatalogError("a_perp must be non-negative")
        if not (np.all(np.isfinite(self.positions)) and np.all(np.isfinite(self.a_par))
                and np.all(np.isfinite(self.a_perp))):
            raise CatalogError("non-finite value in catalog")
        self.symmetry_class = assign_symmetry_classes(self.a_par, self.a_perp)
        self.neighbor_index = build_neighbor_index(self.positions, self.radius)
        for arr in (self.positions, self.a_par, self.a_perp, self.symmetry_class):
            arr.setflags(write=False)

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def n_sites(self) -> int:
        return len(self.positions)

    @property
    def magnitude(self) -> np.ndarray:
        return np.hypot(self.a_par, self.a_perp)

    @property
    def sites(self) -> list[LatticeSite]:
        return [self.site(i) for i in range(self.n_sites)]

    def site(self, site_id: int) -> LatticeSite:
        x, y, z = (float(v) for v in self.positions[site_id])
        return LatticeSite(
            site_id=int(site_id),
            position=(x, y, z),
            a_par=float(self.a_par[site_id]),
            a_perp=float(self.a_perp[site_id]),
            symmetry_class=int(self.symmetry_class[site_id]),
        )

    def neighbors(self, site_id: int) -> np.ndarray:
        return self.neighbor_index[site_id]

    def couplings(self, site_ids: Sequence[int]) -> np.ndarray:
        """(k, 2) array of (a_par, a_perp) in kHz for the given sites."""
        idx = np.asarray(site_ids, dtype=int)
        return np.column_stack([self.a_par[idx], self.a_perp[idx]])

    def with_radius(self, radius: float) -> "LatticeCatalog":
        return LatticeCatalog(self.positions, self.a_par, self.a_perp,
                              cutoff_khz=self.cutoff_khz, radius=radius)


def assign_symmetry_classes(a_par: np.ndarray, a_perp: np.ndarray,
                            decimals: int = COUPLING_DECIMALS) -> np.ndarray:
    """Label sites by exact match of rounded couplings, in order of first appearance."""
    keys = zip(np.round(a_par, decimals).tolist(), np.round(a_perp, decimals).tolist())
    labels: dict[tuple[float, float], int] = {}
    out = np.empty(len(a_par), dtype=int)
    for i, key in enumerate(keys):
        # -0.0 and 0.0 must group together
        key = (key[0] + 0.0, key[1] + 0.0)
        out[i] = labels.setdefault(key, len(labels))
    return out


def build_neighbor_index(positions: np.ndarray, radius: float) -> list[np.ndarray]:
    """For each site, the sorted ids of all other sites within ``radius`` (inclusive)."""
    if not radius > 0:
        raise CatalogError(f"neighbor radius must be positive, got {radius}")
    positions = np.asarray(positions, dtype=float).reshape(-1, 3)
    pairs = cKDTree(positions).query_pairs(radius, output_type="ndarray")
    nbrs: list[list[int]] = [[] for _ in range(len(positions))]
    for i, j in pairs.tolist():
        nbrs[i].append(j)
        nbrs[j].append(i)
    return [np.array(sorted(v), dtype=int) for v in nbrs]


def symmetry_class_sizes(catalog: LatticeCatalog) -> dict[int, int]:
    counts = Counter(catalog.symmetry_class.tolist())
    return dict(sorted(counts.items()))


def passes_cutoff(a_par: np.ndarray, a_perp: np.ndarray, cutoff_khz: float) -> np.ndarray:
    return (np.abs(a_par) > cutoff_khz) | (np.abs(a_perp) > cutoff_khz)


def filter_catalog(catalog: LatticeCatalog, cutoff_khz: float) -> LatticeCatalog:
    """Drop sites whose couplings are both at or below ``cutoff_khz`` (ids are renumbered)."""
    if cutoff_khz < 0:
        raise CatalogError("cutoff must be non-negative")
    keep = passes_cutoff(catalog.a_par, catalog.a_perp, cutoff_khz)
    if not keep.any():
        raise CatalogError(f"no site exceeds the {cutoff_khz} kHz cutoff")
    return LatticeCatalog(catalog.positions[keep], catalog.a_par[keep], catalog.a_perp[keep],
                          cutoff_khz=max(cutoff_khz, catalog.cutoff_khz), radius=catalog.radius)


def _data_lines(lines: Iterable[str]) -> Iterable[str]:
    for line in lines:
        stripped = line.strip()
        if stripped and not stripped.startswith("#"):
            yield stripped


def read_catalog_table(path: str | Path) -> np.ndarray:
    """Parse a catalog file into an (n, 5) float array in ``COLUMNS`` order."""
    path = Path(path)
    with path.open(newline="") as fh:
        lines = list(_data_lines(fh))
    if not lines:
        raise CatalogError(f"{path}: empty catalog file")
    delimiter = "," if "," in lines[0] else None
    if delimiter:
        rows = list(csv.reader(lines))
    else:
        rows = [line.split() for line in lines]
    header = [h.strip() for h in rows[0]]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise CatalogError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = [header.index(c) for c in COLUMNS]
    table = np.empty((len(rows) - 1, len(COLUMNS)))
    for r, row in enumerate(rows[1:]):
        if len(row) != len(header):
            raise CatalogError(f"{path}: row {r + 1} has {len(row)} fields, expected {len(header)}")
        try:
            table[r] = [float(row[c]) for c in cols]
        except ValueError as exc:
            raise CatalogError(f"{path}: row {r + 1}: {exc}") from None
    if len(table) == 0:
        raise CatalogError(f"{path}: catalog has a header but no sites")
    return table


def load_catalog(path: str | Path, cutoff_khz: float = DEFAULT_CUTOFF_KHZ,
                 radius: float = DEFAULT_RADIUS) -> LatticeCatalog:
    if cutoff_khz < 0:
        raise CatalogError("cutoff must be non-negative")
    table = read_catalog_table(path)
    keep = passes_cutoff(table[:, 3], table[:, 4], cutoff_khz)
    if not keep.any():
        raise CatalogError(f"{path}: no site exceeds the {cutoff_khz} kHz cutoff")
    table = table[keep]
    return LatticeCatalog(table[:, :3], table[:, 3], table[:, 4],
                          cutoff_khz=cutoff_khz, radius=radius)


def write_catalog(path: str | Path, positions: np.ndarray, a_par: np.ndarray,
                  a_perp: np.ndarray, comment: str | None = None) -> None:
    path = Path(path)
    with path.open("w", newline="") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for (x, y, z), ap, ar in zip(np.asarray(positions), a_par, a_perp):
            writer.writerow([f"{x:.4f}", f"{y:.4f}", f"{z:.4f}", f"{ap:.2f}", f"{ar:.2f}"])


# --- point-dipole stand-in for the ab initio table --------------------------

DIAMOND_LATTICE_CONSTANT = 3.567  # Angstrom
GAMMA_E = 1.76085963023e11  # |electron gyromagnetic ratio|, rad s^-1 T^-1
GAMMA_13C = 6.728284e7  # rad s^-1 T^-1


def dipolar_prefactor_khz_a3() -> float:
    """mu0/(4 pi) * hbar * gamma_e * gamma_n / (2 pi), in kHz * Angstrom^3."""
    mu0_over_4pi = 1e-7
    hbar = 1.054571817e-34
    hz_m3 = mu0_over_4pi * hbar * GAMMA_E * GAMMA_13C / (2 * math.pi)
    return hz_m3 * 1e30 / 1e3


def dipolar_diamond_sites(cutoff_khz: float = DEFAULT_CUTOFF_KHZ, max_khz: float | None = 500.0,
                          lattice_constant: float = DIAMOND_LATTICE_CONSTANT):
    """Carbon sites around an NV center with point-dipole hyperfine couplings.

    The vacancy sits at the origin and the nitrogen on the [111] neighbor; both
    are excluded.  Coordinates are rotated so the NV axis is z.  Sites are kept
    when either coupling component exceeds ``cutoff_khz`` and the coupling
    magnitude does not exceed ``max_khz``.  Returns ``(positions, a_par, a_perp)``
    ordered by distance from the defect.
    """
    c = dipolar_prefactor_khz_a3()
    r_max = (2 * c / cutoff_khz) ** (1 / 3) + lattice_constant
    n = int(math.ceil(r_max / lattice_constant)) + 1
    fcc = np.array([[0, 0, 0], [0, .5, .5], [.5, 0, .5], [.5, .5, 0]])
    basis = np.vstack([fcc, fcc + 0.25])
    grid = np.array(np.meshgrid(*(np.arange(-n, n + 1),) * 3, indexing="ij")).reshape(3, -1).T
    frac = (grid[:, None, :] + basis[None, :, :]).reshape(-1, 3)
    cart = frac * lattice_constant

    z = np.array([1.0, 1.0, 1.0]) / math.sqrt(3)
    x = np.array([1.0, 1.0, -2.0]) / math.sqrt(6)
    y = np.cross(z, x)
    rot = np.vstack([x, y, z])
    pos = cart @ rot.T

    nitrogen = np.array([0.25, 0.25, 0.25]) * lattice_constant @ rot.T
    r = np.linalg.norm(pos, axis=1)
    keep = (r > 1e-6) & (np.linalg.norm(pos - nitrogen, axis=1) > 1e-6) & (r <= r_max)
    pos, r = pos[keep], r[keep]
    cos_t = pos[:, 2] / r
    sin_t = np.sqrt(np.clip(1 - cos_t ** 2, 0, None))
    a_par = -c * (3 * cos_t ** 2 - 1) / r ** 3
    a_perp = 3 * c * np.abs(sin_t * cos_t) / r ** 3
    a_par = np.round(a_par, COUPLING_DECIMALS) + 0.0
    a_perp = np.round(a_perp, COUPLING_DECIMALS) + 0.0
    keep = passes_cutoff(a_par, a_perp, cutoff_khz)
    if max_khz is not None:
        keep &= np.hypot(a_par, a_perp) <= max_khz
    pos, a_par, a_perp, r = pos[keep], a_par[keep], a_perp[keep], r[keep]
    order = np.lexsort((pos[:, 2], pos[:, 1], pos[:, 0], np.round(r, 6)))
    return np.round(pos[order], 4) + 0.0, a_par[order], a_perp[order]


def dipolar_diamond_catalog(cutoff_khz: float = DEFAULT_CUTOFF_KHZ,
                            radius: float = DEFAULT_RADIUS,
                            max_khz: float | None = 500.0) -> LatticeCatalog:
    pos, a_par, a_perp = dipolar_diamond_sites(cutoff_khz, max_khz)
    return LatticeCatalog(pos, a_par, a_perp, cutoff_khz=cutoff_khz, radius=radius)

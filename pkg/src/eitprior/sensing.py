"""Forward model for difference imaging on masked grids.

Covers electrode layouts, stimulation/measurement protocols, a
finite-volume potential solver with harmonic-mean face conductances,
voltage simulation, adjoint sensitivity assembly with the measurement
normalization used throughout, and Gaussian measurement noise.

Electrodes are point sources at in-region cells. The solver works in cell
units with unit drive current; the normalization of difference data
removes both scale factors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import LinearOperator, cg

from .grid import ImageField, RegionMask

__all__ = [
    "SolverError",
    "ElectrodeLayout",
    "Protocol",
    "VoltageFrame",
    "circular_layout",
    "two_layer_layout",
    "adjacent_protocol",
    "cross_layer_protocol",
    "combined_3d_protocol",
    "solve_potential",
    "simulate_voltages",
    "jacobian",
    "normalize_measurements",
    "normalize_conductivity",
    "add_noise",
]

RESIDUAL_LIMIT = 1e-10
V_REF_FLOOR = 1e-14


class SolverError(RuntimeError):
    """Potential solve failed or produced degenerate reference voltages."""


@dataclass(frozen=True)
class ElectrodeLayout:
    """Electrode-to-cell assignment; ``cells`` holds in-region indices.

    For two layers, ids 0..n-1 are the bottom ring and ids n..2n-1 the top
    ring, with electrode i+n vertically above electrode i.
    """

    n_per_layer: int
    n_layers: int
    cells: np.ndarray

    def __post_init__(self) -> None:
        cells = np.asarray(self.cells, dtype=np.int64)
        if cells.shape != (self.n_per_layer * self.n_layers,):
            raise ValueError("cell list does not match the layer configuration")
        if len(set(cells.tolist())) != cells.size:
            raise ValueError("electrode cells must be distinct")
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def n_electrodes(self) -> int:
        return self.n_per_layer * self.n_layers


@dataclass(frozen=True)
class Protocol:
    """Ordered (drive+, drive-, meas+, meas-) electrode-id quadruples."""

    entries: np.ndarray
    n_electrodes: int

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.int64)
        if entries.ndim != 2 or entries.shape[1] != 4:
            raise ValueError("entries must be an (M, 4) array")
        if entries.min() < 0 or entries.max() >= self.n_electrodes:
            raise ValueError("electrode id out of range")
        for row in entries:
            if len({int(v) for v in row}) != 4:
                raise ValueError(f"drive and measurement pairs overlap in entry {row}")
        seen = {tuple(int(v) for v in row) for row in entries}
        if len(seen) != len(entries):
            raise ValueError("protocol entries must be distinct")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def m(self) -> int:
        return len(self.entries)


@dataclass
class VoltageFrame:
    """One measurement frame; ``kind`` is "raw" (volts) or "normalized"."""

    values: np.ndarray
    kind: str = "raw"

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("voltage frame must be a finite 1D vector")
        if self.kind not in ("raw", "normalized"):
            raise ValueError(f"unknown frame kind {self.kind!r}")
        self.values = values


# ---------------------------------------------------------------------------
# electrode layouts


def _boundary_cells_2d(inside2d: np.ndarray) -> np.ndarray:
    """In-region cells with at least one 4-neighbor outside or off-grid."""
    padded = np.pad(inside2d, 1, constant_values=False)
    core = padded[1:-1, 1:-1]
    full_neighborhood = (
        padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    )
    return core & ~full_neighborhood


def _ring_cells(inside2d: np.ndarray, n_electrodes: int) -> np.ndarray:
    """Pick boundary cells nearest to equally spaced points on the
    inscribed circle; ties and collisions resolve toward the lowest flat
    index so the choice is deterministic."""
    ny, nx = inside2d.shape
    boundary = _boundary_cells_2d(inside2d)
    flat = np.flatnonzero(boundary)
    if flat.size < n_electrodes:
        raise ValueError(
            f"region boundary has only {flat.size} cells for {n_electrodes} electrodes"
        )
    by, bx = np.unravel_index(flat, inside2d.shape)
    cx_cells = bx + 0.5
    cy_cells = by + 0.5
    center_x, center_y = nx / 2.0, ny / 2.0
    radius = min(nx, ny) / 2.0
    chosen = []
    taken = set()
    for k in range(n_electrodes):
        phi = 2.0 * np.pi * k / n_electrodes
        tx = center_x + radius * np.cos(phi)
        ty = center_y + radius * np.sin(phi)
        d2 = (cx_cells - tx) ** 2 + (cy_cells - ty) ** 2
        for pick in np.lexsort((flat, d2)):
            if flat[pick] not in taken:
                taken.add(flat[pick])
                chosen.append(flat[pick])
                break
    return np.asarray(chosen, dtype=np.int64)


def circular_layout(mask: RegionMask, n_electrodes: int = 16) -> ElectrodeLayout:
    """Single ring of electrodes around a 2D region boundary."""
    if mask.ndim != 2:
        raise ValueError("circular_layout needs a 2D mask")
    if n_electrodes < 4:
        raise ValueError("need at least 4 electrodes")
    flat2d = _ring_cells(mask.inside, n_electrodes)
    return ElectrodeLayout(n_electrodes, 1, mask.inverse[flat2d])


def two_layer_layout(mask: RegionMask, n_per_layer: int = 16,
                     z_levels: tuple[int, int] | None = None) -> ElectrodeLayout:
    """Two vertically aligned electrode rings on a 3D region.

    The rings default to one and three quarters of the height. Both layers
    use the same (x, y) cells, so the cross-section must contain them at
    both z levels (true for extruded masks).
    """
    if mask.ndim != 3:
        raise ValueError("two_layer_layout needs a 3D mask")
    nz, ny, nx = mask.shape
    if z_levels is None:
        z_levels = (int(round(nz * 0.25)), int(round(nz * 0.75)))
    zb, zt = (int(z) for z in z_levels)
    if not (0 <= zb < zt < nz):
        raise ValueError(f"bad z levels {z_levels} for nz={nz}")
    flat2d = _ring_cells(mask.inside[zb], n_per_layer)
    cells = []
    inv = mask.inverse.reshape(mask.shape)
    for z in (zb, zt):
        iy, ix = np.unravel_index(flat2d, (ny, nx))
        idx = inv[z, iy, ix]
        if np.any(idx < 0):
            raise ValueError(f"electrode cross-section leaves the region at z={z}")
        cells.append(idx)
    return ElectrodeLayout(n_per_layer, 2, np.concatenate(cells))


# ---------------------------------------------------------------------------
# protocols


def adjacent_protocol(n: int = 16) -> Protocol:
    """Adjacent drive and measurement pairs around one ring.

    Drives (d, d+1 mod n); for each drive, measurement pairs (m, m+1 mod
    n) disjoint from it. Reciprocal duplicates are removed by keeping only
    entries with m > d, ordered by ascending d then ascending m.
    """
    if n < 4:
        raise ValueError(f"adjacent protocol needs at least 4 electrodes, got {n}")
    entries = []
    for d in range(n):
        dp, dm = d, (d + 1) % n
        for m in range(n):
            mp, mm = m, (m + 1) % n
            if len({dp, dm, mp, mm}) != 4:
                continue
            if m > d:
                entries.append((dp, dm, mp, mm))
    return Protocol(np.asarray(entries, dtype=np.int64), n)


def cross_layer_protocol(n_per_layer: int = 16, n_layers: int = 2) -> Protocol:
    """Vertical drive/measurement pairs between two aligned rings.

    Drive (i, i+n) for i = 0..n-2; measure (j, j+n) for j = i+1..n-1,
    which keeps one entry per reciprocal pair: n(n-1)/2 in total.
    """
    if n_layers != 2:
        raise ValueError("cross-layer pattern needs exactly two layers")
    n = n_per_layer
    if n < 2:
        raise ValueError("need at least 2 electrodes per layer")
    entries = []
    for i in range(n - 1):
        for j in range(i + 1, n):
            entries.append((i, i + n, j, j + n))
    return Protocol(np.asarray(entries, dtype=np.int64), 2 * n)


def combined_3d_protocol(n_per_layer: int = 16) -> Protocol:
    """Bottom-ring adjacent, then top-ring adjacent, then cross-layer."""
    n = n_per_layer
    ring = adjacent_protocol(n).entries
    bottom = ring
    top = ring + n
    cross = cross_layer_protocol(n).entries
    return Protocol(np.concatenate([bottom, top, cross]), 2 * n)


# ---------------------------------------------------------------------------
# finite-volume solver


def _face_lists(mask: RegionMask) -> tuple[np.ndarray, np.ndarray]:
    """All in-region neighbor pairs (lo, hi) as in-region indices."""
    inside = mask.inside
    inv = mask.inverse.reshape(mask.shape)
    las, lbs = [], []
    full = (slice(None),) * inside.ndim
    for ax in range(inside.ndim):
        lo = list(full)
        hi = list(full)
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        both = inside[lo] & inside[hi]
        las.append(inv[lo][both])
        lbs.append(inv[hi][both])
    return np.concatenate(las), np.concatenate(lbs)


def _assemble(fa: np.ndarray, fb: np.ndarray, sigma: np.ndarray) -> sparse.csr_matrix:
    """Conductance matrix with harmonic-mean face conductances."""
    n = sigma.size
    g = 2.0 * sigma[fa] * sigma[fb] / (sigma[fa] + sigma[fb])
    rows = np.concatenate([fa, fb, fa, fb])
    cols = np.concatenate([fa, fb, fb, fa])
    vals = np.concatenate([g, g, -g, -g])
    return sparse.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsr()


def _check_connected(fa: np.ndarray, fb: np.ndarray, n: int) -> None:
    adj = sparse.coo_matrix((np.ones(fa.size), (fa, fb)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise SolverError(f"region is disconnected ({n_comp} components)")


def _solve_node_potentials(a_mat: sparse.csr_matrix, b: np.ndarray,
                           rtol: float = 1e-12) -> np.ndarray:
    """Conjugate-gradient solve of the singular conductance system.

    The all-ones nullspace is deflated by projecting the operator onto the
    zero-mean subspace; the returned potential is gauge-fixed to zero mean
    and checked against the hard residual limit.
    """
    n = b.size
    diag = a_mat.diagonal()

    def matvec(x):
        x = x - x.mean()
        y = a_mat @ x
        return y - y.mean()

    op = LinearOperator((n, n), matvec=matvec, dtype=np.float64)
    precond = LinearOperator((n, n), matvec=lambda x: x / diag, dtype=np.float64)
    u, _ = cg(op, b, rtol=rtol, atol=0.0, maxiter=40 * n, M=precond)
    u = u - u.mean()
    residual = float(np.linalg.norm(b - a_mat @ u) / np.linalg.norm(b))
    if not np.isfinite(residual) or residual > RESIDUAL_LIMIT:
        raise SolverError(f"potential solve stalled at relative residual {residual:.3e}")
    return u


def _check_conductivity(field: ImageField) -> None:
    if np.any(field.values <= 0):
        raise ValueError("conductivity must be positive everywhere")


def solve_potential(field: ImageField, source_pos: int, source_neg: int,
                    current: float = 1.0, rtol: float = 1e-12) -> np.ndarray:
    """Potential for a +/- point-current pair, as a full-grid array.

    ``source_pos``/``source_neg`` are in-region cell indices. Solves the
    discrete conservation equation on the masked grid with no-flux region
    boundaries; the gauge is zero mean over the region, and cells outside
    the region are zero in the returned array.
    """
    _check_conductivity(field)
    mask = field.mask
    n = mask.n_inside
    if not (0 <= source_pos < n and 0 <= source_neg < n) or source_pos == source_neg:
        raise ValueError("sources must be two distinct in-region cell indices")
    fa, fb = _face_lists(mask)
    _check_connected(fa, fb, n)
    a_mat = _assemble(fa, fb, field.values)
    b = np.zeros(n)
    b[source_pos] += current
    b[source_neg] -= current
    u = _solve_node_potentials(a_mat, b, rtol)
    full = np.zeros(mask.inside.size)
    full[mask.flat_indices] = u
    return full.reshape(mask.shape)


def _electrode_cells(layout: ElectrodeLayout, protocol: Protocol) -> np.ndarray:
    if protocol.n_electrodes > layout.n_electrodes:
        raise ValueError(
            f"protocol uses {protocol.n_electrodes} electrodes, layout has {layout.n_electrodes}"
        )
    return layout.cells


def _solve_pairs(a_mat, pairs, cells, n, rtol):
    """One unit-current solve per distinct ordered electrode pair."""
    cache: dict[tuple[int, int], np.ndarray] = {}
    for pair in pairs:
        if pair in cache:
            continue
        b = np.zeros(n)
        b[cells[pair[0]]] += 1.0
        b[cells[pair[1]]] -= 1.0
        cache[pair] = _solve_node_potentials(a_mat, b, rtol)
    return cache


def simulate_voltages(field: ImageField, protocol: Protocol, layout: ElectrodeLayout,
                      rtol: float = 1e-12) -> VoltageFrame:
    """Raw voltages for every protocol entry (unit drive current)."""
    _check_conductivity(field)
    mask = field.mask
    n = mask.n_inside
    cells = _electrode_cells(layout, protocol)
    fa, fb = _face_lists(mask)
    _check_connected(fa, fb, n)
    a_mat = _assemble(fa, fb, field.values)
    drive_pairs = [(int(e[0]), int(e[1])) for e in protocol.entries]
    cache = _solve_pairs(a_mat, drive_pairs, cells, n, rtol)
    values = np.empty(protocol.m)
    for k, entry in enumerate(protocol.entries):
        u = cache[(int(entry[0]), int(entry[1]))]
        values[k] = u[cells[entry[2]]] - u[cells[entry[3]]]
    return VoltageFrame(values, "raw")


def jacobian(reference: ImageField, protocol: Protocol, layout: ElectrodeLayout,
             rtol: float = 1e-12) -> np.ndarray:
    """Normalized sensitivity matrix linearized at a reference field.

    Adjoint assembly: with unit-current potentials u_d (drive pair) and
    u_m (measurement pair), the raw derivative of entry m w.r.t. cell n is
    the exact derivative of the discrete system,

        S[m, n] = -sum over faces at n of d(g_face)/d(sigma_n)
                  * (delta u_d)_face * (delta u_m)_face,

    which is then scaled to the normalized difference variables:
    J[m, n] = -S[m, n] * sigma_ref[n] / V_ref[m].
    """
    _check_conductivity(reference)
    mask = reference.mask
    n = mask.n_inside
    cells = _electrode_cells(layout, protocol)
    fa, fb = _face_lists(mask)
    _check_connected(fa, fb, n)
    sig = reference.values
    a_mat = _assemble(fa, fb, sig)

    pairs = [(int(e[0]), int(e[1])) for e in protocol.entries]
    pairs += [(int(e[2]), int(e[3])) for e in protocol.entries]
    cache = _solve_pairs(a_mat, pairs, cells, n, rtol)

    denom = (sig[fa] + sig[fb]) ** 2
    dg_da = 2.0 * sig[fb] * sig[fb] / denom
    dg_db = 2.0 * sig[fa] * sig[fa] / denom

    j = np.empty((protocol.m, n))
    for k, entry in enumerate(protocol.entries):
        u_d = cache[(int(entry[0]), int(entry[1]))]
        u_m = cache[(int(entry[2]), int(entry[3]))]
        v_ref = u_d[cells[entry[2]]] - u_d[cells[entry[3]]]
        if abs(v_ref) < V_REF_FLOOR:
            raise SolverError(f"reference voltage of entry {k} is too small to normalize")
        w = (u_d[fa] - u_d[fb]) * (u_m[fa] - u_m[fb])
        s_row = -(
            np.bincount(fa, weights=w * dg_da, minlength=n)
            + np.bincount(fb, weights=w * dg_db, minlength=n)
        )
        j[k] = -s_row * sig / v_ref
    return j


# ---------------------------------------------------------------------------
# normalization and noise


def normalize_measurements(v_obs: VoltageFrame, v_ref: VoltageFrame) -> VoltageFrame:
    """Elementwise (observed - reference) / reference."""
    if v_obs.values.shape != v_ref.values.shape:
        raise ValueError("frames have different lengths")
    if np.any(np.abs(v_ref.values) <= V_REF_FLOOR):
        raise ValueError("reference frame has near-zero entries")
    return VoltageFrame((v_obs.values - v_ref.values) / v_ref.values, "normalized")


def normalize_conductivity(s_obs: ImageField, s_ref: ImageField) -> ImageField:
    """Elementwise -(observed - reference) / reference (unitless)."""
    if s_obs.mask != s_ref.mask:
        raise ValueError("fields live on different masks")
    if np.any(s_ref.values <= 0):
        raise ValueError("reference conductivity must be positive")
    return ImageField(s_obs.mask, -(s_obs.values - s_ref.values) / s_ref.values)


def add_noise(frame: VoltageFrame, snr_db: float, seed) -> VoltageFrame:
    """Zero-mean Gaussian noise with variance mean(v^2) / 10^(snr/10).

    Deterministic for a given seed; an infinite SNR returns the frame
    unchanged.
    """
    if np.isnan(snr_db):
        raise ValueError("snr_db must not be NaN")
    if np.isinf(snr_db) and snr_db > 0:
        return VoltageFrame(frame.values.copy(), frame.kind)
    variance = float(np.mean(frame.values**2)) / 10.0 ** (snr_db / 10.0)
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(variance), size=frame.values.shape)
    return VoltageFrame(frame.values + noise, frame.kind)

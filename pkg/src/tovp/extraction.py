"""Temporal overlap extraction over scan pairs and scan windows.

For every pair (current beam, adjacent beam) that is coplanar within the
divergence tolerance, the beams' centerline crossing is found and one or
five overlap points are emitted depending on the crossing angle, each
labeled FREE / OCCUPIED / UNKNOWN by projecting onto the adjacent beam and
applying the occupancy rule against that beam's reported range.

The all-pairs search is pruned by a spherical azimuth-elevation grid over
adjacent beam directions.  A beam pair can only be coplanar when the
adjacent direction lies near the great circle whose plane is spanned by the
current direction and the baseline, so candidates are read from the grid
cells intersecting that band (padded by half a cell for the binning error)
and then re-tested exactly.  Everything downstream of the candidate query
is vectorized; worker threads split the current scan into fixed-size beam
chunks, so results are independent of thread count.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
import math

import numpy as np

from .errors import EmptyScan, FrameMismatch, MissingPose
from .sensor_model import MIN_BEAM_RANGE, Beam, OccupancyState, Scan, SensorConfig

# Fixed current-beam chunk length; must not depend on thread count or the
# output would not be byte-stable across --threads values.
CHUNK = 16384
# Matches the parallel-line / degenerate-plane epsilons of the scalar ops.
PARALLEL_EPS = 1e-9
ORIGIN_EPS = 1e-3

RECORD_DTYPE = np.dtype(
    [
        ("current_index", "<u4"),
        ("scan_offset", "<i1"),
        ("adjacent_index", "<u4"),
        ("position", "<f8", (3,)),
        ("time", "<f8"),
        ("state", "u1"),
        ("confidence", "<f8"),
        ("sample_rank", "u1"),
    ]
)

DEFAULT_BOUNDS = (-70.0, 70.0, -70.0, 70.0, -4.5, 4.5)


@dataclass(frozen=True)
class ExtractionConfig:
    """Knobs of the extraction pipeline.

    ``max_tail_beyond_hit_m`` limits how far past the current beam's own hit
    overlap points are kept; None means one occupied-band length.
    ``cell_size_rad`` is the direction-grid resolution; finer cells shrink
    the candidate band at no accuracy cost.  Defaults to an eighth of the
    divergence angle.
    """

    n_adjacent: int = 6
    scan_period_s: float = 0.5
    bounds: tuple = DEFAULT_BOUNDS
    max_tail_beyond_hit_m: float | None = None
    max_overlaps_per_beam: int | None = None
    rng_seed: int = 0
    cell_size_rad: float | None = None

    def __post_init__(self):
        if self.n_adjacent < 1:
            raise ValueError(f"n_adjacent must be >= 1: {self.n_adjacent}")
        b = tuple(float(v) for v in self.bounds)
        if len(b) != 6 or b[0] >= b[1] or b[2] >= b[3] or b[4] >= b[5]:
            raise ValueError(f"bounds must be (x0,x1,y0,y1,z0,z1) with lo < hi: {self.bounds}")
        object.__setattr__(self, "bounds", b)
        if self.max_tail_beyond_hit_m is not None and self.max_tail_beyond_hit_m < 0:
            raise ValueError("max_tail_beyond_hit_m must be >= 0")
        if self.cell_size_rad is not None and self.cell_size_rad <= 0:
            raise ValueError("cell_size_rad must be positive")

    def tail_m(self, sensor: SensorConfig) -> float:
        if self.max_tail_beyond_hit_m is not None:
            return self.max_tail_beyond_hit_m
        return sensor.occupied_band_m

    def cell_size(self, sensor: SensorConfig) -> float:
        if self.cell_size_rad is None:
            return sensor.divergence_angle_rad / 8.0
        return self.cell_size_rad


@dataclass(frozen=True)
class OverlapPoint:
    """One labeled temporal overlap point (view over a record row)."""

    position: np.ndarray
    time: float
    state: OccupancyState
    confidence: float
    current_point_index: int
    adjacent_scan_offset: int
    adjacent_point_index: int
    sample_rank: int


class OverlapSet:
    """Canonically ordered collection of overlap records.

    Stores a packed numpy record array (see RECORD_DTYPE); indexing yields
    :class:`OverlapPoint` views.  Order is (current index, scan offset,
    adjacent index, sample rank), which makes serialization deterministic.
    """

    def __init__(self, records: np.ndarray, presorted: bool = False):
        records = np.asarray(records, dtype=RECORD_DTYPE)
        if not presorted and len(records) > 1:
            records = records[_canonical_order(records)]
        self.records = records

    @classmethod
    def empty(cls) -> "OverlapSet":
        return cls(np.empty(0, dtype=RECORD_DTYPE), presorted=True)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> OverlapPoint:
        r = self.records[idx]
        return OverlapPoint(
            position=r["position"].copy(),
            time=float(r["time"]),
            state=OccupancyState(int(r["state"])),
            confidence=float(r["confidence"]),
            current_point_index=int(r["current_index"]),
            adjacent_scan_offset=int(r["scan_offset"]),
            adjacent_point_index=int(r["adjacent_index"]),
            sample_rank=int(r["sample_rank"]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def counts(self) -> dict:
        c = np.bincount(self.records["state"], minlength=3)
        return {
            OccupancyState.FREE: int(c[0]),
            OccupancyState.OCCUPIED: int(c[1]),
            OccupancyState.UNKNOWN: int(c[2]),
        }


def _canonical_order(records: np.ndarray) -> np.ndarray:
    """Sort permutation by (current, offset, adjacent, rank).

    The four keys fit one u64 when indices stay below 2^24 (16.7M beams),
    which is the fast common case; otherwise fall back to lexsort.
    """
    i = records["current_index"]
    j = records["adjacent_index"]
    if len(i) and max(int(i.max()), int(j.max())) < (1 << 24):
        key = i.astype(np.uint64)
        key <<= np.uint64(40)
        key |= (records["scan_offset"].astype(np.int64) + 128).astype(np.uint64) << np.uint64(32)
        key |= j.astype(np.uint64) << np.uint64(8)
        key |= records["sample_rank"].astype(np.uint64)
        return np.argsort(key)
    return np.lexsort(
        (records["sample_rank"], records["adjacent_index"], records["scan_offset"], records["current_index"])
    )


# ---------------------------------------------------------------------------
# direction index


class DirectionIndex:
    """Azimuth-elevation grid over adjacent beam directions (current frame).

    Beams are grouped into elevation rows of ``cell_size`` radians and kept
    azimuth-sorted within each row; a cell is one (azimuth, elevation) bin.
    Points sitting on the adjacent sensor origin form no direction and are
    left out (their indices never appear in any cell).
    """

    def __init__(self, adjacent: Scan, cell_size_rad: float):
        if len(adjacent) == 0:
            raise EmptyScan("cannot index an empty scan")
        self.cell_size = float(cell_size_rad)
        origin = adjacent.sensor_origin
        delta = adjacent.points - origin
        ranges = np.linalg.norm(delta, axis=1)
        valid = ranges >= MIN_BEAM_RANGE
        if not valid.any():
            raise EmptyScan("no adjacent point forms a valid beam")
        self.beam_ids = np.nonzero(valid)[0].astype(np.int64)
        self.directions = delta[valid] / ranges[valid, None]
        self.ranges = ranges[valid]

        az = np.arctan2(self.directions[:, 1], self.directions[:, 0])  # [-pi, pi)
        el = np.arcsin(np.clip(self.directions[:, 2], -1.0, 1.0))
        cs = self.cell_size
        self.az_cell = np.floor((az + np.pi) / cs).astype(np.int64)
        el_cell = np.floor((el + np.pi / 2) / cs).astype(np.int64)
        n_el = max(int(math.ceil(np.pi / cs)), 1)
        np.clip(el_cell, 0, n_el - 1, out=el_cell)
        self.el_cell = el_cell

        order = np.lexsort((az, el_cell))
        self._az_sorted = az[order]
        self._order = order
        rows, starts = np.unique(el_cell[order], return_index=True)
        self.row_cells = rows
        self._row_ptr = np.append(starts, len(order))
        self.row_el_centers = -np.pi / 2 + (rows.astype(float) + 0.5) * cs
        # per-row azimuths duplicated one turn up, so interval queries that
        # wrap the -pi seam need a single searchsorted; built once, queried
        # for every chunk of every current scan that hits this index
        self._az_doubled = [
            np.concatenate([self._az_sorted[lo:hi], self._az_sorted[lo:hi] + 2.0 * np.pi])
            for lo, hi in zip(self._row_ptr[:-1], self._row_ptr[1:])
        ]
        self._pos_doubled = [
            np.concatenate([order[lo:hi], order[lo:hi]]).astype(np.int32)
            for lo, hi in zip(self._row_ptr[:-1], self._row_ptr[1:])
        ]

    def __len__(self) -> int:
        return len(self.directions)

    @property
    def n_rows(self) -> int:
        return len(self.row_cells)

    def occupied_cell_count(self) -> int:
        keys = self.el_cell * (2 ** 32) + self.az_cell
        return len(np.unique(keys))

    def row_slice(self, r: int):
        """(sorted azimuths, positions into the valid-beam arrays) of row r."""
        lo, hi = self._row_ptr[r], self._row_ptr[r + 1]
        return self._az_sorted[lo:hi], self._order[lo:hi]


def build_direction_index(adjacent: Scan, cell_size_rad: float) -> DirectionIndex:
    """Index the adjacent scan's beam directions for band queries."""
    return DirectionIndex(adjacent, cell_size_rad)


def _band_candidates(index: DirectionIndex, normals: np.ndarray, degenerate: np.ndarray, s_lim: float):
    """Candidate (chunk-local current id, index-local adjacent id) pairs.

    ``normals`` holds the (not necessarily valid) coplanarity-plane normals
    of a chunk of current beams; rows flagged ``degenerate`` get every
    adjacent beam as a candidate.  ``s_lim`` is the sine-domain half-width
    of the band, tested at each row's center elevation.  A beam binned in a
    row can sit up to half a cell off that center, and the plane distance
    moves by at most the elevation offset (the gradient is at most one), so
    callers must fold cell/2 into whatever angular tolerance they need
    covered.  Azimuth intervals are snapped outward to whole cells.

    Output pairs are duplicate-free: the two azimuth arcs of a (beam, row)
    combination are merged into one whenever they meet across the band
    normal's azimuth or its antipode, so every emission is disjoint and no
    dedup pass is needed.
    """
    cs = index.cell_size
    s_lim = min(float(s_lim), 1.0)

    nx, ny, nz = normals[:, 0], normals[:, 1], normals[:, 2]
    cn = np.hypot(nx, ny)
    psi = np.arctan2(ny, nx)

    out_i: list = []
    out_j: list = []

    ce = np.cos(index.row_el_centers)
    se = np.sin(index.row_el_centers)

    active = np.nonzero(~degenerate)[0].astype(np.int32)
    psi_a = psi[active]
    cn_a = cn[active]
    nz_a = nz[active]
    # a row emits nothing unless some beam satisfies |k_off| <= s_lim + c_amp
    # (the per-beam interval test below, cleared of its divisions); the 1e-12
    # slack dwarfs the divide rounding, so skipped rows are provably empty
    reach = np.abs(nz_a[None, :] * se[:, None]) <= s_lim + cn_a[None, :] * ce[:, None] + 1e-12
    live_rows = np.nonzero(reach.any(axis=1))[0] if len(active) else []
    for r in live_rows:
        c_amp = cn_a * ce[r]
        k_off = nz_a * se[r]
        flat = c_amp < 1e-300
        c_safe = np.where(flat, 1.0, c_amp)
        lo = (-s_lim - k_off) / c_safe
        hi = (s_lim - k_off) / c_safe
        empty = (lo > 1.0) | (hi < -1.0)
        full = flat & (np.abs(k_off) <= s_lim)
        empty = np.where(flat, ~full, empty)
        full |= (~flat) & (lo <= -1.0) & (hi >= 1.0)

        pos2 = index._pos_doubled[r]
        n_row = len(pos2) >> 1
        row_pos = pos2[:n_row]
        full_ids = [active[np.nonzero(full)[0]]] if full.any() else []

        sel = np.nonzero(~empty & ~full)[0]
        if len(sel):
            phi1 = np.arccos(np.clip(hi[sel], -1.0, 1.0))
            phi2 = np.arccos(np.clip(lo[sel], -1.0, 1.0))
            base = psi_a[sel]
            # arcs [phi1, phi2] and [-phi2, -phi1] around the normal azimuth;
            # within a cell of 0 or pi they meet once snapped, so merge them
            top = phi1 <= cs
            bot = phi2 >= np.pi - cs
            lo_arcs, hi_arcs, owners = [], [], []
            both = top & bot
            if both.any():
                full_ids.append(active[sel[both]])
            m = top & ~bot
            if m.any():
                lo_arcs.append(base[m] - phi2[m])
                hi_arcs.append(base[m] + phi2[m])
                owners.append(sel[m])
            m = bot & ~top
            if m.any():
                lo_arcs.append(base[m] + phi1[m])
                hi_arcs.append(base[m] + 2 * np.pi - phi1[m])
                owners.append(sel[m])
            m = ~top & ~bot
            if m.any():
                lo_arcs.extend((base[m] + phi1[m], base[m] - phi2[m]))
                hi_arcs.extend((base[m] + phi2[m], base[m] - phi1[m]))
                owners.extend((sel[m], sel[m]))
            if lo_arcs:
                a_lo = np.floor((np.concatenate(lo_arcs) + np.pi) / cs) * cs - np.pi
                a_hi = np.ceil((np.concatenate(hi_arcs) + np.pi) / cs) * cs - np.pi
                own = active[np.concatenate(owners)]
                span = a_hi - a_lo
                wrap = span >= 2 * np.pi
                if wrap.any():
                    full_ids.append(own[wrap])
                    a_lo, span, own = a_lo[~wrap], span[~wrap], own[~wrap]
                start = np.mod(a_lo + np.pi, 2 * np.pi) - np.pi
                doubled = index._az_doubled[r]
                s_idx = np.searchsorted(doubled, start, side="left")
                e_idx = np.searchsorted(doubled, start + span, side="right")
                counts = e_idx - s_idx
                keep = counts > 0
                if keep.any():
                    flat_pos = _ranges_to_indices(s_idx[keep], e_idx[keep])
                    out_j.append(pos2[flat_pos])
                    out_i.append(np.repeat(own[keep], counts[keep]))

        if full_ids:
            who = np.concatenate(full_ids)
            out_i.append(np.repeat(who, n_row))
            out_j.append(np.tile(row_pos, len(who)))

    deg = np.nonzero(degenerate)[0].astype(np.int32)
    if len(deg):
        out_i.append(np.repeat(deg, len(index)))
        out_j.append(np.tile(np.arange(len(index), dtype=np.int32), len(deg)))

    if not out_i:
        return np.empty(0, dtype=np.int32), np.empty(0, dtype=np.int32)
    return np.concatenate(out_i), np.concatenate(out_j)


def _ranges_to_indices(starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """Concatenate arange(s, e) for every (s, e) pair, vectorized."""
    counts = (ends - starts).astype(np.int32)
    total = int(counts.sum())
    out = np.arange(total, dtype=np.int32)
    shift = np.repeat(np.cumsum(counts, dtype=np.int32) - counts, counts)
    return out - shift + np.repeat(starts.astype(np.int32), counts)


def candidate_pairs(current_beam: Beam, index: DirectionIndex, adjacent_origin) -> list:
    """Adjacent point indices that might form a coplanar pair with the beam.

    Conservative superset: every beam whose direction lies within half the
    index's cell size of the coplanarity plane is included, which covers
    half the divergence angle whenever the cell is at least that coarse.
    When the plane is degenerate (baseline collinear with the beam, or
    origins coincide) all indexed beams are returned.
    """
    a = np.asarray(adjacent_origin, dtype=float)
    d = current_beam.direction
    a_norm = np.linalg.norm(a)
    degenerate = True
    normal = np.zeros((1, 3))
    if a_norm > ORIGIN_EPS:
        c = np.cross(d, a / a_norm)
        c_norm = np.linalg.norm(c)
        if c_norm >= PARALLEL_EPS:
            normal = (c / c_norm)[None, :]
            degenerate = False
    ii, jj = _band_candidates(index, normal, np.array([degenerate]))
    return sorted(int(index.beam_ids[j]) for j in jj)


# ---------------------------------------------------------------------------
# pair extraction


def _emit_records(i, j, offset, pos, rho, s_j, time, sensor, cfg, r_i, range_cur, rank):
    """Apply the shared point filters, label, and pack records."""
    b = cfg.bounds
    keep = rho >= 0.0
    keep &= range_cur >= 0.0
    keep &= range_cur <= r_i + cfg.tail_m(sensor)
    keep &= pos[:, 0] >= b[0]
    keep &= pos[:, 0] <= b[1]
    keep &= pos[:, 1] >= b[2]
    keep &= pos[:, 1] <= b[3]
    keep &= pos[:, 2] >= b[4]
    keep &= pos[:, 2] <= b[5]
    if not keep.any():
        return None
    i, j, pos, rho, s_j, rank = i[keep], j[keep], pos[keep], rho[keep], s_j[keep], rank[keep]

    rate = sensor.decay_rate_per_meter
    band = sensor.occupied_band_m
    past = rho > s_j
    conf = np.ones(len(rho))
    conf[past] = np.exp(-rate * (rho[past] - s_j[past]))
    state = np.full(len(rho), int(OccupancyState.OCCUPIED), dtype=np.uint8)
    state[rho < s_j] = int(OccupancyState.FREE)
    state[rho > s_j + band] = int(OccupancyState.UNKNOWN)

    rec = np.empty(len(rho), dtype=RECORD_DTYPE)
    rec["current_index"] = i
    rec["scan_offset"] = offset
    rec["adjacent_index"] = j
    rec["position"] = pos
    rec["time"] = time
    rec["state"] = state
    rec["confidence"] = conf
    rec["sample_rank"] = rank
    return rec


def _extract_chunk(lo, hi, cur_pts, cur_dirs, cur_ranges, cur_valid, index, adj_scan, offset, cfg, sensor):
    """All records for current beams [lo, hi) against one adjacent scan."""
    theta = sensor.divergence_angle_rad
    a = adj_scan.sensor_origin
    a_norm = math.sqrt(a[0] ** 2 + a[1] ** 2 + a[2] ** 2)

    d_chunk = cur_dirs[lo:hi]
    valid = cur_valid[lo:hi]
    if a_norm > ORIGIN_EPS:
        cvec = np.cross(d_chunk, a / a_norm)
        c_norm = np.linalg.norm(cvec, axis=1)
        degenerate = c_norm < PARALLEL_EPS
        safe = np.where(degenerate, 1.0, c_norm)
        normals = cvec / safe[:, None]
    else:
        degenerate = np.ones(len(d_chunk), dtype=bool)
        normals = np.zeros_like(d_chunk)
    all_valid = bool(valid.all())
    if not all_valid:
        degenerate = degenerate.copy()
        normals[~valid] = 0.0
        degenerate[~valid] = False  # invalid beams: no candidates at all

    ii, jj = _band_candidates(index, normals, degenerate)
    if len(ii) == 0:
        return []
    if not all_valid:
        keep = valid[ii]
        ii, jj = ii[keep], jj[keep]
        if len(ii) == 0:
            return []

    # exact coplanarity (skipped for degenerate planes, which pass by fiat)
    pair_deg = degenerate[ii]
    ndote = np.einsum("ij,ij->i", normals[ii], index.directions[jj])
    coarse = pair_deg | (np.abs(ndote) <= math.sin(theta / 2.0) + 1e-9)
    sel = np.nonzero(coarse)[0]
    if len(sel) == 0:
        return []
    ii, jj, ndote, pair_deg = ii[sel], jj[sel], ndote[sel], pair_deg[sel]
    cop = np.abs(np.arccos(np.clip(ndote, -1.0, 1.0)) - np.pi / 2.0) <= theta / 2.0
    cop |= pair_deg
    sel = np.nonzero(cop)[0]
    if len(sel) == 0:
        return []
    ii, jj = ii[sel], jj[sel]

    # centerline crossing: q = t * d_i; keeps the coplanar pairs whose
    # lines truly cross at positive current range
    gi = ii + lo  # scan-level current indices
    d_i = cur_dirs[gi]
    e_j = index.directions[jj]
    d0, d1, d2 = d_i[:, 0], d_i[:, 1], d_i[:, 2]
    e0, e1, e2 = e_j[:, 0], e_j[:, 1], e_j[:, 2]
    m = np.empty_like(d_i)
    m[:, 0] = d1 * e2 - d2 * e1
    m[:, 1] = d2 * e0 - d0 * e2
    m[:, 2] = d0 * e1 - d1 * e0
    w = np.empty_like(e_j)
    w[:, 0] = a[1] * e2 - a[2] * e1
    w[:, 1] = a[2] * e0 - a[0] * e2
    w[:, 2] = a[0] * e1 - a[1] * e0
    mm = np.einsum("ij,ij->i", m, m)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.einsum("ij,ij->i", w, m) / mm
    sel = np.nonzero((mm >= PARALLEL_EPS ** 2) & (t > 0.0))[0]
    if len(sel) == 0:
        return []
    gi, jj, t = gi[sel], jj[sel], t[sel]
    d_i, e_j = d_i[sel], e_j[sel]
    q = t[:, None] * d_i
    p_adj = np.einsum("ij,ij->i", q - a, e_j)
    sel = np.nonzero(p_adj > 0.0)[0]
    if len(sel) == 0:
        return []
    gi, jj, t, d_i, e_j, q, p_adj = (
        gi[sel], jj[sel], t[sel], d_i[sel], e_j[sel], q[sel], p_adj[sel]
    )
    r_i = cur_ranges[gi]
    s_j = index.ranges[jj]
    j_ids = index.beam_ids[jj]

    dot_de = np.clip(np.einsum("ij,ij->i", d_i, e_j), -1.0, 1.0)
    alpha = np.arccos(dot_de)
    two = alpha <= theta

    out = []
    if (~two).any():
        s1 = ~two
        rec = _emit_records(
            gi[s1], j_ids[s1], offset, q[s1], p_adj[s1], s_j[s1],
            adj_scan.time, sensor, cfg, r_i[s1], t[s1],
            np.zeros(int(s1.sum()), dtype=np.uint8),
        )
        if rec is not None:
            out.append(rec)

    if two.any():
        gi2, d_i2, r_i2, e_j2, s_j2, j2, t2, q2, al2 = _take(
            two, gi, d_i, r_i, e_j, s_j, j_ids, t, q, alpha
        )
        # segment start gate: reject pairs whose overlap segment degenerates
        l2 = np.linalg.norm(q2 - a, axis=1)
        s_half = np.sin(al2 / 2.0)
        tau = math.tan(theta / 2.0)
        start = (t2 * (s_half + tau) - l2 * tau) / (s_half + 2.0 * tau)
        ok = start > 0.0
        gi2, d_i2, r_i2, e_j2, s_j2, j2, t2 = _take(ok, gi2, d_i2, r_i2, e_j2, s_j2, j2, t2)
        if len(gi2):
            proj = np.einsum("ij,ij->i", adj_scan.points[j2], d_i2)
            ranges5 = np.stack(
                [
                    r_i2,
                    proj,
                    0.5 * (r_i2 + proj),
                    0.5 * (r_i2 + t2),
                    0.5 * (proj + t2),
                ],
                axis=1,
            )  # (P, 5)
            p5 = ranges5[:, :, None] * d_i2[:, None, :]
            rho5 = np.einsum("pkj,pj->pk", p5 - a, e_j2)
            n_pairs = len(gi2)
            rec = _emit_records(
                np.repeat(gi2, 5),
                np.repeat(j2, 5),
                offset,
                p5.reshape(-1, 3),
                rho5.reshape(-1),
                np.repeat(s_j2, 5),
                adj_scan.time,
                sensor,
                cfg,
                np.repeat(r_i2, 5),
                ranges5.reshape(-1),
                np.tile(np.arange(5, dtype=np.uint8), n_pairs),
            )
            if rec is not None:
                out.append(rec)
    return out


def _take(mask, *arrays):
    return tuple(a[mask] for a in arrays)


def _current_frame_arrays(current: Scan):
    """Directions/ranges of current beams; points on the origin are skipped."""
    ranges = np.linalg.norm(current.points, axis=1)
    valid = ranges >= MIN_BEAM_RANGE
    safe = np.where(valid, ranges, 1.0)
    dirs = current.points / safe[:, None]
    return dirs, ranges, valid


def _check_frames(current: Scan, adjacent: Scan):
    if np.linalg.norm(current.sensor_origin) > 1e-9:
        raise FrameMismatch("current scan must be expressed in its own sensor frame (origin at 0)")
    if current.pose is not None and adjacent.pose is not None:
        if not current.pose.almost_equal(adjacent.pose, tol=1e-9):
            raise FrameMismatch("adjacent scan not re-expressed in the current scan's frame")


def _derive_offset(current: Scan, adjacent: Scan, cfg: ExtractionConfig) -> int:
    dt = adjacent.time - current.time
    if dt == 0.0:
        raise ValueError("adjacent scan time equals current scan time")
    if cfg.scan_period_s > 0:
        k = max(1, int(round(abs(dt) / cfg.scan_period_s)))
    else:
        k = 1
    k = min(k, 127)  # record field is a signed byte
    return k if dt > 0 else -k


def extract_scan_pair(
    current: Scan,
    adjacent: Scan,
    cfg: ExtractionConfig,
    sensor: SensorConfig,
    threads: int = 1,
) -> OverlapSet:
    """Overlap points of one (current, adjacent) scan pair.

    Both scans must already be expressed in the current scan's sensor frame
    (``Scan.in_frame_of``); the scan offset recorded on the points is
    derived from the time difference and the configured scan period.
    """
    _check_frames(current, adjacent)
    offset = _derive_offset(current, adjacent, cfg)
    return _extract_pair_with_offset(current, adjacent, offset, cfg, sensor, threads)


def _extract_pair_with_offset(current, adjacent, offset, cfg, sensor, threads=1, pool=None):
    return OverlapSet(_pair_records(current, adjacent, offset, cfg, sensor, threads, pool))


def _pair_records(current, adjacent, offset, cfg, sensor, threads=1, pool=None, cur_arrays=None) -> np.ndarray:
    """One pair's records in chunk order (not yet canonically sorted)."""
    if len(current) == 0 or len(adjacent) == 0:
        return np.empty(0, dtype=RECORD_DTYPE)
    try:
        index = build_direction_index(adjacent, cfg.cell_size(sensor))
    except EmptyScan:
        return np.empty(0, dtype=RECORD_DTYPE)
    dirs, ranges, valid = cur_arrays if cur_arrays is not None else _current_frame_arrays(current)

    spans = [(lo, min(lo + CHUNK, len(current))) for lo in range(0, len(current), CHUNK)]
    args = [
        (lo, hi, current.points, dirs, ranges, valid, index, adjacent, offset, cfg, sensor)
        for lo, hi in spans
    ]
    if threads > 1 and len(spans) > 1 and pool is None:
        with ThreadPoolExecutor(max_workers=threads) as tmp:
            pieces = list(tmp.map(lambda a: _extract_chunk(*a), args))
    elif pool is not None and len(spans) > 1:
        pieces = list(pool.map(lambda a: _extract_chunk(*a), args))
    else:
        pieces = [_extract_chunk(*a) for a in args]

    flat = [r for piece in pieces for r in piece]
    if not flat:
        return np.empty(0, dtype=RECORD_DTYPE)
    return np.concatenate(flat)


def extract_sequence(
    current: Scan,
    adjacents: list,
    cfg: ExtractionConfig,
    sensor: SensorConfig,
    threads: int = 1,
) -> OverlapSet:
    """Overlap points of a current scan against its 2n adjacent scans.

    ``adjacents`` must hold n past and n future scans (by time); they may be
    in any common reference frame, and are re-expressed in the current
    scan's sensor frame here.  Offsets -n..-1 and 1..n follow time order.
    """
    n = cfg.n_adjacent
    for s in adjacents:
        if s.pose is None:
            raise MissingPose("adjacent scan lacks a pose")
    if current.pose is None:
        raise MissingPose("current scan lacks a pose")
    past = sorted([s for s in adjacents if s.time < current.time], key=lambda s: s.time)
    future = sorted([s for s in adjacents if s.time > current.time], key=lambda s: s.time)
    if len(past) != n or len(future) != n:
        raise ValueError(
            f"need {n} past and {n} future scans, got {len(past)} and {len(future)}"
        )

    if np.linalg.norm(current.sensor_origin) > 1e-9:
        raise FrameMismatch("current scan must carry points in its own sensor frame")
    jobs = [(off, scan) for off, scan in zip(range(-n, 0), past)]
    jobs += [(off, scan) for off, scan in zip(range(1, n + 1), future)]

    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    cur_arrays = _current_frame_arrays(current) if len(current) else None
    try:
        # per-pair sets stay unsorted; one canonical sort below covers all
        pieces = []
        for off, scan in jobs:
            adj_local = scan.in_frame_of(current)
            pieces.append(
                _pair_records(
                    current, adj_local, off, cfg, sensor,
                    threads=threads, pool=pool, cur_arrays=cur_arrays,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()

    records = np.concatenate(pieces) if pieces else np.empty(0, dtype=RECORD_DTYPE)
    oset = OverlapSet(records)
    if cfg.max_overlaps_per_beam is not None:
        oset = _cap_per_beam(oset, cfg.max_overlaps_per_beam)
    return oset


def _cap_per_beam(oset: OverlapSet, cap: int) -> OverlapSet:
    """Keep at most ``cap`` records per current beam, in canonical order."""
    rec = oset.records
    if len(rec) == 0:
        return oset
    i = rec["current_index"].astype(np.int64)
    _, starts, counts = np.unique(i, return_index=True, return_counts=True)
    within = np.arange(len(rec)) - np.repeat(starts, counts)
    return OverlapSet(rec[within < cap], presorted=True)


def balance_classes(oset: OverlapSet, seed: int) -> OverlapSet:
    """Class-balanced subset: all occupied points (count C), up to 5C free
    and up to C unknown points, drawn without replacement, seeded."""
    rec = oset.records
    state = rec["state"]
    occ = np.nonzero(state == int(OccupancyState.OCCUPIED))[0]
    free = np.nonzero(state == int(OccupancyState.FREE))[0]
    unk = np.nonzero(state == int(OccupancyState.UNKNOWN))[0]
    c = len(occ)
    rng = np.random.default_rng(seed)
    take_free = rng.choice(free, size=min(5 * c, len(free)), replace=False) if len(free) else free
    take_unk = rng.choice(unk, size=min(c, len(unk)), replace=False) if len(unk) else unk
    chosen = np.concatenate([occ, take_free, take_unk])
    return OverlapSet(rec[np.sort(chosen)], presorted=True)

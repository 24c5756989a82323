"""Occupancy reconstruction samples drawn along current-scan beams.

Each beam contributes a fixed number of occupied samples, uniform over the
occupied band starting at the reported range, and free samples, uniform
between the sensor and the reported range.  Draws come from a counter-based
generator keyed on (seed, beam index), so any subset of beams can be
generated in any order, or in parallel, with identical results.
"""

from dataclasses import dataclass

import numpy as np

from .sensor_model import MIN_BEAM_RANGE, OccupancyState, Scan, SensorConfig

RECON_DTYPE = np.dtype(
    [
        ("current_index", "<u4"),
        ("position", "<f8", (3,)),
        ("time", "<f8"),
        ("state", "u1"),
    ]
)


@dataclass(frozen=True)
class ReconSample:
    """One reconstruction target on a current beam's centerline."""

    position: np.ndarray
    time: float
    state: OccupancyState
    current_point_index: int


class ReconSet:
    """Reconstruction samples in beam order (occupied block, then free)."""

    def __init__(self, records: np.ndarray):
        self.records = np.asarray(records, dtype=RECON_DTYPE)

    @classmethod
    def empty(cls) -> "ReconSet":
        return cls(np.empty(0, dtype=RECON_DTYPE))

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, idx: int) -> ReconSample:
        r = self.records[idx]
        return ReconSample(
            position=r["position"].copy(),
            time=float(r["time"]),
            state=OccupancyState(int(r["state"])),
            current_point_index=int(r["current_index"]),
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


def sample_recon_points(
    current: Scan,
    occupied_per_beam: int,
    free_per_beam: int,
    sensor: SensorConfig,
    seed: int,
) -> ReconSet:
    """Sample occupancy targets on every beam of the current scan.

    Per beam with reported range r: ``occupied_per_beam`` ranges uniform in
    [r, r + band) and ``free_per_beam`` ranges uniform in [0, r), both on
    the beam's centerline.  States are FREE and OCCUPIED by construction.
    Points sitting on the sensor origin form no beam and contribute
    nothing, so a scan with such points yields fewer than N * (occupied +
    free) samples.
    """
    if occupied_per_beam < 0 or free_per_beam < 0:
        raise ValueError("per-beam sample counts must be >= 0")
    per_beam = occupied_per_beam + free_per_beam
    if len(current) == 0 or per_beam == 0:
        return ReconSet.empty()

    ranges = np.linalg.norm(current.points, axis=1)
    valid = np.nonzero(ranges >= MIN_BEAM_RANGE)[0]
    if len(valid) == 0:
        return ReconSet.empty()
    dirs = current.points[valid] / ranges[valid, None]
    band = sensor.occupied_band_m

    # one block of unit draws per beam, from a per-beam keyed stream
    draws = np.empty((len(valid), per_beam))
    for row, beam in enumerate(valid):
        gen = np.random.Generator(np.random.Philox(key=[seed, int(beam)]))
        draws[row] = gen.uniform(size=per_beam)

    r = ranges[valid]
    sample_r = np.empty_like(draws)
    sample_r[:, :occupied_per_beam] = r[:, None] + draws[:, :occupied_per_beam] * band
    sample_r[:, occupied_per_beam:] = draws[:, occupied_per_beam:] * r[:, None]

    rec = np.empty(len(valid) * per_beam, dtype=RECON_DTYPE)
    rec["current_index"] = np.repeat(valid, per_beam)
    rec["position"] = (sample_r[:, :, None] * dirs[:, None, :]).reshape(-1, 3)
    rec["time"] = current.time
    states = np.empty((len(valid), per_beam), dtype=np.uint8)
    states[:, :occupied_per_beam] = int(OccupancyState.OCCUPIED)
    states[:, occupied_per_beam:] = int(OccupancyState.FREE)
    rec["state"] = states.reshape(-1)
    return ReconSet(rec)

"""Noisy synthetic temperature samples with order-independent seeding.

Every sample row draws from its own Philox stream keyed by ``seed`` with
the counter set from (sample index, operating-point index), so a row's noise
does not depend on which other rows were generated or in which order.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .exceptions import SampleError
from .mesh import AllNodes, target_ids

SAMPLE_CSV_HEADER = ("sample_id", "op_id", "sensor_id", "temperature_K")


@dataclass(frozen=True)
class NoiseSpec:
    """Additive Gaussian noise: standard deviation ``sigma`` in K."""

    sigma: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise SampleError("sigma must be >= 0")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise SampleError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True, eq=False)
class SampleSet:
    """Temperature samples, one row per (sample, operating point).

    ``temperatures`` has shape (rows, sensors). ``op_index`` gives the
    operating point of every row and ``sample_index`` its replicate number.
    """

    temperatures: np.ndarray
    sensor_ids: tuple
    op_index: np.ndarray
    sample_index: np.ndarray
    op_ids: tuple = ("op0",)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.array(self.temperatures, float, copy=True)
        if t.ndim != 2 or t.shape[0] < 1 or t.shape[1] < 1:
            raise SampleError("sample matrix must be 2D with at least one row and column")
        if not np.all(np.isfinite(t)):
            raise SampleError("samples contain non-finite values")
        if t.shape[1] != len(self.sensor_ids):
            raise SampleError("one sensor id per column required")
        op = np.array(self.op_index, np.int64, copy=True).reshape(-1)
        si = np.array(self.sample_index, np.int64, copy=True).reshape(-1)
        if len(op) != t.shape[0] or len(si) != t.shape[0]:
            raise SampleError("one op index and sample index per row required")
        if op.min() < 0 or op.max() >= len(self.op_ids):
            raise SampleError("op index out of range")
        for a in (t, op, si):
            a.setflags(write=False)
        object.__setattr__(self, "temperatures", t)
        object.__setattr__(self, "op_index", op)
        object.__setattr__(self, "sample_index", si)
        object.__setattr__(self, "sensor_ids", tuple(self.sensor_ids))
        object.__setattr__(self, "op_ids", tuple(self.op_ids))

    @property
    def n_rows(self):
        return self.temperatures.shape[0]

    @property
    def n_sensors(self):
        return self.temperatures.shape[1]

    def subset(self, rows):
        rows = np.asarray(rows, np.int64)
        return SampleSet(self.temperatures[rows], self.sensor_ids, self.op_index[rows],
                         self.sample_index[rows], self.op_ids, dict(self.provenance))

    def select_sensors(self, columns):
        columns = np.asarray(columns, np.int64)
        return SampleSet(self.temperatures[:, columns], tuple(self.sensor_ids[c] for c in columns),
                         self.op_index, self.sample_index, self.op_ids, dict(self.provenance))

    def moments(self):
        """Per operating point: (row count, column means, residual sum of squares)."""
        out = []
        for k in range(len(self.op_ids)):
            rows = self.temperatures[self.op_index == k]
            if len(rows) == 0:
                out.append((0, np.zeros(self.n_sensors), 0.0))
                continue
            mean = rows.mean(axis=0)
            out.append((len(rows), mean, float(((rows - mean) ** 2).sum())))
        return out

    # persistence --------------------------------------------------------
    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SAMPLE_CSV_HEADER)
        for r in range(self.n_rows):
            op = self.op_ids[self.op_index[r]]
            sid = int(self.sample_index[r])
            for sensor, value in zip(self.sensor_ids, self.temperatures[r]):
                w.writerow((sid, op, sensor, f"{value:.17g}"))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, provenance=None):
        reader = csv.reader(io.StringIO(text))
        header = next(reader, None)
        if tuple(header or ()) != SAMPLE_CSV_HEADER:
            raise SampleError(f"sample CSV header must be {','.join(SAMPLE_CSV_HEADER)}")
        rows = {}
        sensors, ops = {}, {}
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != 4:
                raise SampleError(f"line {lineno}: expected 4 fields")
            sid, op, sensor, value = rec
            try:
                key = (int(sid), op)
                rows.setdefault(key, {})[sensor] = float(value)
            except ValueError:
                raise SampleError(f"line {lineno}: bad number") from None
            sensors.setdefault(sensor, len(sensors))
            ops.setdefault(op, len(ops))
        if not rows:
            raise SampleError("sample CSV contains no data")
        sensor_ids = tuple(sensors)
        keys = list(rows)
        temps = np.empty((len(keys), len(sensor_ids)))
        for i, key in enumerate(keys):
            rec = rows[key]
            if len(rec) != len(sensor_ids):
                raise SampleError(f"sample {key[0]} at {key[1]} lacks some sensors")
            temps[i] = [rec[s] for s in sensor_ids]
        return cls(temps, sensor_ids, [ops[k[1]] for k in keys], [k[0] for k in keys],
                   tuple(ops), provenance or {})

    def provenance_json(self):
        return json.dumps(self.provenance, indent=2) + "\n"


def noise_block(seed, sample_index, op_index, n_sensors, sigma):
    """Standard-normal noise of one row, scaled by ``sigma``."""
    bitgen = np.random.Philox(key=int(seed), counter=[0, 0, int(sample_index), int(op_index)])
    return sigma * np.random.Generator(bitgen).standard_normal(n_sensors)


def generate(fields, targets, noise, n_samples, theta_true=None, op_ids=None, mesh_digest=None):
    """Perturb exact temperatures ``n_samples`` times per operating point.

    Parameters
    ----------
    fields : sequence of TemperatureField, one per operating point.
    targets : :data:`~thermocal.mesh.ALL_NODES` or a SensorSet.
    noise : NoiseSpec
    n_samples : int
        Independent perturbations per operating point.

    Rows are ordered sample-major (all operating points of sample 0 first),
    so the first ``k * n_ops`` rows equal a ``k``-sample set with the same seed.
    """
    if n_samples < 1:
        raise SampleError("need at least one sample")
    fields = list(fields)
    if not fields:
        raise SampleError("need at least one ground-truth field")
    mesh = fields[0].mesh
    P = targets.interpolation_matrix(mesh)
    exact = np.stack([P @ f.values for f in fields])
    n_ops, n_sensors = exact.shape
    temps = np.empty((n_samples * n_ops, n_sensors))
    for s in range(n_samples):
        for k in range(n_ops):
            row = exact[k]
            if noise.sigma > 0:
                row = row + noise_block(noise.seed, s, k, n_sensors, noise.sigma)
            temps[s * n_ops + k] = row
    op_index = np.tile(np.arange(n_ops), n_samples)
    sample_index = np.repeat(np.arange(n_samples), n_ops)
    provenance = {"seed": int(noise.seed), "sigma_K": float(noise.sigma),
                  "n_samples": int(n_samples),
                  "targets": "all-nodes" if isinstance(targets, AllNodes) else "sensors"}
    if theta_true is not None:
        provenance["theta_true"] = {k: float(v) for k, v in theta_true.items()}
    if mesh_digest is not None:
        provenance["mesh_sha256"] = mesh_digest
    return SampleSet(temps, target_ids(targets, mesh), op_index, sample_index,
                     tuple(op_ids or (f"op{k}" for k in range(n_ops))), provenance)


def split(samples, calibration_fraction, seed=0):
    """Stratified random split into (calibration, validation) sets.

    Each operating point contributes ``round(fraction * count)`` rows (largest
    remainder, so the global total is ``round(fraction * rows)``) to the
    calibration set. Raises if any stratum would leave either side empty.
    """
    if not 0.0 < calibration_fraction < 1.0:
        raise SampleError("calibration fraction must lie in (0, 1)")
    strata = [np.flatnonzero(samples.op_index == k) for k in range(len(samples.op_ids))]
    strata = [s for s in strata if len(s)]
    counts = np.array([len(s) for s in strata])
    ideal = calibration_fraction * counts
    take = np.floor(ideal).astype(int)
    short = int(round(calibration_fraction * counts.sum())) - take.sum()
    order = np.argsort(-(ideal - take), kind="stable")
    take[order[:short]] += 1
    if np.any(take < 1) or np.any(take > counts - 1):
        raise SampleError("too few samples per operating point to stratify at this fraction")
    rng = np.random.Generator(np.random.Philox(key=int(seed)))
    cal, val = [], []
    for rows, n in zip(strata, take):
        perm = rows[rng.permutation(len(rows))]
        cal.extend(sorted(perm[:n]))
        val.extend(sorted(perm[n:]))
    return samples.subset(sorted(cal)), samples.subset(sorted(val))

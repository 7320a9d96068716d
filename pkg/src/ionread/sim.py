"""Phenomenological simulator of state-dependent fluorescence readout.

A register of trapped-ion qubits is read out by collecting state-dependent
fluorescence on an array of detector channels.  An ion in the bright state
scatters photons at a constant rate; an ion in the dark state scatters none.
Two imperfections are modelled on top of that ideal picture:

* optical pumping, as a single irreversible state flip at an exponentially
  distributed time inside the detection window (bright ions can go dark and
  stop scattering, dark ions can be pumped bright and start scattering),
* detection crosstalk, as per-photon multinomial routing of each emitted
  photon over the channel array according to a point-spread row centred on
  the emitting ion's channel.

Each channel additionally registers uniform background counts from laser
scatter and detector dark counts.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np
from scipy.stats import poisson

TIME_RESOLUTION_US = 0.1
MAX_IONS = 12

DEFAULT_WINDOW_US = 150.0
# 9 detected photons on average from a bright ion over the default window.
DEFAULT_BRIGHT_RATE = 0.06
# Laser scatter 20 counts/s and detector dark counts 2 counts/s per channel,
# about one false count per channel every 300 shots at the default window.
DEFAULT_SCATTER_RATE = 20e-6
DEFAULT_DARK_COUNT_RATE = 2e-6
# Pump-error rates solved so that single-ion fixed-threshold readout lands at
# 99.4% bright / 99.6% dark fidelity (average 99.5%) at the optimal threshold.
DEFAULT_PUMP_BRIGHT_TO_DARK = 3.563157006e-04
DEFAULT_PUMP_DARK_TO_BRIGHT = 5.310107875e-06

# Default point-spread rows: fraction of an ion's photons registered per
# channel offset.  With alternating imaging most of the leak (5% a side)
# lands on the unused channels between ions and a small tail (2%) reaches
# the neighbouring ions' channels two steps away; with adjacent imaging the
# full 12% leak lands directly on the neighbouring ions' channels.  The
# tail is what couples neighbouring readouts, so shrinking it to zero makes
# every per-ion discriminator equivalent and hides the strategy gaps this
# model exists to show.
ALTERNATING_SPREAD = (0.02, 0.05, 0.86, 0.05, 0.02)
ADJACENT_SPREAD = (0.12, 0.76, 0.12)

_ROW_SUM_TOL = 1e-12
_POOL_STREAM_TAG = 0x9E3779B9


class SimulationError(ValueError):
    """Raised for invalid physical parameters or impossible requests."""


class CalibrationError(RuntimeError):
    """Raised when rate calibration cannot bracket or reach its target."""


@dataclass(frozen=True)
class EmissionModel:
    """Per-ion photon emission and error-process rates, all in events/us.

    Parameters
    ----------
    bright_rate : float
        Photon detection rate while the ion is in the bright state.
    pump_bright_to_dark_rate : float
        Rate of the irreversible bright -> dark pumping flip.
    pump_dark_to_bright_rate : float
        Rate of the irreversible dark -> bright pumping flip.
    background_scatter_rate : float
        Laser-scatter background rate per channel.
    detector_dark_rate : float
        Detector dark-count rate per channel.
    window_us : float
        Duration of the detection window in microseconds.
    """

    bright_rate: float = DEFAULT_BRIGHT_RATE
    pump_bright_to_dark_rate: float = DEFAULT_PUMP_BRIGHT_TO_DARK
    pump_dark_to_bright_rate: float = DEFAULT_PUMP_DARK_TO_BRIGHT
    background_scatter_rate: float = DEFAULT_SCATTER_RATE
    detector_dark_rate: float = DEFAULT_DARK_COUNT_RATE
    window_us: float = DEFAULT_WINDOW_US

    def __post_init__(self) -> None:
        for name in (
            "bright_rate",
            "pump_bright_to_dark_rate",
            "pump_dark_to_bright_rate",
            "background_scatter_rate",
            "detector_dark_rate",
        ):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0.0:
                raise SimulationError(f"{name} must be finite and >= 0, got {value!r}")
        if not math.isfinite(self.window_us) or self.window_us <= 0.0:
            raise SimulationError(f"window_us must be positive, got {self.window_us!r}")

    @property
    def background_rate(self) -> float:
        """Total uniform background rate per channel."""
        return self.background_scatter_rate + self.detector_dark_rate

    @property
    def mean_bright_count(self) -> float:
        return self.bright_rate * self.window_us

    def to_dict(self) -> dict:
        return {
            "bright_rate": self.bright_rate,
            "pump_bright_to_dark_rate": self.pump_bright_to_dark_rate,
            "pump_dark_to_bright_rate": self.pump_dark_to_bright_rate,
            "background_scatter_rate": self.background_scatter_rate,
            "detector_dark_rate": self.detector_dark_rate,
            "window_us": self.window_us,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmissionModel":
        return cls(**data)


@dataclass(frozen=True)
class DetectorGeometry:
    """Mapping of ions onto detector channels plus per-ion crosstalk rows.

    ``crosstalk[i, m]`` is the probability that a photon emitted by ion ``i``
    is registered on channel ``m``.  Every row sums to one: photon routing is
    multinomial and photons are never lost, only misassigned.  When
    ``intermediate_channels_present`` is false, events routed to channels
    that carry no ion are dropped from the record.
    """

    num_ions: int
    num_channels: int
    ion_channel: tuple[int, ...]
    crosstalk: tuple[tuple[float, ...], ...]
    intermediate_channels_present: bool = True

    def __post_init__(self) -> None:
        if not 1 <= self.num_ions <= MAX_IONS:
            raise SimulationError(f"num_ions must be in [1, {MAX_IONS}], got {self.num_ions}")
        if self.num_channels < self.num_ions:
            raise SimulationError("num_channels must be >= num_ions")
        if len(self.ion_channel) != self.num_ions:
            raise SimulationError("ion_channel must list one channel per ion")
        if len(set(self.ion_channel)) != self.num_ions:
            raise SimulationError("ion_channel assignments must be distinct")
        for ch in self.ion_channel:
            if not 0 <= ch < self.num_channels:
                raise SimulationError(f"ion channel {ch} outside [0, {self.num_channels})")
        rows = np.asarray(self.crosstalk, dtype=float)
        if rows.shape != (self.num_ions, self.num_channels):
            raise SimulationError(
                f"crosstalk must be shaped ({self.num_ions}, {self.num_channels})"
            )
        if np.any(rows < 0.0):
            raise SimulationError("crosstalk entries must be >= 0")
        sums = rows.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > _ROW_SUM_TOL):
            raise SimulationError(f"crosstalk rows must sum to 1, got sums {sums}")

    @property
    def crosstalk_matrix(self) -> np.ndarray:
        return np.asarray(self.crosstalk, dtype=float)

    @property
    def intermediate_channels(self) -> tuple[int, ...]:
        taken = set(self.ion_channel)
        return tuple(m for m in range(self.num_channels) if m not in taken)

    def ion_of_channel(self, channel: int) -> int | None:
        try:
            return self.ion_channel.index(channel)
        except ValueError:
            return None

    def to_dict(self) -> dict:
        return {
            "num_ions": self.num_ions,
            "num_channels": self.num_channels,
            "ion_channel": list(self.ion_channel),
            "crosstalk": [list(row) for row in self.crosstalk],
            "intermediate_channels_present": self.intermediate_channels_present,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DetectorGeometry":
        return cls(
            num_ions=data["num_ions"],
            num_channels=data["num_channels"],
            ion_channel=tuple(data["ion_channel"]),
            crosstalk=tuple(tuple(row) for row in data["crosstalk"]),
            intermediate_channels_present=data["intermediate_channels_present"],
        )


def _spread_rows(
    num_ions: int, num_channels: int, ion_channel: Sequence[int], spread: Sequence[float]
) -> tuple[tuple[float, ...], ...]:
    """Build crosstalk rows from an odd-length point-spread row.

    Mass that would fall outside the channel array is kept on the emitting
    ion's own channel so every row still sums to one.
    """
    spread = tuple(float(s) for s in spread)
    if len(spread) % 2 != 1:
        raise SimulationError("point-spread row must have odd length")
    if any(s < 0 for s in spread) or abs(sum(spread) - 1.0) > _ROW_SUM_TOL:
        raise SimulationError("point-spread row must be non-negative and sum to 1")
    half = len(spread) // 2
    rows = []
    for i in range(num_ions):
        row = [0.0] * num_channels
        centre = ion_channel[i]
        for k, mass in enumerate(spread):
            m = centre + k - half
            row[m if 0 <= m < num_channels else centre] += mass
        rows.append(tuple(row))
    return tuple(rows)


def single_ion_geometry() -> DetectorGeometry:
    """One ion imaged onto one channel, no crosstalk."""
    return DetectorGeometry(1, 1, (0,), ((1.0,),), intermediate_channels_present=False)


def alternating_geometry(
    num_ions: int, spread: Sequence[float] = ALTERNATING_SPREAD
) -> DetectorGeometry:
    """Ions on every other channel with recorded intermediate channels."""
    num_channels = 2 * num_ions - 1
    ion_channel = tuple(2 * i for i in range(num_ions))
    crosstalk = _spread_rows(num_ions, num_channels, ion_channel, spread)
    return DetectorGeometry(num_ions, num_channels, ion_channel, crosstalk, True)


def adjacent_geometry(
    num_ions: int, spread: Sequence[float] = ADJACENT_SPREAD
) -> DetectorGeometry:
    """Ions on adjacent channels; no intermediate channels exist."""
    ion_channel = tuple(range(num_ions))
    crosstalk = _spread_rows(num_ions, num_ions, ion_channel, spread)
    return DetectorGeometry(num_ions, num_ions, ion_channel, crosstalk, False)


@dataclass(frozen=True)
class PhotonEvent:
    """A single detected photon: which channel fired and when."""

    channel: int
    arrival_us: float


@dataclass
class ReadoutSample:
    """One detection shot: the prepared label plus all recorded events.

    Events are stored as parallel arrays sorted by arrival time, ties broken
    by channel index and then insertion order.  Arrival times are quantised
    to ``TIME_RESOLUTION_US``.
    """

    label: str
    window_us: float
    channels: np.ndarray
    times: np.ndarray

    @property
    def events(self) -> list[PhotonEvent]:
        return [
            PhotonEvent(int(c), float(t)) for c, t in zip(self.channels, self.times)
        ]

    @property
    def num_events(self) -> int:
        return int(self.channels.shape[0])


@dataclass
class Dataset:
    """A labelled collection of readout shots, label-major ordered."""

    samples: list[ReadoutSample]
    geometry: DetectorGeometry
    model: EmissionModel
    seed: int
    samples_per_label: int
    mode: str = "fresh"

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.samples]

    def __len__(self) -> int:
        return len(self.samples)


def all_labels(num_ions: int) -> list[str]:
    """All basis-state labels in binary order, ion 0 leftmost."""
    return [format(i, f"0{num_ions}b") for i in range(2**num_ions)]


def _sample_rng(seed: int, label_index: int, sample_index: int) -> np.random.Generator:
    # One independent stream per shot: regeneration is bit-identical no
    # matter in which order or on how many workers shots are produced.
    return np.random.default_rng(np.random.SeedSequence((seed, label_index, sample_index)))


def simulate_ion(state: int, model: EmissionModel, rng: np.random.Generator) -> np.ndarray:
    """Simulate one ion's signal-photon arrival times over the window.

    The ion starts in ``state`` (1 bright, 0 dark) and may flip exactly once
    at an exponentially distributed time.  While bright it emits photons as a
    homogeneous Poisson process at ``model.bright_rate``.

    Returns
    -------
    numpy.ndarray
        Sorted arrival times in microseconds, un-quantised.
    """
    if state not in (0, 1):
        raise SimulationError(f"ion state must be 0 or 1, got {state!r}")
    window = model.window_us
    if state == 1:
        flip_rate = model.pump_bright_to_dark_rate
        flip = rng.exponential(1.0 / flip_rate) if flip_rate > 0.0 else math.inf
        start, stop = 0.0, min(flip, window)
    else:
        flip_rate = model.pump_dark_to_bright_rate
        flip = rng.exponential(1.0 / flip_rate) if flip_rate > 0.0 else math.inf
        if flip >= window:
            return np.empty(0, dtype=float)
        start, stop = flip, window
    n = rng.poisson(model.bright_rate * (stop - start))
    times = rng.uniform(start, stop, size=n)
    times.sort()
    return times


def route_events(
    ion_times: Sequence[np.ndarray],
    geometry: DetectorGeometry,
    model: EmissionModel,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Route per-ion signal photons onto channels and add background counts.

    Each signal photon is assigned a channel by a multinomial draw from its
    emitter's crosstalk row, so photons are conserved before any
    intermediate-channel dropping.  Each channel then receives uniform
    background counts at the combined scatter plus dark-count rate.

    Returns
    -------
    (channels, times)
        Parallel arrays quantised to ``TIME_RESOLUTION_US`` and sorted by
        (time, channel, insertion order).
    """
    if len(ion_times) != geometry.num_ions:
        raise SimulationError("one arrival array per ion required")
    chan_parts: list[np.ndarray] = []
    time_parts: list[np.ndarray] = []
    rows = geometry.crosstalk_matrix
    for i, times in enumerate(ion_times):
        times = np.asarray(times, dtype=float)
        if times.size:
            channels = rng.choice(geometry.num_channels, size=times.size, p=rows[i])
            chan_parts.append(channels.astype(np.int16))
            time_parts.append(times)
    bg_mean = model.background_rate * model.window_us
    for m in range(geometry.num_channels):
        n_bg = rng.poisson(bg_mean)
        if n_bg:
            chan_parts.append(np.full(n_bg, m, dtype=np.int16))
            time_parts.append(rng.uniform(0.0, model.window_us, size=n_bg))
    if not chan_parts:
        return np.empty(0, dtype=np.int16), np.empty(0, dtype=float)
    channels = np.concatenate(chan_parts)
    times = np.concatenate(time_parts)
    if not geometry.intermediate_channels_present:
        keep = np.isin(channels, np.asarray(geometry.ion_channel, dtype=np.int16))
        channels, times = channels[keep], times[keep]
    times = np.round(np.floor(times / TIME_RESOLUTION_US) * TIME_RESOLUTION_US, 1)
    order = np.lexsort((np.arange(channels.size), channels, times))
    return channels[order], times[order]


def _simulate_shot(
    label: str,
    model: EmissionModel,
    geometry: DetectorGeometry,
    rng: np.random.Generator,
) -> ReadoutSample:
    ion_times = [simulate_ion(int(bit), model, rng) for bit in label]
    channels, times = route_events(ion_times, geometry, model, rng)
    return ReadoutSample(label, model.window_us, channels, times)


def _pool_entry_index(label_index: int, sample_index: int, ion: int, bit: int,
                      num_ions: int, samples_per_label: int) -> int:
    # Sequential cursor into the per-(ion, bit) pool, computable without
    # global state so generation order cannot matter.
    mask = 1 << (num_ions - 1 - ion)
    earlier = sum(1 for l in range(label_index) if ((l & mask) > 0) == bool(bit))
    return earlier * samples_per_label + sample_index


def _pool_recording(
    ion: int,
    bit: int,
    entry_index: int,
    model: EmissionModel,
    geometry: DetectorGeometry,
    seed: int,
) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(
        np.random.SeedSequence((seed, _POOL_STREAM_TAG, ion, bit, entry_index))
    )
    ion_times = [
        simulate_ion(bit, model, rng) if j == ion else np.empty(0)
        for j in range(geometry.num_ions)
    ]
    return route_events(ion_times, geometry, model, rng)


def _pooled_shot(
    label: str,
    label_index: int,
    sample_index: int,
    model: EmissionModel,
    geometry: DetectorGeometry,
    seed: int,
    samples_per_label: int,
) -> ReadoutSample:
    # Superimpose independent single-ion recordings, one per register site,
    # mirroring readout assembled from single-ion data.  Background enters
    # once per recording, i.e. num_ions times in total.
    chan_parts: list[np.ndarray] = []
    time_parts: list[np.ndarray] = []
    for ion, bit in enumerate(label):
        entry = _pool_entry_index(
            label_index, sample_index, ion, int(bit), geometry.num_ions, samples_per_label
        )
        channels, times = _pool_recording(ion, int(bit), entry, model, geometry, seed)
        chan_parts.append(channels)
        time_parts.append(times)
    channels = np.concatenate(chan_parts)
    times = np.concatenate(time_parts)
    order = np.lexsort((np.arange(channels.size), channels, times))
    return ReadoutSample(label, model.window_us, channels[order], times[order])


def _generate_label_block(args: tuple) -> list[ReadoutSample]:
    label, label_index, model, geometry, seed, samples_per_label, mode = args
    out = []
    for k in range(samples_per_label):
        if mode == "fresh":
            rng = _sample_rng(seed, label_index, k)
            out.append(_simulate_shot(label, model, geometry, rng))
        else:
            out.append(
                _pooled_shot(label, label_index, k, model, geometry, seed, samples_per_label)
            )
    return out


def generate_dataset(
    model: EmissionModel,
    geometry: DetectorGeometry,
    samples_per_label: int,
    seed: int,
    mode: str = "fresh",
    n_jobs: int = 1,
) -> Dataset:
    """Generate a balanced labelled dataset over all basis states.

    ``mode="fresh"`` simulates every register shot independently.
    ``mode="pool"`` assembles each shot by superimposing independent
    single-ion recordings drawn without replacement from per-(ion, state)
    pools.  Both modes derive one RNG stream per shot from
    ``(seed, label index, sample index)``, so the output is bit-identical
    across runs and across ``n_jobs`` settings.
    """
    if samples_per_label < 1:
        raise SimulationError("samples_per_label must be >= 1")
    if mode not in ("fresh", "pool"):
        raise SimulationError(f"unknown generation mode {mode!r}")
    labels = all_labels(geometry.num_ions)
    blocks = [
        (label, idx, model, geometry, seed, samples_per_label, mode)
        for idx, label in enumerate(labels)
    ]
    if n_jobs > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(_generate_label_block, blocks))
    else:
        results = [_generate_label_block(b) for b in blocks]
    samples = [s for block in results for s in block]
    return Dataset(samples, geometry, model, seed, samples_per_label, mode)


# ---------------------------------------------------------------------------
# Exact per-shot count distribution and threshold fidelity for a single ion.

def count_distribution(
    state: int, model: EmissionModel, max_count: int | None = None
) -> np.ndarray:
    """Exact count pmf on a single isolated ion's channel.

    Marginalises the pumping flip time with Gauss-Legendre quadrature:
    conditioned on a flip at ``tau``, the count is Poisson with mean equal to
    the bright exposure plus the background mean.
    """
    lam = model.bright_rate
    window = model.window_us
    bg = model.background_rate * window
    if max_count is None:
        mu_max = lam * window + bg
        max_count = int(mu_max + 12.0 * math.sqrt(mu_max + 1.0) + 20.0)
    ks = np.arange(max_count + 1)
    rate = (
        model.pump_bright_to_dark_rate if state == 1 else model.pump_dark_to_bright_rate
    )
    no_flip_mu = lam * window + bg if state == 1 else bg
    if rate == 0.0:
        return poisson.pmf(ks, no_flip_mu)
    nodes, weights = np.polynomial.legendre.leggauss(400)
    tau = 0.5 * window * (nodes + 1.0)
    weights = 0.5 * window * weights
    density = rate * np.exp(-rate * tau)
    exposure = tau if state == 1 else window - tau
    mu = lam * exposure + bg
    pmf = poisson.pmf(ks[:, None], mu[None, :]) @ (density * weights)
    pmf += math.exp(-rate * window) * poisson.pmf(ks, no_flip_mu)
    return pmf


class SingleIonFidelity(NamedTuple):
    threshold: int
    fidelity_bright: float
    fidelity_dark: float
    average: float


def single_ion_fidelity(model: EmissionModel) -> SingleIonFidelity:
    """Best-threshold readout fidelity of one isolated ion, computed exactly.

    The threshold scan mirrors the empirical fit: a count strictly above the
    threshold reads as bright, ties in total error go to the smaller
    threshold.
    """
    pmf_bright = count_distribution(1, model)
    pmf_dark = count_distribution(0, model)
    cdf_bright = np.cumsum(pmf_bright)
    cdf_dark = np.cumsum(pmf_dark)
    total_error = cdf_bright + (1.0 - cdf_dark)
    theta = int(np.argmin(total_error))
    fid_bright = 1.0 - cdf_bright[theta]
    fid_dark = cdf_dark[theta]
    return SingleIonFidelity(theta, fid_bright, fid_dark, 0.5 * (fid_bright + fid_dark))


def calibrate_to_fidelity(
    target: float,
    model: EmissionModel | None = None,
    free_params: Sequence[str] = (
        "pump_bright_to_dark_rate",
        "pump_dark_to_bright_rate",
    ),
    multiplier_range: tuple[float, float] = (0.0, 64.0),
    tolerance: float = 1e-4,
    max_iterations: int = 200,
) -> EmissionModel:
    """Scale the free pump rates so single-ion readout hits a target fidelity.

    Deterministic bisection on a single scalar multiplier applied to the
    ``free_params`` rates; fidelity is evaluated with the exact count
    distributions, so the search itself involves no sampling.  Raises
    :class:`CalibrationError` when the target cannot be bracketed or the
    iteration cap is reached first.
    """
    if model is None:
        model = EmissionModel()
    if not 0.0 < target <= 1.0:
        raise CalibrationError(f"target fidelity must be in (0, 1], got {target}")
    allowed = {"pump_bright_to_dark_rate", "pump_dark_to_bright_rate"}
    if not free_params or not set(free_params) <= allowed:
        raise CalibrationError(f"free_params must be a non-empty subset of {allowed}")

    base = {name: getattr(model, name) for name in free_params}

    def scaled(mult: float) -> EmissionModel:
        return replace(model, **{name: value * mult for name, value in base.items()})

    lo, hi = multiplier_range
    fid_lo = single_ion_fidelity(scaled(lo)).average
    if abs(fid_lo - target) <= tolerance:
        return scaled(lo)
    if fid_lo < target:
        raise CalibrationError(
            f"target {target} above reachable fidelity {fid_lo:.6f} at multiplier {lo}"
        )
    fid_hi = single_ion_fidelity(scaled(hi)).average
    if fid_hi > target + tolerance:
        raise CalibrationError(
            f"target {target} not bracketed: fidelity {fid_hi:.6f} at multiplier {hi}"
        )
    for _ in range(max_iterations):
        mid = 0.5 * (lo + hi)
        fid_mid = single_ion_fidelity(scaled(mid)).average
        if abs(fid_mid - target) <= tolerance:
            return scaled(mid)
        if fid_mid > target:
            lo = mid
        else:
            hi = mid
    raise CalibrationError(
        f"no convergence to target {target} within {max_iterations} bisection steps"
    )


# ---------------------------------------------------------------------------
# Line-oriented dataset serialisation.

_FORMAT_NAME = "ionread.dataset"
_FORMAT_VERSION = 1


def _sample_to_line(sample: ReadoutSample) -> str:
    events = [[int(c), float(t)] for c, t in zip(sample.channels, sample.times)]
    record = {"label": sample.label, "window_us": sample.window_us, "events": events}
    return json.dumps(record, separators=(",", ":"))


def _sample_from_line(line: str) -> ReadoutSample:
    record = json.loads(line)
    events = record["events"]
    channels = np.asarray([e[0] for e in events], dtype=np.int16)
    times = np.asarray([e[1] for e in events], dtype=float)
    return ReadoutSample(record["label"], record["window_us"], channels, times)


def save_dataset(dataset: Dataset, path: str) -> None:
    """Write a dataset as one JSON header line plus one JSON line per shot."""
    header = {
        "format": _FORMAT_NAME,
        "version": _FORMAT_VERSION,
        "seed": dataset.seed,
        "samples_per_label": dataset.samples_per_label,
        "mode": dataset.mode,
        "model": dataset.model.to_dict(),
        "geometry": dataset.geometry.to_dict(),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, separators=(",", ":")) + "\n")
        for sample in dataset.samples:
            fh.write(_sample_to_line(sample) + "\n")


def load_dataset(path: str) -> Dataset:
    with open(path) as fh:
        header = json.loads(fh.readline())
        if header.get("format") != _FORMAT_NAME:
            raise SimulationError(f"{path}: not a {_FORMAT_NAME} file")
        if header.get("version") != _FORMAT_VERSION:
            raise SimulationError(f"{path}: unsupported version {header.get('version')}")
        samples = [_sample_from_line(line) for line in fh if line.strip()]
    return Dataset(
        samples=samples,
        geometry=DetectorGeometry.from_dict(header["geometry"]),
        model=EmissionModel.from_dict(header["model"]),
        seed=header["seed"],
        samples_per_label=header["samples_per_label"],
        mode=header["mode"],
    )

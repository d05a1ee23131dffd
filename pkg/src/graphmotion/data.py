"""Motion data: a synthetic graph-coupled generator and a loader for
exponential-map text exports.

Frames are 40 ms apart (25 fps) throughout; a 10-frame horizon is 400 ms.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .graphs import MotionGraph

FRAME_MS = 40
FRAMES_PER_SECOND = 1000.0 / FRAME_MS


class DataFormatError(ValueError):
    def __init__(self, path, line_no: int, detail: str):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.line_no = line_no


@dataclass(frozen=True)
class MotionRecording:
    """frames x sensors matrix of angle values at 40 ms per frame."""

    values: np.ndarray
    action: str
    subject: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"recording values must be 2-D, got shape {v.shape}")
        object.__setattr__(self, "values", v)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class SyntheticActionSpec:
    """Per-action signal recipe for the synthetic generator.

    Every sensor carries a sinusoid at an action-specific frequency whose
    phase is pulled toward its graph neighbors' phases by `coupling`, plus a
    persistent noise process that also diffuses along edges, so neighboring
    channels are genuinely predictive of each other.
    """

    name: str
    freq_range: tuple[float, float]          # Hz
    amp_range: tuple[float, float]
    coupling: float = 0.5                    # in [0, 1]; 1 = full consensus
    noise: float = 0.05                      # stationary noise std
    noise_persistence: float = 0.9           # AR(1) coefficient of the noise
    offset_range: tuple[float, float] = (-0.5, 0.5)

    def __post_init__(self):
        if self.freq_range[0] <= 0 or self.freq_range[1] < self.freq_range[0]:
            raise ValueError(f"bad frequency range {self.freq_range}")
        if self.amp_range[1] < self.amp_range[0] or self.amp_range[0] < 0:
            raise ValueError(f"bad amplitude range {self.amp_range}")
        if not (0.0 <= self.coupling <= 1.0):
            raise ValueError(f"coupling must be in [0, 1], got {self.coupling}")
        if self.noise < 0:
            raise ValueError(f"noise must be >= 0, got {self.noise}")
        if not (0.0 <= self.noise_persistence < 1.0):
            raise ValueError(f"noise_persistence must be in [0, 1), got {self.noise_persistence}")


def _neighbor_mean(values: np.ndarray, adjacency: np.ndarray) -> np.ndarray:
    """Mean of each vertex's neighbors; isolated vertices keep their own value."""
    deg = adjacency.sum(axis=1)
    mixed = adjacency @ values / np.maximum(deg, 1.0)
    return np.where(deg > 0, mixed, values)


def generate_recording(spec: SyntheticActionSpec, graph: MotionGraph,
                       subject_seed: int, n_frames: int) -> MotionRecording:
    """Deterministic synthetic recording for one (action, subject) pair."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    action_key = zlib.crc32(spec.name.encode())  # stable across processes
    rng = np.random.default_rng(np.random.SeedSequence((action_key, subject_seed)))
    c = graph.n_vertices
    a = graph.adjacency
    lam = spec.coupling

    freq = rng.uniform(*spec.freq_range)
    amps = rng.uniform(spec.amp_range[0], spec.amp_range[1], size=c)
    offsets = rng.uniform(spec.offset_range[0], spec.offset_range[1], size=c)

    # phase: own draw pulled toward neighbors, with a consensus share that
    # grows with coupling so coupling=1 leaves one shared phase exactly
    raw = rng.uniform(0.0, 2.0 * np.pi, size=c)
    local = _neighbor_mean(raw, a)
    blend = (1.0 - lam * lam) * local + (lam * lam) * raw.mean()
    phase = (1.0 - lam) * raw + lam * blend

    t = np.arange(n_frames) / FRAMES_PER_SECOND
    signal = offsets + amps * np.sin(2.0 * np.pi * freq * t[:, None] + phase)

    if spec.noise > 0:
        rho = spec.noise_persistence
        innov_std = spec.noise * np.sqrt(1.0 - rho * rho)
        u = rng.normal(0.0, spec.noise, size=c)
        noise = np.empty((n_frames, c))
        noise[0] = u
        for step in range(1, n_frames):
            mixed = (1.0 - lam) * u + lam * _neighbor_mean(u, a)
            u = rho * mixed + rng.normal(0.0, innov_std, size=c)
            noise[step] = u
        signal = signal + noise

    return MotionRecording(values=signal, action=spec.name, subject=f"s{subject_seed}")


def default_action_specs(n_train: int = 5, n_test: int = 2, coupling: float = 0.5,
                         noise: float = 0.05, seed: int = 1234) -> tuple[list, list]:
    """Deterministic families of train/test action recipes sharing one
    frequency band, so held-out actions stay in-distribution."""
    rng = np.random.default_rng(seed)
    specs = []
    for idx in range(n_train + n_test):
        lo = rng.uniform(0.4, 1.6)
        specs.append(SyntheticActionSpec(
            name=f"act{idx:02d}",
            freq_range=(lo, lo + 0.35),
            amp_range=(0.08, 0.25),
            coupling=coupling,
            noise=noise,
        ))
    return specs[:n_train], specs[n_train:]


# ---------------------------------------------------------------------------
# exponential-map text files: one sequence per file, one frame per row of
# comma-separated values; file stem is "<subject>_<action>"


def write_expmap_file(recording: MotionRecording, path, zero_columns: int = 0,
                      rng: np.random.Generator | None = None) -> None:
    """Write a recording in the text layout; optionally interleave
    constant-zero columns to mimic raw skeleton exports."""
    values = recording.values
    if zero_columns > 0:
        total = values.shape[1] + zero_columns
        if rng is None:
            positions = np.linspace(0, total - 1, zero_columns, dtype=int)
        else:
            positions = rng.choice(total, size=zero_columns, replace=False)
        wide = np.zeros((values.shape[0], total))
        keep = np.setdiff1d(np.arange(total), positions)
        wide[:, keep] = values
        values = wide
    lines = [",".join(repr(v) for v in row) for row in values]
    Path(path).write_text("\n".join(lines) + "\n")


def write_expmap_dir(recordings: list[MotionRecording], directory, zero_columns: int = 0) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for rec in recordings:
        write_expmap_file(rec, directory / f"{rec.subject}_{rec.action}.txt",
                          zero_columns=zero_columns)


def load_expmap_file(path, frame_skip: int = 1) -> np.ndarray:
    rows = []
    width = None
    for line_no, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if width is None:
            width = len(parts)
        elif len(parts) != width:
            raise DataFormatError(path, line_no,
                                  f"ragged row: {len(parts)} values, expected {width}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataFormatError(path, line_no, f"bad value: {exc}") from exc
    if not rows:
        raise DataFormatError(path, 0, "file contains no frames")
    values = np.asarray(rows, dtype=np.float64)
    return values[::frame_skip]


def load_expmap_dir(path, frame_skip: int = 1) -> dict[tuple[str, str], MotionRecording]:
    """Load every *.txt sequence under `path`, keyed by (action, subject).

    Columns that are identically zero across a file (inactive angles) are
    dropped, leaving only the active sensor channels.
    """
    directory = Path(path)
    if not directory.is_dir():
        raise FileNotFoundError(f"not a directory: {directory}")
    recordings: dict[tuple[str, str], MotionRecording] = {}
    for file in sorted(directory.glob("*.txt")):
        stem = file.stem
        if "_" not in stem:
            raise DataFormatError(file, 0, "file name must look like <subject>_<action>.txt")
        subject, action = stem.split("_", 1)
        values = load_expmap_file(file, frame_skip=frame_skip)
        active = ~np.all(values == 0.0, axis=0)
        key = (action, subject)
        if key in recordings:
            raise DataFormatError(file, 0, f"duplicate sequence for action={action} subject={subject}")
        recordings[key] = MotionRecording(values=values[:, active], action=action, subject=subject)
    return recordings


# ---------------------------------------------------------------------------
# windowing and normalization


def window_split(recording: MotionRecording, input_steps: int, horizon: int,
                 stride: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Contiguous (input, target) windows: input covers `input_steps` frames,
    target the next `horizon`. Returns [] when the recording is too short."""
    if input_steps < 1 or horizon < 1 or stride < 1:
        raise ValueError("input_steps, horizon and stride must be >= 1")
    total = input_steps + horizon
    frames = recording.n_frames
    if frames < total:
        return []
    windows = []
    for start in range(0, frames - total + 1, stride):
        x = recording.values[start:start + input_steps]
        y = recording.values[start + input_steps:start + total]
        windows.append((x, y))
    return windows


class Normalizer:
    """Per-channel z-scoring fit on meta-train data only; the stored
    statistics are applied unchanged to held-out data."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def fit(cls, recordings: list[MotionRecording]) -> "Normalizer":
        if not recordings:
            raise ValueError("cannot fit a normalizer on no recordings")
        stacked = np.concatenate([r.values for r in recordings], axis=0)
        mean = stacked.mean(axis=0)
        std = stacked.std(axis=0)
        std = np.where(std < 1e-12, 1.0, std)  # constant channels pass through centered
        return cls(mean, std)

    @classmethod
    def identity(cls, n_channels: int) -> "Normalizer":
        return cls(np.zeros(n_channels), np.ones(n_channels))

    def transform(self, recording: MotionRecording) -> MotionRecording:
        return replace(recording, values=(recording.values - self.mean) / self.std)

    def inverse(self, recording: MotionRecording) -> MotionRecording:
        return replace(recording, values=recording.values * self.std + self.mean)

    def channel_std(self, channel_ids) -> np.ndarray:
        return self.std[np.asarray(channel_ids, dtype=int)]


def normalize(recordings: list[MotionRecording]) -> tuple[list[MotionRecording], Normalizer]:
    norm = Normalizer.fit(recordings)
    return [norm.transform(r) for r in recordings], norm


# ---------------------------------------------------------------------------
# catalogs: everything episode assembly needs, frozen before training


@dataclass
class DataCatalog:
    graph: MotionGraph
    recordings: dict[tuple[str, str], MotionRecording]
    normalizer: Normalizer
    train_actions: list[str]
    test_actions: list[str]
    train_subjects: list[str]
    test_subjects: list[str]

    def subjects_for(self, action: str, test: bool) -> list[str]:
        pool = self.test_subjects if test else self.train_subjects
        return [s for s in pool if (action, s) in self.recordings]


def build_synthetic_catalog(graph: MotionGraph, train_specs, test_specs,
                            n_subjects: int = 6, test_subject: int = 5,
                            n_frames: int = 480, normalized: bool = True) -> DataCatalog:
    """Synthetic stand-in catalog: one recording per (action, subject); the
    held-out subject is reserved for meta-test episodes."""
    recordings = {}
    for spec in list(train_specs) + list(test_specs):
        for subject in range(1, n_subjects + 1):
            rec = generate_recording(spec, graph, subject_seed=subject, n_frames=n_frames)
            recordings[(rec.action, rec.subject)] = rec
    train_subjects = [f"s{i}" for i in range(1, n_subjects + 1) if i != test_subject]
    test_subjects = [f"s{test_subject}"]
    if normalized:
        train_recs = [recordings[(spec.name, s)] for spec in train_specs for s in train_subjects]
        norm = Normalizer.fit(train_recs)
        recordings = {k: norm.transform(r) for k, r in recordings.items()}
    else:
        norm = Normalizer.identity(graph.n_vertices)
    return DataCatalog(
        graph=graph,
        recordings=recordings,
        normalizer=norm,
        train_actions=[s.name for s in train_specs],
        test_actions=[s.name for s in test_specs],
        train_subjects=train_subjects,
        test_subjects=test_subjects,
    )


def build_expmap_catalog(directory, graph: MotionGraph, train_actions, test_actions,
                         train_subjects, test_subjects, frame_skip: int = 1,
                         normalized: bool = True) -> DataCatalog:
    """Catalog over an exponential-map export directory. Channel counts must
    match the sensor graph."""
    recordings = load_expmap_dir(directory, frame_skip=frame_skip)
    if not recordings:
        raise ValueError(f"no recordings found under {directory}")
    for (action, subject), rec in recordings.items():
        if rec.n_sensors != graph.n_vertices:
            raise ValueError(
                f"recording {action}/{subject} has {rec.n_sensors} channels, "
                f"graph has {graph.n_vertices} vertices"
            )
    if normalized:
        train_recs = [r for (a, s), r in recordings.items()
                      if a in train_actions and s in train_subjects]
        if not train_recs:
            raise ValueError("no meta-train recordings to fit normalization on")
        norm = Normalizer.fit(train_recs)
        recordings = {k: norm.transform(r) for k, r in recordings.items()}
    else:
        norm = Normalizer.identity(graph.n_vertices)
    return DataCatalog(
        graph=graph,
        recordings=recordings,
        normalizer=norm,
        train_actions=list(train_actions),
        test_actions=list(test_actions),
        train_subjects=list(train_subjects),
        test_subjects=list(test_subjects),
    )

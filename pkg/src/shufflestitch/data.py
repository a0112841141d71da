"""Dataset ingestion and synthetic generators.

Loaders cover label-first TSV classification archives and header+timestamp
CSV forecasting series. The synthetic generators build tasks where the
class evidence lives in the arrangement of segments: a hidden permutation
scrambles it out of reach of local receptive fields, and re-ordering the
segments restores it. Generators are pure functions of their spec,
including the seed.
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, FormatError


@dataclass
class LabeledSeries:
    values: np.ndarray  # (T, C)
    label: int


@dataclass
class ForecastWindow:
    context: np.ndarray  # (T, C)
    target: np.ndarray  # (H, C)


@dataclass
class ForecastSplits:
    train: list
    val: list
    test: list
    mean: np.ndarray  # per-channel, fitted on the train span only
    std: np.ndarray

    def inverse(self, values: np.ndarray) -> np.ndarray:
        """Map standardized values back to raw units."""
        return values * self.std + self.mean


SYNTHETIC_KINDS = ("permuted_pattern", "long_range_pair")


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic classification dataset.

    ``permutation`` is the hidden arrangement applied to every sample
    (None = identity). ``marker`` adds a weak content cue of that amplitude
    so local models retain partial signal; the strong cue is always the
    relative order of two motif chunks. ``texture`` stamps each chunk with
    a class-independent signature of that amplitude so no two chunks are
    interchangeable. ``pair_gap`` (long_range_pair only) is the number of
    chunks between the motif pair; 0 means adjacent, None means maximal
    separation.
    """

    kind: str
    length: int
    chunks: int
    channels: int = 1
    permutation: Optional[tuple] = None
    noise: float = 0.1
    samples: int = 200
    test_samples: int = 50
    seed: int = 0
    amplitude: float = 1.0
    marker: float = 0.0
    texture: float = 0.0
    pair_gap: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SYNTHETIC_KINDS:
            raise ConfigError(f"unknown synthetic kind {self.kind!r}")
        if self.length < 1 or self.chunks < 1 or self.channels < 1:
            raise ConfigError("length, chunks, and channels must be >= 1")
        if self.length % self.chunks != 0:
            raise ConfigError(
                f"length {self.length} not divisible by {self.chunks} chunks"
            )
        if self.samples < 1 or self.test_samples < 0:
            raise ConfigError("samples must be >= 1 and test_samples >= 0")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.texture < 0:
            raise ConfigError("texture must be >= 0")
        if self.permutation is not None:
            self.permutation = tuple(int(j) for j in self.permutation)
            if sorted(self.permutation) != list(range(self.chunks)):
                raise ConfigError(
                    f"permutation must rearrange 0..{self.chunks - 1}, got {self.permutation}"
                )
        if self.pair_gap is not None:
            if self.kind != "long_range_pair":
                raise ConfigError("pair_gap only applies to long_range_pair")
            if not 0 <= self.pair_gap <= self.chunks - 2:
                raise ConfigError(f"pair_gap must be in [0, {self.chunks - 2}]")

    def to_dict(self) -> dict:
        out = {
            "kind": self.kind,
            "length": self.length,
            "chunks": self.chunks,
            "channels": self.channels,
            "permutation": None if self.permutation is None else list(self.permutation),
            "noise": self.noise,
            "samples": self.samples,
            "test_samples": self.test_samples,
            "seed": self.seed,
            "amplitude": self.amplitude,
            "marker": self.marker,
            "texture": self.texture,
        }
        if self.pair_gap is not None:
            out["pair_gap"] = self.pair_gap
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# synthetic generators


def _half_sine(tau: int) -> np.ndarray:
    # near-zero at both chunk edges so chunk boundaries stay featureless
    return np.sin(np.pi * (np.arange(tau) + 0.5) / tau)


def _chunk_texture(tau: int, chunks: int, amplitude: float) -> np.ndarray:
    """Edge-tapered per-chunk signatures, shape (chunks, tau).

    Identical across samples and classes; they only make chunks tell
    apart, so swapping any two chunks changes the series.
    """
    window = _half_sine(tau)
    t = (np.arange(tau) + 0.5) / tau
    return np.stack([
        amplitude * window * np.cos(2.0 * np.pi * (2.0 * t + j / chunks))
        for j in range(chunks)
    ])


def _apply_chunk_permutation(series: np.ndarray, chunks: int, permutation) -> np.ndarray:
    """Position j of the output holds chunk permutation[j] of the input."""
    t = series.shape[0]
    tau = t // chunks
    out = np.empty_like(series)
    for j, src in enumerate(permutation):
        out[j * tau:(j + 1) * tau] = series[src * tau:(src + 1) * tau]
    return out


def _pattern_template(spec: SyntheticSpec, cls: int) -> np.ndarray:
    """Class template before permutation and noise, shape (T, C).

    Two adjacent center chunks carry a positive and a negative half-sine
    bump; the class decides which comes first. An optional weak marker
    biases chunk 0 by +/- marker so some class signal survives scrambling.
    """
    tau = spec.length // spec.chunks
    bump = spec.amplitude * _half_sine(tau)
    first = spec.chunks // 2 - 1
    template = np.zeros(spec.length)
    sign = 1.0 if cls == 0 else -1.0
    template[first * tau:(first + 1) * tau] = sign * bump
    template[(first + 1) * tau:(first + 2) * tau] = -sign * bump
    if spec.marker:
        template[0:tau] += (1.0 if cls == 0 else -1.0) * spec.marker
    return np.repeat(template[:, None], spec.channels, axis=1)


def _finish_sample(spec: SyntheticSpec, clean: np.ndarray,
                   rng: np.random.Generator) -> np.ndarray:
    if spec.texture:
        tau = spec.length // spec.chunks
        signatures = _chunk_texture(tau, spec.chunks, spec.texture)
        clean = clean + signatures.reshape(-1)[:, None]
    if spec.permutation is not None:
        clean = _apply_chunk_permutation(clean, spec.chunks, spec.permutation)
    if spec.noise:
        clean = clean + rng.normal(0.0, spec.noise, size=clean.shape)
    return clean


def gen_permuted_pattern(spec: SyntheticSpec):
    """Two-class task: the order of an adjacent bump pair encodes the class,
    and the hidden permutation tears the pair apart. Returns (train, test)."""
    if spec.kind != "permuted_pattern":
        raise ConfigError(f"spec kind is {spec.kind!r}, not permuted_pattern")
    if spec.chunks < 2:
        raise ConfigError("permuted_pattern needs at least 2 chunks")
    rng = np.random.default_rng(spec.seed)

    def draw(count):
        out = []
        for _ in range(count):
            cls = int(rng.integers(0, 2))
            values = _finish_sample(spec, _pattern_template(spec, cls), rng)
            out.append(LabeledSeries(values=values, label=cls))
        return out

    return draw(spec.samples), draw(spec.test_samples)


def gen_long_range_pair(spec: SyntheticSpec):
    """Two-class task: two chunks carry signed bumps and the class is
    whether the signs match. ``pair_gap`` controls their separation;
    everything else is noise. Returns (train, test)."""
    if spec.kind != "long_range_pair":
        raise ConfigError(f"spec kind is {spec.kind!r}, not long_range_pair")
    if spec.chunks < 2:
        raise ConfigError("long_range_pair needs at least 2 chunks")
    tau = spec.length // spec.chunks
    gap = spec.chunks - 2 if spec.pair_gap is None else spec.pair_gap
    first = 0
    second = first + gap + 1
    bump = spec.amplitude * _half_sine(tau)
    rng = np.random.default_rng(spec.seed)

    def draw(count):
        out = []
        for _ in range(count):
            s1 = 1.0 if rng.integers(0, 2) else -1.0
            s2 = 1.0 if rng.integers(0, 2) else -1.0
            template = np.zeros(spec.length)
            template[first * tau:(first + 1) * tau] = s1 * bump
            template[second * tau:(second + 1) * tau] = s2 * bump
            values = np.repeat(template[:, None], spec.channels, axis=1)
            values = _finish_sample(spec, values, rng)
            out.append(LabeledSeries(values=values, label=int(s1 == s2)))
        return out

    return draw(spec.samples), draw(spec.test_samples)


def generate(spec: SyntheticSpec):
    if spec.kind == "permuted_pattern":
        return gen_permuted_pattern(spec)
    return gen_long_range_pair(spec)


# ---------------------------------------------------------------------------
# UCR-style classification TSV


def _parse_tsv_file(path: Path):
    rows = []
    with open(path) as fh:
        width = None
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise FormatError(f"{path}:{lineno}: expected label and values")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise FormatError(
                    f"{path}:{lineno}: ragged row, {len(parts)} fields vs {width}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise FormatError(f"{path}: empty file")
    return np.asarray(rows)


def _resolve_ucr_pair(path):
    path = Path(path)
    if path.is_dir():
        trains = sorted(path.glob("*_TRAIN.tsv"))
        tests = sorted(path.glob("*_TEST.tsv"))
        if len(trains) != 1 or len(tests) != 1:
            raise FormatError(
                f"{path}: expected exactly one *_TRAIN.tsv and one *_TEST.tsv"
            )
        return trains[0], tests[0]
    if "_TRAIN" in path.name:
        test = path.with_name(path.name.replace("_TRAIN", "_TEST"))
        if not test.exists():
            raise FormatError(f"missing test split {test}")
        return path, test
    raise FormatError(f"{path}: pass the dataset directory or the *_TRAIN.tsv file")


def _handle_nans(values: np.ndarray, nan_policy: str, origin: str) -> np.ndarray:
    if not np.isnan(values).any():
        return values
    if nan_policy == "reject":
        raise DataError(f"{origin}: NaN values present (nan_policy='reject')")
    if nan_policy != "ffill":
        raise ConfigError(f"unknown nan_policy {nan_policy!r}")
    out = values.copy()
    for row in out:
        idx = np.where(~np.isnan(row))[0]
        if idx.size == 0:
            raise DataError(f"{origin}: all-NaN series cannot be filled")
        row[: idx[0]] = row[idx[0]]
        for k in range(idx[0] + 1, row.size):
            if np.isnan(row[k]):
                row[k] = row[k - 1]
    return out


def load_ucr_tsv(path, normalize: bool = False, nan_policy: str = "reject"):
    """Load a label-first TSV archive pair into (train, test) lists.

    ``path`` is either the dataset directory or the *_TRAIN.tsv file.
    Labels are remapped to contiguous 0-based indices by sorted train-label
    order; test labels missing from the train set are a format error.
    ``normalize`` applies z-normalization with dataset-level statistics
    computed on the train split.
    """
    train_path, test_path = _resolve_ucr_pair(path)
    raw_train = _parse_tsv_file(train_path)
    raw_test = _parse_tsv_file(test_path)
    if raw_train.shape[1] != raw_test.shape[1]:
        raise FormatError(
            f"train rows have {raw_train.shape[1]} fields, test rows {raw_test.shape[1]}"
        )
    train_labels, train_values = raw_train[:, 0], raw_train[:, 1:]
    test_labels, test_values = raw_test[:, 0], raw_test[:, 1:]
    label_map = {lab: idx for idx, lab in enumerate(sorted(set(train_labels.tolist())))}
    unknown = set(test_labels.tolist()) - set(label_map)
    if unknown:
        raise FormatError(f"test labels {sorted(unknown)} never appear in the train split")
    train_values = _handle_nans(train_values, nan_policy, str(train_path))
    test_values = _handle_nans(test_values, nan_policy, str(test_path))
    if normalize:
        mu = train_values.mean()
        sd = train_values.std()
        if sd < 1e-12:
            sd = 1.0
        train_values = (train_values - mu) / sd
        test_values = (test_values - mu) / sd

    def pack(labels, values):
        return [
            LabeledSeries(values=row[:, None].copy(), label=label_map[lab])
            for lab, row in zip(labels.tolist(), values)
        ]

    return pack(train_labels, train_values), pack(test_labels, test_values)


def write_ucr_tsv(samples: list, path) -> None:
    """Write LabeledSeries (univariate) in label-first TSV form, losslessly."""
    path = Path(path)
    with open(path, "w") as fh:
        for s in samples:
            if s.values.shape[1] != 1:
                raise ConfigError("TSV export supports univariate series only")
            fields = [str(int(s.label))] + [repr(float(v)) for v in s.values[:, 0]]
            fh.write("\t".join(fields) + "\n")


# ---------------------------------------------------------------------------
# forecasting CSV


def load_forecast_csv(path, context: int, horizon: int, stride: int = 1,
                      splits=(0.6, 0.2, 0.2), normalize: bool = True) -> ForecastSplits:
    """Slide (context, horizon) windows over a header+timestamp CSV.

    Windows are formed first, then split chronologically by the given
    fractions. Per-channel standardization is fitted on the rows spanned by
    the train windows only and applied everywhere.
    """
    if context < 1 or horizon < 1 or stride < 1:
        raise ConfigError("context, horizon, and stride must be >= 1")
    path = Path(path)
    if not path.exists():
        raise FormatError(f"{path}: no such file")
    rows = []
    with open(path) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise FormatError(f"{path}: expected a header with timestamp + channels")
        width = len(header)
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != width:
                raise FormatError(f"{path}:{lineno}: ragged row")
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}") from None
    series = np.asarray(rows)
    window = context + horizon
    if series.shape[0] < window:
        raise DataError(
            f"{path}: {series.shape[0]} rows, need at least context+horizon={window}"
        )
    starts = list(range(0, series.shape[0] - window + 1, stride))
    n_windows = len(starts)
    n_train = int(np.floor(splits[0] * n_windows))
    n_val = int(np.floor(splits[1] * n_windows))
    if n_train < 1:
        raise DataError(f"{path}: split produces no train windows ({n_windows} total)")

    train_end_row = starts[n_train - 1] + window
    mean = series[:train_end_row].mean(axis=0)
    std = series[:train_end_row].std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    scaled = (series - mean) / std if normalize else series
    if not normalize:
        mean = np.zeros(series.shape[1])
        std = np.ones(series.shape[1])

    def window_at(s):
        return ForecastWindow(
            context=scaled[s:s + context].copy(),
            target=scaled[s + context:s + window].copy(),
        )

    windows = [window_at(s) for s in starts]
    return ForecastSplits(
        train=windows[:n_train],
        val=windows[n_train:n_train + n_val],
        test=windows[n_train + n_val:],
        mean=mean,
        std=std,
    )

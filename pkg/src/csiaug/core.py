"""CSI tensor data model.

A dataset is stored as one stacked complex array of shape
``(n_samples, n_ap, n_rx, n_subcarriers)`` plus a ``(n_samples, 2)`` label
array in meters. The ``[ap][rx][subcarrier]`` order keeps every AP block
contiguous, which is what the per-AP augmentations operate on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class TensorDims:
    n_subcarriers: int
    n_rx: int
    n_ap: int

    @property
    def n_entries(self) -> int:
        """Complex entries per sample."""
        return self.n_subcarriers * self.n_rx * self.n_ap

    @property
    def shape(self) -> tuple[int, int, int]:
        """Per-sample array shape in canonical order."""
        return (self.n_ap, self.n_rx, self.n_subcarriers)

    def is_positive(self) -> bool:
        return self.n_subcarriers > 0 and self.n_rx > 0 and self.n_ap > 0


class Location(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class CsiSample:
    csi: np.ndarray  # (n_ap, n_rx, n_subcarriers) complex
    label: Location

    @property
    def dims(self) -> TensorDims:
        n_ap, n_rx, m = self.csi.shape
        return TensorDims(m, n_rx, n_ap)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable ordered collection of labeled CSI samples.

    Args:
        dims: shared tensor dimensions.
        csi: complex array ``(N, n_ap, n_rx, n_subcarriers)``.
        labels: real array ``(N, 2)``, meters.
        env_tag: short environment tag such as ``"LOS"``.
    """

    dims: TensorDims
    csi: np.ndarray
    labels: np.ndarray
    env_tag: str = "synthetic"

    def __post_init__(self):
        csi = np.asarray(self.csi)
        if not np.iscomplexobj(csi):
            csi = csi.astype(np.complex128)
        labels = np.asarray(self.labels, dtype=np.float64)
        if csi.ndim != 4 or csi.shape[1:] != self.dims.shape:
            raise DimensionError(
                f"csi shape {csi.shape} does not match (N, {self.dims.shape})"
            )
        if labels.shape != (csi.shape[0], 2):
            raise DimensionError(
                f"labels shape {labels.shape}, expected ({csi.shape[0]}, 2)"
            )
        object.__setattr__(self, "csi", _frozen(csi))
        object.__setattr__(self, "labels", _frozen(labels))

    @classmethod
    def from_samples(
        cls, samples: list[CsiSample], dims: TensorDims, env_tag: str = "synthetic"
    ) -> "Dataset":
        if samples:
            for i, s in enumerate(samples):
                if s.csi.shape != dims.shape:
                    raise DimensionError(
                        f"sample {i} has shape {s.csi.shape}, expected {dims.shape}"
                    )
            csi = np.stack([s.csi for s in samples])
            labels = np.array([tuple(s.label) for s in samples], dtype=np.float64)
        else:
            csi = np.zeros((0, *dims.shape), dtype=np.complex128)
            labels = np.zeros((0, 2))
        return cls(dims, csi, labels, env_tag)

    def __len__(self) -> int:
        return self.csi.shape[0]

    def __getitem__(self, i: int) -> CsiSample:
        return CsiSample(self.csi[i], Location(*map(float, self.labels[i])))

    def __iter__(self) -> Iterator[CsiSample]:
        for i in range(len(self)):
            yield self[i]

    @property
    def samples(self) -> list[CsiSample]:
        return list(self)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.intp)
        return Dataset(self.dims, self.csi[indices], self.labels[indices], self.env_tag)

    def replace(self, csi=None, labels=None, env_tag=None) -> "Dataset":
        return Dataset(
            self.dims,
            self.csi if csi is None else csi,
            self.labels if labels is None else labels,
            self.env_tag if env_tag is None else env_tag,
        )

    def equals(self, other: "Dataset") -> bool:
        """Bitwise equality of every field."""
        return (
            self.dims == other.dims
            and self.env_tag == other.env_tag
            and self.csi.dtype == other.csi.dtype
            and self.csi.shape == other.csi.shape
            and self.csi.tobytes() == other.csi.tobytes()
            and self.labels.tobytes() == other.labels.tobytes()
        )


@dataclass(frozen=True)
class Violation:
    sample_index: int | None
    field: str
    message: str


def validate(dataset: Dataset) -> list[Violation]:
    """Check every dataset invariant; an empty list means the dataset is valid."""
    out: list[Violation] = []
    d = dataset.dims
    for name in ("n_subcarriers", "n_rx", "n_ap"):
        if getattr(d, name) <= 0:
            out.append(Violation(None, f"dims.{name}", "must be strictly positive"))
    if len(dataset) < 1:
        out.append(Violation(None, "samples", "N >= 1 required"))
    if dataset.csi.shape[1:] != d.shape:
        out.append(Violation(None, "csi", f"shape {dataset.csi.shape[1:]} != {d.shape}"))
        return out

    flat = dataset.csi.reshape(len(dataset), d.n_entries)
    bad_re = ~np.isfinite(flat.real).all(axis=1)
    bad_im = ~np.isfinite(flat.imag).all(axis=1)
    bad_lab = ~np.isfinite(dataset.labels).all(axis=1)
    for i in np.flatnonzero(bad_re | bad_im | bad_lab):
        i = int(i)
        if bad_re[i]:
            out.append(Violation(i, "csi.re", "non-finite real part"))
        if bad_im[i]:
            out.append(Violation(i, "csi.im", "non-finite imaginary part"))
        if bad_lab[i]:
            out.append(Violation(i, "label", "non-finite coordinate"))
    return out


def slice_ap(sample: CsiSample, ap_index: int) -> np.ndarray:
    """Copy of the ``(n_rx, n_subcarriers)`` block measured by one AP."""
    n_ap = sample.csi.shape[0]
    if not 0 <= ap_index < n_ap:
        raise DimensionError(f"ap_index {ap_index} out of range [0, {n_ap})")
    return np.array(sample.csi[ap_index], copy=True)


def with_ap_block(sample: CsiSample, ap_index: int, block: np.ndarray) -> CsiSample:
    """Return a new sample with one AP block replaced."""
    n_ap, n_rx, m = sample.csi.shape
    if not 0 <= ap_index < n_ap:
        raise DimensionError(f"ap_index {ap_index} out of range [0, {n_ap})")
    block = np.asarray(block)
    if block.shape != (n_rx, m):
        raise DimensionError(f"block shape {block.shape}, expected {(n_rx, m)}")
    csi = np.array(sample.csi, copy=True)
    csi[ap_index] = block
    return CsiSample(csi, sample.label)

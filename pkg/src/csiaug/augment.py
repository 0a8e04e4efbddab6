"""Per-AP CSI augmentations.

All three methods grow a dataset of ``N`` samples to ``target_size`` samples:
the originals come first, unchanged, followed by ``target_size - N``
augmented copies whose sources cycle through the originals in order. Labels
are copied verbatim.

* ``phase``: every AP block is rotated by its own ``exp(j theta)``,
  ``theta ~ U[0, 2 pi)``, shared over antennas and subcarriers.
* ``amplitude``: every AP block is scaled by ``10 ** (P / 20)``,
  ``P ~ U[-p_star_db, p_star_db]``.
* ``noise``: circular complex Gaussian noise added to every entry.

The random draws of augmented sample ``j`` come from their own substream
keyed by ``(seed, method, j)``; :func:`phase_of_draws` replays them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as rngmod
from .core import Dataset, TensorDims
from .errors import ConfigError, PreconditionError

METHODS = ("phase", "amplitude", "noise")
_STREAM = {"phase": rngmod.AUG_PHASE, "amplitude": rngmod.AUG_AMPLITUDE, "noise": rngmod.AUG_NOISE}


@dataclass(frozen=True)
class AugmentPlan:
    method: str
    target_size: int
    p_star_db: float | None = None
    noise_variance: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown augmentation method {self.method!r}")
        if self.target_size < 1:
            raise ConfigError("target_size must be positive")
        if self.p_star_db is not None and not self.p_star_db >= 0:
            raise ConfigError("p_star_db must be >= 0")
        if not self.noise_variance >= 0:
            raise ConfigError("noise_variance must be >= 0")


def target_for_multiple(multiple: float, n: int) -> int:
    """``round(multiple * n)`` with halves rounded up."""
    if multiple < 1:
        raise PreconditionError(f"multiple must be >= 1, got {multiple}")
    return int(math.floor(multiple * n + 0.5))


def source_indices(n: int, target_size: int) -> np.ndarray:
    """Source sample of each augmented sample (round-robin over the originals)."""
    return np.arange(target_size - n) % n


def phase_of_draws(plan: AugmentPlan, augmented_index: int, dims: TensorDims, n_source: int) -> np.ndarray:
    """Random parameters used for augmented sample ``augmented_index``.

    Returns per-AP phases in radians (``phase``), per-AP gains in dB
    (``amplitude``), or the complex noise tensor ``(n_ap, n_rx, M)``
    (``noise``).
    """
    if not 0 <= augmented_index < plan.target_size - n_source:
        raise PreconditionError(
            f"augmented_index {augmented_index} outside [0, {plan.target_size - n_source})"
        )
    return _draw(plan, augmented_index, dims)


def _draw(plan: AugmentPlan, j: int, dims: TensorDims) -> np.ndarray:
    g = rngmod.substream(plan.seed, _STREAM[plan.method], j)
    if plan.method == "phase":
        return g.uniform(0.0, 2 * np.pi, dims.n_ap)
    if plan.method == "amplitude":
        p = plan.p_star_db
        return g.uniform(-p, p, dims.n_ap)
    s = math.sqrt(plan.noise_variance / 2)
    shape = dims.shape
    return s * g.standard_normal(shape) + 1j * s * g.standard_normal(shape)


def _all_draws(plan: AugmentPlan, n_aug: int, dims: TensorDims, workers: int) -> np.ndarray:
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            draws = list(ex.map(lambda j: _draw(plan, j, dims), range(n_aug)))
    else:
        draws = [_draw(plan, j, dims) for j in range(n_aug)]
    if not draws:
        shape = (0, *dims.shape) if plan.method == "noise" else (0, dims.n_ap)
        return np.zeros(shape)
    return np.stack(draws)


def _check(dataset: Dataset, plan: AugmentPlan, method: str) -> None:
    if plan.method != method:
        raise ConfigError(f"plan.method is {plan.method!r}, expected {method!r}")
    if len(dataset) < 1:
        raise PreconditionError("cannot augment an empty dataset")
    if plan.target_size < len(dataset):
        raise PreconditionError(f"target_size {plan.target_size} < dataset size {len(dataset)}")


def _assemble(dataset: Dataset, plan: AugmentPlan, augmented: np.ndarray, src: np.ndarray) -> Dataset:
    csi = np.concatenate([dataset.csi.astype(np.complex128), augmented])
    labels = np.concatenate([dataset.labels, dataset.labels[src]])
    return dataset.replace(csi=csi, labels=labels)


def augment_phase(dataset: Dataset, plan: AugmentPlan, workers: int = 1) -> Dataset:
    """Independent per-AP phase rotation."""
    _check(dataset, plan, "phase")
    n = len(dataset)
    src = source_indices(n, plan.target_size)
    theta = _all_draws(plan, src.size, dataset.dims, workers)
    rot = np.exp(1j * theta)[:, :, None, None]
    return _assemble(dataset, plan, dataset.csi[src] * rot, src)


def augment_amplitude(dataset: Dataset, plan: AugmentPlan, workers: int = 1) -> Dataset:
    """Independent per-AP gain fluctuation, uniform in dB."""
    if plan.method == "amplitude" and plan.p_star_db is None:
        raise ConfigError("amplitude augmentation needs p_star_db")
    _check(dataset, plan, "amplitude")
    n = len(dataset)
    src = source_indices(n, plan.target_size)
    gain_db = _all_draws(plan, src.size, dataset.dims, workers)
    scale = (10 ** (gain_db / 20))[:, :, None, None]
    return _assemble(dataset, plan, dataset.csi[src] * scale, src)


def augment_noise(dataset: Dataset, plan: AugmentPlan, workers: int = 1) -> Dataset:
    """Additive circular complex Gaussian noise baseline."""
    _check(dataset, plan, "noise")
    n = len(dataset)
    src = source_indices(n, plan.target_size)
    noise = _all_draws(plan, src.size, dataset.dims, workers)
    return _assemble(dataset, plan, dataset.csi[src] + noise, src)


_DISPATCH = {"phase": augment_phase, "amplitude": augment_amplitude, "noise": augment_noise}


def augment(dataset: Dataset, plan: AugmentPlan, workers: int = 1) -> Dataset:
    return _DISPATCH[plan.method](dataset, plan, workers)

import contextlib

import numpy as np
import pytest

from csiaug.augment import source_indices
from csiaug.core import Dataset, TensorDims


def random_dataset(rng: np.random.Generator, dims: TensorDims, n: int, env_tag: str = "synthetic",
                   scale: float = 1.0) -> Dataset:
    """Random dataset whose CSI values are exactly representable in float32."""
    shape = (n, *dims.shape)
    re = (scale * rng.standard_normal(shape)).astype(np.float32).astype(np.float64)
    im = (scale * rng.standard_normal(shape)).astype(np.float32).astype(np.float64)
    labels = rng.uniform(-20, 20, (n, 2))
    return Dataset(dims, re + 1j * im, labels, env_tag)


def random_dims(rng: np.random.Generator, max_dims=(16, 4, 4)) -> TensorDims:
    return TensorDims(*(int(rng.integers(1, k + 1)) for k in max_dims))


def assert_augment_invariants(ds: Dataset, plan, out: Dataset) -> None:
    """Check the phase/amplitude output contract against its source dataset."""
    n = len(ds)
    assert len(out) == plan.target_size
    assert out.csi[:n].tobytes() == ds.csi.tobytes()
    assert out.labels[:n].tobytes() == ds.labels.tobytes()
    src = source_indices(n, plan.target_size)
    np.testing.assert_array_equal(out.labels[n:], ds.labels[src])
    if not len(src):
        return
    a, s = out.csi[n:], ds.csi[src]
    nz = s != 0
    ratio = np.where(nz, a / np.where(nz, s, 1), np.nan)
    per_ap = ratio.reshape(len(src), ds.dims.n_ap, -1)
    if plan.method == "phase":
        np.testing.assert_allclose(np.abs(a), np.abs(s), rtol=1e-6)
        # one unit-modulus constant per (sample, AP)
        ref = np.nanmean(per_ap, axis=2, keepdims=True)
        ok = np.isnan(per_ap) | np.isclose(per_ap, ref, rtol=1e-9, atol=0)
        assert ok.all()
        np.testing.assert_allclose(np.abs(ref[~np.isnan(ref)]), 1, rtol=1e-9)
    else:
        assert np.all(np.abs(np.angle(ratio[nz])) <= 1e-6)
        g = np.abs(ratio[nz])
        lo, hi = 10 ** (-plan.p_star_db / 20), 10 ** (plan.p_star_db / 20)
        assert g.min() >= lo * (1 - 1e-12) and g.max() <= hi * (1 + 1e-12)
        spread = np.nanmax(np.abs(per_ap), axis=2) - np.nanmin(np.abs(per_ap), axis=2)
        assert np.all(spread <= 1e-12 * hi)


def python_forward(model, x):
    """Plain-Python MLP forward pass, used as an oracle."""
    a = list(map(float, x))
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = [b[k] + sum(a[j] * W[j][k] for j in range(len(a))) for k in range(len(b))]
        a = z if i == last else [max(v, 0.0) for v in z]
    return a


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RESULTS_KEY = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Context manager recording one acceptance criterion as PASS/FAIL."""
    results = request.config.stash.setdefault(_RESULTS_KEY, [])

    @contextlib.contextmanager
    def check(number: str, title: str):
        detail: list[str] = []
        try:
            yield detail
        except BaseException as e:
            if isinstance(e, pytest.skip.Exception):
                results.append(f"SKIP criterion {number}: {title} ({e.msg})")
            else:
                results.append(f"FAIL criterion {number}: {title} {'; '.join(detail)}".rstrip())
            raise
        results.append(f"PASS criterion {number}: {title} {'; '.join(detail)}".rstrip())

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS_KEY, [])
    if results:
        terminalreporter.section("acceptance criteria")
        for line in sorted(results, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)

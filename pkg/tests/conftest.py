import numpy as np
import pytest

from lsm_bench.datasets import encode_nmnist, prepare_mnist_subset, write_pgm
from lsm_bench.encoding import EncodeConfig
from lsm_bench.harness import DatasetSpec, ExperimentConfig
from lsm_bench.liquid import LiquidConfig, NeuronParams
from lsm_bench.readout import ReadoutHyper


@pytest.fixture(scope="session")
def mnist_paths(tmp_path_factory):
    return prepare_mnist_subset(tmp_path_factory.mktemp("mnist"))


@pytest.fixture(scope="session")
def nmnist_dir(tmp_path_factory):
    """Three classes, each a bright blob in its own region of the 34x34 sensor."""
    root = tmp_path_factory.mktemp("nmnist")
    rng = np.random.default_rng(0)
    for label in range(3):
        (root / str(label)).mkdir()
        for k in range(6):
            n = 400
            x = np.clip(rng.normal(6 + 10 * label, 2, n), 0, 33).astype(int)
            y = np.clip(rng.normal(17, 4, n), 0, 33).astype(int)
            ts = np.sort(rng.integers(0, 150_000, n))
            pol = rng.integers(0, 2, n)
            (root / str(label) / f"{k:05d}.bin").write_bytes(encode_nmnist(x, y, pol, ts))
    return root


@pytest.fixture(scope="session")
def pgm_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("faces")
    rng = np.random.default_rng(1)
    for label in range(2):
        for k in range(8):
            img = rng.integers(0, 60, (24, 20))
            if label:
                img[:, 10:] += 190
            else:
                img[:, :10] += 190
            write_pgm(root / f"{label}_img{k}.pgm", img)
    return root


def small_config(paths, **kw):
    base = dict(
        dataset=DatasetSpec(kind="idx", train_limit=60, test_limit=30, **paths),
        liquid=LiquidConfig.mnist(50, seed=0),
        neuron=NeuronParams(tau_m_ms=60.0),
        encode=EncodeConfig(sim_time_ms=40.0),
        readout_hyper=ReadoutHyper(epochs=5),
        readouts=["sgd", "svm1", "svm2"],
    )
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture
def tiny_config(mnist_paths):
    return small_config(mnist_paths)


_ACCEPTANCE = {}


def record_acceptance(n, ok, detail):
    _ACCEPTANCE[n] = f"ACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}"


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])

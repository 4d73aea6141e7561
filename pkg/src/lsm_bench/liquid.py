"""Random E/I liquid of LIF neurons and its state-vector extraction.

Membrane update per step of length ``dt``::

    v <- v_reset + (v - v_reset) * exp(-dt / tau_m) + R * (spike input)
                                                   + R * I * (1 - exp(-dt / tau_m))

The decay factor is exact for input that is constant within a step, so an
injected constant current reproduces ``R I (1 - exp(-t / tau_m))`` to
rounding error.  Synapses are delta pulses: an input spike lands in the
step it occurs in, a liquid spike lands in the following step.  Weights are
stored as drawn from the Gaussian initializer; delivery uses
``max(w, 0)`` with the sign set by the presynaptic type, so a negative
sample never turns an excitatory synapse inhibitory.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .encoding import SpikeRecord

ARCHITECTURES = {"1rc": 1, "5rc": 5}


@dataclass(frozen=True)
class NeuronParams:
    tau_m_ms: float = 30.0
    r_mem: float = 1.0
    v_th: float = 20.0
    v_reset: float = 0.0
    t_refrac_ms: float = 2.0
    dt_ms: float = 1.0

    def __post_init__(self):
        if self.tau_m_ms <= 0 or self.dt_ms <= 0:
            raise ValueError("tau_m_ms and dt_ms must be positive")
        if not self.v_th > self.v_reset:
            raise ValueError("v_th must exceed v_reset")
        if self.t_refrac_ms < 0:
            raise ValueError("t_refrac_ms must be >= 0")

    @property
    def decay(self) -> float:
        return float(np.exp(-self.dt_ms / self.tau_m_ms))

    @property
    def refrac_steps(self) -> int:
        return int(round(self.t_refrac_ms / self.dt_ms))


@dataclass(frozen=True)
class LiquidConfig:
    n_neurons: int = 1000
    eir: float = 0.8
    c_ee: float = 0.4
    c_ei: float = 0.4
    c_ie: float = 0.5
    c_ii: float = 0.0
    ir: float = 0.2
    or_ratio: float = 0.9
    weight_mean: float = 0.5
    weight_var: float = 0.16
    seed: int = 0

    def __post_init__(self):
        if self.n_neurons < 1:
            raise ValueError("n_neurons must be >= 1")
        for name in ("eir", "c_ee", "c_ei", "c_ie", "c_ii", "ir", "or_ratio"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name}={value} outside [0, 1]")
        if self.weight_var < 0:
            raise ValueError("weight_var must be >= 0")

    @classmethod
    def mnist(cls, n_neurons: int = 1000, seed: int = 0) -> "LiquidConfig":
        return cls(n_neurons=n_neurons, seed=seed)

    @classmethod
    def jaffe(cls, variant: int = 1, seed: int = 0) -> "LiquidConfig":
        n, ir = {1: (450, 0.1), 2: (1350, 0.05)}[variant]
        return cls(n_neurons=n, c_ee=0.3, c_ei=0.2, c_ie=0.4, c_ii=0.1, ir=ir, seed=seed)

    @property
    def n_excitatory(self) -> int:
        return int(np.floor(self.eir * self.n_neurons))


def _as_synapses(triple):
    pre, post, w = triple
    return (np.asarray(pre, dtype=np.int64), np.asarray(post, dtype=np.int64),
            np.asarray(w, dtype=np.float64))


@dataclass(eq=False)
class LiquidTopology:
    """Realized synapse graph.  Neurons ``[0, n_excitatory)`` are excitatory."""

    excitatory: np.ndarray
    n_inputs: int
    input_synapses: tuple  # (pre input id, post neuron id, weight) arrays
    recurrent_synapses: tuple  # (pre, post, weight) arrays
    readout_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        self.excitatory = np.asarray(self.excitatory, dtype=bool)
        n = self.excitatory.size
        n_exc = int(self.excitatory.sum())
        if not np.all(self.excitatory[:n_exc]):
            raise ValueError("excitatory neurons must occupy the first indices")
        self.input_synapses = _as_synapses(self.input_synapses)
        self.recurrent_synapses = _as_synapses(self.recurrent_synapses)
        pre, post, w = self.recurrent_synapses
        if np.any(pre == post):
            raise ValueError("self-connections are not allowed")
        if (pre.size and (pre.max() >= n or post.max() >= n)) or not np.all(np.isfinite(w)):
            raise ValueError("bad recurrent synapse")
        ipre, ipost, iw = self.input_synapses
        if ipre.size and (ipre.max() >= self.n_inputs or ipost.max() >= n):
            raise ValueError("bad input synapse")
        if not np.all(np.isfinite(iw)):
            raise ValueError("non-finite input weight")
        if self.readout_mask is None:
            self.readout_mask = np.ones(n_exc, dtype=bool)
        self.readout_mask = np.asarray(self.readout_mask, dtype=bool)
        if self.readout_mask.size != n_exc:
            raise ValueError("readout mask must have one entry per excitatory neuron")

    @property
    def n_neurons(self) -> int:
        return int(self.excitatory.size)

    @property
    def n_excitatory(self) -> int:
        return int(self.excitatory.sum())

    @cached_property
    def input_matrix(self) -> np.ndarray:
        """(n_inputs, n_neurons) delivered input weights."""
        pre, post, w = self.input_synapses
        m = np.zeros((self.n_inputs, self.n_neurons))
        np.add.at(m, (pre, post), np.maximum(w, 0.0))
        return m

    @cached_property
    def recurrent_matrix(self) -> np.ndarray:
        """(n_neurons, n_neurons) signed delivered weights, rows are presynaptic."""
        pre, post, w = self.recurrent_synapses
        sign = np.where(self.excitatory[pre], 1.0, -1.0)
        m = np.zeros((self.n_neurons, self.n_neurons))
        np.add.at(m, (pre, post), sign * np.maximum(w, 0.0))
        return m


def _gaussian_weights(rng: np.random.Generator, cfg: LiquidConfig, n: int) -> np.ndarray:
    return rng.normal(cfg.weight_mean, np.sqrt(cfg.weight_var), size=n)


def build_topology(cfg: LiquidConfig, n_inputs: int, seed=None) -> LiquidTopology:
    """Draw a liquid from ``cfg``.  ``seed`` overrides ``cfg.seed`` (any value
    accepted by ``numpy.random.default_rng``)."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    n, n_exc = cfg.n_neurons, cfg.n_excitatory
    excitatory = np.arange(n) < n_exc

    # connection probability by (pre type, post type)
    prob = np.empty((n, n))
    prob[:n_exc, :n_exc] = cfg.c_ee
    prob[:n_exc, n_exc:] = cfg.c_ei
    prob[n_exc:, :n_exc] = cfg.c_ie
    prob[n_exc:, n_exc:] = cfg.c_ii
    np.fill_diagonal(prob, 0.0)
    pre, post = np.nonzero(rng.random((n, n)) < prob)
    rec_w = _gaussian_weights(rng, cfg, pre.size)

    ipre, ipost = np.nonzero(rng.random((n_inputs, n_exc)) < cfg.ir)
    in_w = _gaussian_weights(rng, cfg, ipre.size)

    readout_mask = rng.random(n_exc) < cfg.or_ratio
    return LiquidTopology(excitatory, n_inputs, (ipre, ipost, in_w), (pre, post, rec_w), readout_mask)


@dataclass
class SimulationTrace:
    voltages: np.ndarray  # (steps, n_neurons), after reset
    spikes: np.ndarray  # (steps, n_neurons) bool
    counts: np.ndarray  # (n_neurons,)


def _n_steps(records: Sequence[SpikeRecord], dt_ms: float) -> int:
    durations = {float(r.duration) for r in records}
    if len(durations) != 1:
        raise ValueError("records in one batch must share a duration")
    return int(np.ceil(durations.pop() / dt_ms - 1e-9))


def _input_drive(topology: LiquidTopology, records: Sequence[SpikeRecord],
                 n_steps: int, dt_ms: float) -> np.ndarray:
    """(steps, batch, n_neurons) summed input weight arriving in each step.

    Every row of the sparse product belongs to one (step, sample) pair, so the
    result for a sample is independent of which batch it is simulated in.
    """
    b = len(records)
    rows, cols = [], []
    for j, r in enumerate(records):
        if len(r) and r.indices.max() >= topology.n_inputs:
            raise IndexError(f"input index {r.indices.max()} >= {topology.n_inputs} input neurons")
        rows.append(r.steps(dt_ms) * b + j)
        cols.append(r.indices)
    rows = np.concatenate(rows) if rows else np.zeros(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, dtype=np.int64)
    s = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n_steps * b, topology.n_inputs))
    return np.asarray(s @ topology.input_matrix).reshape(n_steps, b, topology.n_neurons)


def _integrate(topology: LiquidTopology, params: NeuronParams, drive: np.ndarray,
               current: Optional[np.ndarray] = None, trace: bool = False):
    n_steps, b, n = drive.shape
    decay = params.decay
    ext_gain = params.r_mem * (1.0 - decay)
    w_rec = sparse.csr_matrix(topology.recurrent_matrix * params.r_mem)
    v = np.full((b, n), params.v_reset)
    refrac = np.zeros((b, n), dtype=np.int64)
    counts = np.zeros((b, n), dtype=np.int64)
    fired = np.zeros((b, n), dtype=bool)
    v_trace = np.empty((n_steps, b, n)) if trace else None
    s_trace = np.empty((n_steps, b, n), dtype=bool) if trace else None
    for k in range(n_steps):
        inp = drive[k] * params.r_mem
        if w_rec.nnz and fired.any():
            inp = inp + sparse.csr_matrix(fired, dtype=np.float64) @ w_rec
        if current is not None:
            inp = inp + ext_gain * current[k]
        v = params.v_reset + (v - params.v_reset) * decay + inp
        silent = refrac > 0
        v[silent] = params.v_reset
        refrac[silent] -= 1
        fired = ~silent & (v >= params.v_th)
        v[fired] = params.v_reset
        refrac[fired] = params.refrac_steps
        counts += fired
        if trace:
            v_trace[k] = v
            s_trace[k] = fired
    return counts, v_trace, s_trace


def simulate_batch(topology: LiquidTopology, params: NeuronParams,
                   records: Sequence[SpikeRecord]) -> np.ndarray:
    """(batch, n_excitatory) spike counts."""
    if not records:
        return np.zeros((0, topology.n_excitatory), dtype=np.int64)
    n_steps = _n_steps(records, params.dt_ms)
    drive = _input_drive(topology, records, n_steps, params.dt_ms)
    counts, _, _ = _integrate(topology, params, drive)
    return counts[:, :topology.n_excitatory]


def simulate(topology: LiquidTopology, params: NeuronParams, record: SpikeRecord) -> np.ndarray:
    """Per-excitatory-neuron spike counts for one input record."""
    return simulate_batch(topology, params, [record])[0]


def simulate_trace(topology: LiquidTopology, params: NeuronParams, record: SpikeRecord,
                   current=None) -> SimulationTrace:
    """Full voltage/spike history for one record.

    ``current`` is an optional injected current, either one value per neuron
    (held for the whole run) or a (steps, n_neurons) array.
    """
    n_steps = _n_steps([record], params.dt_ms)
    drive = _input_drive(topology, [record], n_steps, params.dt_ms)
    if current is not None:
        current = np.broadcast_to(np.asarray(current, dtype=np.float64),
                                  (n_steps, topology.n_neurons))[:, None, :]
    counts, v, s = _integrate(topology, params, drive, current, trace=True)
    return SimulationTrace(v[:, 0], s[:, 0], counts[0])


class Reservoir:
    """One liquid (1RC) or five parallel liquids sharing the neuron budget (5RC)."""

    def __init__(self, arch: str, cfg: LiquidConfig, n_inputs: int):
        arch = arch.lower()
        if arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {sorted(ARCHITECTURES)}")
        k = ARCHITECTURES[arch]
        if cfg.n_neurons % k:
            raise ValueError(f"{arch} needs n_neurons divisible by {k}, got {cfg.n_neurons}")
        self.arch = arch
        self.cfg = cfg
        self.n_inputs = n_inputs
        sub = replace(cfg, n_neurons=cfg.n_neurons // k)
        self.liquids = [build_topology(sub, n_inputs, seed=[cfg.seed, i]) for i in range(k)]

    @property
    def n_features(self) -> int:
        return sum(t.n_excitatory for t in self.liquids)

    def counts(self, records: Sequence[SpikeRecord], params: NeuronParams,
               batch_size: int = 64, workers: int = 1) -> np.ndarray:
        """Masked excitatory spike counts, liquids concatenated in order."""
        chunks = [(t, records[i:i + batch_size])
                  for t in self.liquids for i in range(0, len(records), batch_size)]

        def run(job):
            topo, batch = job
            return simulate_batch(topo, params, batch) * topo.readout_mask

        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
        per_liquid = len(parts) // len(self.liquids) if parts else 0
        blocks = []
        for j, topo in enumerate(self.liquids):
            mine = parts[j * per_liquid:(j + 1) * per_liquid]
            blocks.append(np.concatenate(mine) if mine else np.zeros((0, topo.n_excitatory), dtype=np.int64))
        return np.concatenate(blocks, axis=1)


@dataclass
class StateNormalizer:
    """Divides counts by the training-split maximum and clips to [0, 1]."""

    divisor: np.ndarray
    mode: str = "global"

    @classmethod
    def fit(cls, train_counts: np.ndarray, mode: str = "global") -> "StateNormalizer":
        train_counts = np.asarray(train_counts, dtype=np.float64)
        if mode == "global":
            top = train_counts.max() if train_counts.size else 0.0
            divisor = np.array(max(top, 1.0))
        elif mode == "per_neuron":
            top = train_counts.max(axis=0) if len(train_counts) else np.zeros(train_counts.shape[1])
            divisor = np.maximum(top, 1.0)
        else:
            raise ValueError(f"unknown normalization mode {mode!r}")
        return cls(divisor, mode)

    def __call__(self, counts: np.ndarray) -> np.ndarray:
        return np.minimum(np.asarray(counts, dtype=np.float64) / self.divisor, 1.0)


def run_reservoir(arch: str, cfg: LiquidConfig, params: NeuronParams,
                  train_records: Sequence[SpikeRecord], test_records: Sequence[SpikeRecord] = (),
                  n_inputs: Optional[int] = None, normalization: str = "global",
                  batch_size: int = 64, workers: int = 1):
    """Simulate both splits and return ``(train_states, test_states)``.

    The normalizer is fit on the training split only and reused for test.
    """
    if n_inputs is None:
        all_idx = [r.indices.max() for r in (*train_records, *test_records) if len(r)]
        n_inputs = int(max(all_idx)) + 1 if all_idx else 1
    reservoir = Reservoir(arch, cfg, n_inputs)
    train_counts = reservoir.counts(train_records, params, batch_size, workers)
    test_counts = reservoir.counts(test_records, params, batch_size, workers)
    norm = StateNormalizer.fit(train_counts, normalization)
    return norm(train_counts), norm(test_counts)

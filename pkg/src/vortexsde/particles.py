"""N-particle mean-field discretization: empirical drift, Euler-Maruyama
stepping with counter-based noise, and trajectory recording.

Determinism contract: every random number is drawn from a counter-based
Philox stream keyed by ``(seed, step)``; row ``i`` of the resulting block is
particle ``i``'s increment, so the realized stream is a function of
``(seed, particle, step)`` alone and results are bit-identical regardless of
how many worker threads evaluate the drift.  Updates are synchronous: the
drift for every particle is computed against the pre-step ensemble before
any particle moves.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import storage
from .kernels import (
    BiotSavartKernel,
    ConfigurationError,
    Mollifier,
    MollifiedKernel,
    PowerLawVortexKernel,
    QUADRATURE,
    ZeroKernel,
    make_kernel,
    mollify,
)
from .treecode import (
    direct_drift_biot_savart,
    direct_drift_radial_table,
    tree_drift_biot_savart,
)

__all__ = [
    "BlowUpError",
    "ParticleEnsemble",
    "SimulationConfig",
    "TrajectoryStore",
    "build_kernel",
    "empirical_drift",
    "drift_all",
    "tree_drift",
    "noise_increments",
    "initial_positions",
    "step",
    "simulate",
]

_U64 = (1 << 64) - 1
_INIT_STREAM = 1 << 63  # step counters stay far below this, so no collision

_LAWS = ("point", "gaussian", "uniform_ball", "empirical")
_SUMMATIONS = ("direct", "tree")
_SELF_MODES = ("exclude", "include")


class BlowUpError(RuntimeError):
    """A particle coordinate left the finite range during a step."""

    def __init__(self, step_index: int, particle_indices, max_drift: float, suspect_pair=None):
        self.step_index = int(step_index)
        self.particle_indices = list(particle_indices)
        self.max_drift = float(max_drift)
        self.suspect_pair = suspect_pair
        pair = f", closest pre-step pair {suspect_pair}" if suspect_pair is not None else ""
        super().__init__(
            f"non-finite coordinates for particles {self.particle_indices[:8]} at step "
            f"{self.step_index} (max |drift| = {self.max_drift:.3e}{pair})"
        )


@dataclass(frozen=True)
class SimulationConfig:
    """Full description of one particle run; hashable and serializable.

    ``noise_scale`` is a test hook (0 disables the Brownian term); it is part
    of the config so the hash reflects it.
    """

    N: int
    n: int
    dt: float
    T: float
    d: int = 2
    kernel: str = "biot_savart"
    kernel_params: dict = field(default_factory=dict)
    initial_law: str = "point"
    initial_params: dict = field(default_factory=dict)
    seed: int = 0
    summation: str = "direct"
    theta: float = 0.5
    leaf_size: int = 16
    self_interaction: str = "exclude"
    snapshot_stride: int = 1
    noise_scale: float = 1.0

    def __post_init__(self):
        if self.N < 1:
            raise ConfigurationError(f"N={self.N} must be >= 1")
        if self.n < 1:
            raise ConfigurationError(f"mollification index n={self.n} must be >= 1")
        if not self.dt > 0.0:
            raise ConfigurationError(f"dt={self.dt} must be positive")
        if self.T < self.dt:
            raise ConfigurationError(f"horizon T={self.T} shorter than one step dt={self.dt}")
        if self.d < 1:
            raise ConfigurationError(f"dimension d={self.d} must be >= 1")
        if self.initial_law not in _LAWS:
            raise ConfigurationError(f"unknown initial law {self.initial_law!r}")
        if self.summation not in _SUMMATIONS:
            raise ConfigurationError(f"unknown summation mode {self.summation!r}")
        if not 0.0 < self.theta <= 1.0:
            raise ConfigurationError(f"opening angle theta={self.theta} outside (0, 1]")
        if self.self_interaction not in _SELF_MODES:
            raise ConfigurationError(f"self_interaction must be one of {_SELF_MODES}")
        if self.snapshot_stride < 1:
            raise ConfigurationError("snapshot_stride must be >= 1")
        if not 0 <= self.seed <= _U64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")

    @property
    def n_steps(self) -> int:
        return int(math.floor(self.T / self.dt + 1e-9))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class ParticleEnsemble:
    """Immutable-by-convention ensemble state; weights are uniform 1/N."""

    positions: np.ndarray  # (N, d)
    time: float
    seed: int
    step_index: int

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        if self.positions.ndim != 2:
            raise ConfigurationError("positions must have shape (N, d)")
        if self.time < 0.0:
            raise ConfigurationError("ensemble time must be nonnegative")
        if not np.all(np.isfinite(self.positions)):
            raise BlowUpError(self.step_index, np.nonzero(~np.isfinite(self.positions).all(axis=1))[0], np.nan)

    @property
    def N(self) -> int:
        return self.positions.shape[0]

    @property
    def weight(self) -> float:
        return 1.0 / self.N


@dataclass
class TrajectoryStore:
    """Time grid plus recorded ensemble snapshots and run metadata."""

    times: np.ndarray  # (S,)
    snapshots: np.ndarray  # (S, N, d)
    config_hash: str
    seed: int

    def __post_init__(self):
        if np.any(np.diff(self.times) <= 0):
            raise ConfigurationError("snapshot times must be strictly increasing")

    @property
    def final_positions(self) -> np.ndarray:
        return self.snapshots[-1]

    def save(self, path) -> None:
        storage.write_ensemble_series(
            path, self.times, self.snapshots, {"config_hash": self.config_hash, "seed": self.seed}
        )

    @classmethod
    def load(cls, path) -> "TrajectoryStore":
        times, snapshots, meta = storage.read_ensemble_series(path)
        return cls(times, snapshots, meta.get("config_hash", ""), int(meta.get("seed", 0)))


# -- kernels and drift --------------------------------------------------------


def build_kernel(config: SimulationConfig):
    """Kernel object used for stepping: mollified at the config's scale."""
    base = make_kernel(config.kernel, **config.kernel_params)
    if isinstance(base, ZeroKernel):
        return base
    if isinstance(base, BiotSavartKernel):
        return mollify(base, config.n)
    return MollifiedKernel(
        base,
        Mollifier(config.n, dimension=base.dimension),
        mode=QUADRATURE,
        quadrature_resolution=max(201, 2 * config.n + 16),
    )


def empirical_drift(t, x, ensemble, kernel, self_index=None, self_interaction="exclude"):
    """(1/N) sum_j K(t, x, X_j), optionally excluding j = self_index.

    ``ensemble`` may be a ParticleEnsemble or an (N, d) position array.
    """
    positions = ensemble.positions if isinstance(ensemble, ParticleEnsemble) else np.asarray(ensemble)
    x = np.asarray(x, dtype=np.float64)
    N = len(positions)
    vals = kernel.evaluate(t, x[None, :], positions)
    if not np.all(np.isfinite(vals)):
        raise ConfigurationError(
            "non-finite kernel value in empirical drift; mollify singular kernels before use"
        )
    if self_interaction == "exclude" and self_index is not None:
        mask = np.ones(N, dtype=bool)
        mask[self_index] = False
        vals = vals[mask]
    return vals.sum(axis=0) / N


def tree_drift(positions, kernel, theta: float, leaf_size: int = 16) -> np.ndarray:
    """Barnes-Hut all-particle drift; requires a mollified Biot-Savart-class kernel in d = 2."""
    if isinstance(positions, ParticleEnsemble):
        positions = positions.positions
    if not (isinstance(kernel, MollifiedKernel) and isinstance(kernel.base, BiotSavartKernel)):
        raise ConfigurationError("tree summation supports the mollified Biot-Savart kernel only")
    if positions.shape[1] != 2:
        raise ConfigurationError("tree summation requires d = 2")
    return tree_drift_biot_savart(positions, kernel.n, theta, leaf_size=leaf_size)


def _generic_direct_drift(t, positions, kernel, include_self: bool) -> np.ndarray:
    """O(N^2) fallback for kernels without a compiled fast path, chunked over targets."""
    N, d = positions.shape
    out = np.empty_like(positions)
    chunk = max(1, int(2e6) // max(N, 1))
    for lo in range(0, N, chunk):
        hi = min(N, lo + chunk)
        vals = kernel.evaluate(t, positions[lo:hi, None, :], positions[None, :, :])
        if not include_self:
            for i in range(lo, hi):
                vals[i - lo, i] = 0.0
        out[lo:hi] = vals.sum(axis=1) / N
    return out


def drift_all(t, positions, kernel, config: SimulationConfig) -> np.ndarray:
    """Empirical drift for every particle against the current ensemble."""
    if isinstance(kernel, ZeroKernel):
        return np.zeros_like(positions)
    if config.summation == "tree":
        return tree_drift(positions, kernel, config.theta, config.leaf_size)
    if isinstance(kernel, MollifiedKernel) and isinstance(kernel.base, BiotSavartKernel):
        # K_n(0) = 0 for this kernel, so include/exclude coincide
        out = np.empty_like(positions)
        direct_drift_biot_savart(positions, float(kernel.n), out)
        return out
    if isinstance(kernel, MollifiedKernel) and isinstance(kernel.base, PowerLawVortexKernel):
        radii, gvals = kernel.radial_table()
        out = np.empty_like(positions)
        direct_drift_radial_table(positions, radii, gvals, kernel.base.a, out)
        return out
    return _generic_direct_drift(t, positions, kernel, config.self_interaction == "include")


# -- noise and initial conditions ---------------------------------------------


def noise_increments(seed: int, step_index: int, N: int, d: int) -> np.ndarray:
    """Standard Gaussian block for one step; row i is particle i's draw.

    Keying the Philox counter stream by (seed, step) and slicing rows by
    particle realizes independent per-(seed, particle, step) streams without
    any dependence on evaluation order.
    """
    gen = np.random.Generator(np.random.Philox(key=[seed & _U64, step_index]))
    return gen.standard_normal((N, d))


def initial_positions(config: SimulationConfig) -> np.ndarray:
    """Draw the initial ensemble from the configured law on a dedicated stream."""
    gen = np.random.Generator(np.random.Philox(key=[config.seed & _U64, _INIT_STREAM]))
    N, d = config.N, config.d
    p = config.initial_params
    if config.initial_law == "point":
        x0 = np.broadcast_to(np.asarray(p.get("x0", np.zeros(d)), dtype=np.float64), (d,))
        return np.tile(x0, (N, 1))
    if config.initial_law == "gaussian":
        mean = np.broadcast_to(np.asarray(p.get("mean", np.zeros(d)), dtype=np.float64), (d,))
        std = float(p.get("std", 1.0))
        return mean + std * gen.standard_normal((N, d))
    if config.initial_law == "uniform_ball":
        center = np.broadcast_to(np.asarray(p.get("center", np.zeros(d)), dtype=np.float64), (d,))
        radius = float(p.get("radius", 1.0))
        direction = gen.standard_normal((N, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        r = radius * gen.random(N) ** (1.0 / d)
        return center + r[:, None] * direction
    # empirical: final snapshot of a stored ensemble series
    path = p.get("path")
    if path is None:
        raise ConfigurationError("initial_law='empirical' requires initial_params['path']")
    _, snapshots, _ = storage.read_ensemble_series(path)
    pos = snapshots[-1]
    if pos.shape != (N, d):
        raise ConfigurationError(
            f"empirical initial data has shape {pos.shape}, config expects {(N, d)}"
        )
    return pos.copy()


# -- time stepping ------------------------------------------------------------


def step(ensemble: ParticleEnsemble, kernel, config: SimulationConfig) -> ParticleEnsemble:
    """One synchronous Euler-Maruyama step of size config.dt."""
    if not config.dt > 0.0:
        raise ConfigurationError(f"dt={config.dt} must be positive")
    pos = ensemble.positions
    drift = drift_all(ensemble.time, pos, kernel, config)
    xi = noise_increments(ensemble.seed, ensemble.step_index, *pos.shape)
    new_pos = pos + drift * config.dt + math.sqrt(2.0 * config.dt) * config.noise_scale * xi
    if not np.all(np.isfinite(new_pos)):
        bad = np.nonzero(~np.isfinite(new_pos).all(axis=1))[0]
        finite_drift = drift[np.isfinite(drift).all(axis=1)]
        max_drift = float(np.max(np.linalg.norm(finite_drift, axis=1))) if len(finite_drift) else np.nan
        raise BlowUpError(ensemble.step_index, bad, max_drift, _closest_pair(pos, bad))
    return ParticleEnsemble(new_pos, ensemble.time + config.dt, ensemble.seed, ensemble.step_index + 1)


def _closest_pair(pos: np.ndarray, suspects) -> tuple[int, int] | None:
    """Nearest pre-step neighbor of the first offending particle (diagnostic only)."""
    if len(suspects) == 0 or len(pos) < 2:
        return None
    i = int(suspects[0])
    dist = np.linalg.norm(pos - pos[i], axis=1)
    dist[i] = np.inf
    return (i, int(np.argmin(dist)))


def simulate(config: SimulationConfig) -> TrajectoryStore:
    """Run the full horizon and record every ``snapshot_stride``-th state.

    Deterministic given (config, seed): bit-identical snapshots regardless of
    the numba thread count.
    """
    kernel = build_kernel(config)
    ens = ParticleEnsemble(initial_positions(config), 0.0, config.seed, 0)
    stride = config.snapshot_stride
    times = [ens.time]
    snaps = [ens.positions.copy()]
    for k in range(config.n_steps):
        ens = step(ens, kernel, config)
        if (k + 1) % stride == 0:
            times.append(ens.time)
            snaps.append(ens.positions.copy())
    return TrajectoryStore(np.array(times), np.stack(snaps), config.config_hash(), config.seed)

"""Ensemble simulation of kinetic Langevin dynamics.

``dX = V dt,  dV = -grad U(X) dt - gamma V dt + sqrt(2 gamma) dB``.

Random numbers come from counter-based Philox streams keyed by
``(seed, block)`` where ``block = particle_id // BLOCK``; the counter is the
step index.  A particle's noise therefore depends only on its id, the seed and
the step number, which makes runs reproducible regardless of how particles are
split across workers.
"""

from __future__ import annotations

import csv
import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .gaussian import GaussianLaw, ModelParams, transition

BLOCK = 4096
SCHEMES = ("exact_gaussian", "baoab", "euler_maruyama")

# counter value reserved for drawing initial states
_INIT_STEP = 2**62
_MASK64 = (1 << 64) - 1

BINARY_MAGIC = b"HLSIENS\x01"
_HEADER = struct.Struct("<8sQQdQQ")


@dataclass(frozen=True)
class Potential:
    """Confining potential: ``quadratic`` with Hessian ``H``, or ``quartic``.

    The quartic family is ``U(x) = rho (|x|^2 / 2 + epsilon sum_i x_i^4 / 4)``.
    """

    kind: str
    H: np.ndarray | None = None
    rho: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind == "quadratic":
            if self.H is None:
                raise ValueError("quadratic potential needs H")
            H = np.atleast_2d(np.asarray(self.H, dtype=float)).copy()
            H.setflags(write=False)
            object.__setattr__(self, "H", H)
        elif self.kind == "quartic":
            if not self.rho > 0:
                raise ValueError("rho must be positive")
            if self.epsilon < 0:
                raise ValueError("epsilon must be nonnegative")
        else:
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @classmethod
    def quadratic(cls, H) -> Potential:
        return cls("quadratic", H=H)

    @classmethod
    def quartic(cls, rho: float, epsilon: float) -> Potential:
        return cls("quartic", rho=float(rho), epsilon=float(epsilon))

    @classmethod
    def from_params(cls, params: ModelParams) -> Potential:
        return cls.quadratic(params.H)

    def U(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.kind == "quadratic":
            return 0.5 * np.einsum("ni,ij,nj->n", x, self.H, x)
        return self.rho * (0.5 * np.sum(x * x, axis=1) + 0.25 * self.epsilon * np.sum(x**4, axis=1))

    def grad(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "quadratic":
            return x @ self.H
        return self.rho * (x + self.epsilon * (x * x * x))

    def to_dict(self) -> dict:
        if self.kind == "quadratic":
            return {"kind": "quadratic", "H": self.H.tolist()}
        return {"kind": "quartic", "rho": self.rho, "epsilon": self.epsilon}


@dataclass(frozen=True)
class Ensemble:
    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0
    seed: int = 0
    stream_ids: np.ndarray | None = None
    step_count: int = 0

    def __post_init__(self):
        x = np.atleast_2d(np.asarray(self.positions, dtype=float))
        v = np.atleast_2d(np.asarray(self.velocities, dtype=float))
        if x.shape != v.shape or x.shape[0] < 1:
            raise ValueError("positions and velocities must share an N x d shape with N >= 1")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(v))):
            raise ValueError("ensemble contains nonfinite entries")
        ids = np.arange(x.shape[0], dtype=np.int64) if self.stream_ids is None \
            else np.asarray(self.stream_ids, dtype=np.int64)
        if ids.shape != (x.shape[0],):
            raise ValueError("one stream id per particle required")
        for a in (x, v, ids):
            a.setflags(write=False)
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)
        object.__setattr__(self, "stream_ids", ids)
        object.__setattr__(self, "seed", int(self.seed) & _MASK64)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def d(self) -> int:
        return self.positions.shape[1]

    @property
    def states(self) -> np.ndarray:
        """``N x 2d`` array of ``(x, v)``."""
        return np.hstack([self.positions, self.velocities])

    def subset(self, idx) -> Ensemble:
        return replace(self, positions=self.positions[idx], velocities=self.velocities[idx],
                       stream_ids=self.stream_ids[idx])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["particle_id"] + [f"x{i}" for i in range(self.d)] + [f"v{i}" for i in range(self.d)])
        for pid, x, v in zip(self.stream_ids, self.positions, self.velocities):
            w.writerow([int(pid)] + [repr(float(a)) for a in x] + [repr(float(a)) for a in v])
        return buf.getvalue()

    def to_bytes(self) -> bytes:
        """Binary snapshot: fixed header, then int64 ids, positions, velocities (little-endian)."""
        head = _HEADER.pack(BINARY_MAGIC, self.n, self.d, float(self.time), self.seed, self.step_count)
        return (head + self.stream_ids.astype("<i8").tobytes()
                + self.positions.astype("<f8").tobytes() + self.velocities.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> Ensemble:
        magic, n, d, t, seed, steps = _HEADER.unpack_from(data, 0)
        if magic != BINARY_MAGIC:
            raise ValueError("not an ensemble snapshot (bad magic)")
        off = _HEADER.size
        expected = off + 8 * n + 16 * n * d
        if len(data) != expected:
            raise ValueError(f"snapshot length {len(data)} != expected {expected}")
        ids = np.frombuffer(data, "<i8", n, off)
        off += 8 * n
        x = np.frombuffer(data, "<f8", n * d, off).reshape(n, d)
        off += 8 * n * d
        v = np.frombuffer(data, "<f8", n * d, off).reshape(n, d)
        return cls(x.copy(), v.copy(), t, seed, ids.copy(), steps)


def block_normals(seed: int, block: int, step: int, rows: int, width: int) -> np.ndarray:
    """Standard normals for one particle block at one step (``rows x width``)."""
    bg = np.random.Philox(key=np.array([seed & _MASK64, block], dtype=np.uint64),
                          counter=np.array([0, step, 0, 0], dtype=np.uint64))
    return np.random.Generator(bg).standard_normal((rows, width))


def block_groups(ids: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """``(block, row indices)`` pairs covering ``ids``."""
    ids = np.asarray(ids, dtype=np.int64)
    blocks = ids // BLOCK
    order = np.argsort(blocks, kind="stable")
    ub, starts = np.unique(blocks[order], return_index=True)
    return list(zip(ub.tolist(), np.split(order, starts[1:])))


def particle_normals(seed: int, ids: np.ndarray, step: int, width: int,
                     groups: list | None = None) -> np.ndarray:
    """Normals for arbitrary particle ids; row ``i`` depends only on ``ids[i]``."""
    ids = np.asarray(ids, dtype=np.int64)
    out = np.empty((ids.size, width))
    for b, rows in groups if groups is not None else block_groups(ids):
        local = ids[rows] % BLOCK
        out[rows] = block_normals(seed, b, step, int(local.max()) + 1, width)[local]
    return out


def sample_ensemble(law: GaussianLaw, n: int, seed: int, id_offset: int = 0) -> Ensemble:
    """Draw ``n`` particles from a Gaussian phase-space law with reproducible streams."""
    if law.dim % 2:
        raise ValueError("phase-space law must have even dimension")
    d = law.dim // 2
    ids = np.arange(id_offset, id_offset + n, dtype=np.int64)
    L = np.linalg.cholesky(law.cov)
    z = law.mean + particle_normals(seed, ids, _INIT_STEP, law.dim) @ L.T
    return Ensemble(z[:, :d], z[:, d:], 0.0, seed, ids)


@dataclass
class _Kernel:
    scheme: str
    h: float
    gamma: float
    pot: Potential
    F: np.ndarray | None = None
    L: np.ndarray | None = None
    width: int = field(init=False, default=0)

    def advance(self, x, v, xi):
        h = self.h
        if self.scheme == "exact_gaussian":
            z = np.hstack([x, v]) @ self.F.T + xi @ self.L.T
            d = x.shape[1]
            return z[:, :d], z[:, d:]
        if self.scheme == "baoab":
            c = math.exp(-self.gamma * h)
            s = math.sqrt(-math.expm1(-2.0 * self.gamma * h))
            v = v - 0.5 * h * self.pot.grad(x)
            x = x + 0.5 * h * v
            v = c * v + s * xi
            x = x + 0.5 * h * v
            v = v - 0.5 * h * self.pot.grad(x)
            return x, v
        # Euler-Maruyama
        g = self.pot.grad(x)
        return x + h * v, v - h * g - self.gamma * h * v + math.sqrt(2.0 * self.gamma * h) * xi


def _kernel(pot: Potential, params: ModelParams, h: float, scheme: str, d: int) -> _Kernel:
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if not h > 0:
        raise ValueError("step size must be positive")
    k = _Kernel(scheme, float(h), params.gamma, pot)
    if scheme == "exact_gaussian":
        if pot.kind != "quadratic":
            raise ValueError("exact_gaussian requires a quadratic potential")
        if pot.H.shape != params.H.shape or not np.allclose(pot.H, params.H, rtol=1e-12, atol=0):
            raise ValueError("potential Hessian does not match model params")
        F, W = transition(params, h)
        k.F, k.L = F, np.linalg.cholesky(W)
        k.width = 2 * d
    else:
        k.width = d
    return k


def _advance_blocks(kernel: _Kernel, x: np.ndarray, v: np.ndarray, ids: np.ndarray,
                    seed: int, step: int, groups: list | None = None) -> tuple[np.ndarray, np.ndarray]:
    groups = groups if groups is not None else block_groups(ids)
    xi = particle_normals(seed, ids, step, kernel.width, groups)
    xo, vo = np.empty_like(x), np.empty_like(v)
    # process block by block so results do not depend on how particles are batched
    for _, rows in groups:
        xo[rows], vo[rows] = kernel.advance(x[rows], v[rows], xi[rows])
    return xo, vo


def step(ens: Ensemble, pot: Potential, params: ModelParams, h: float, scheme: str = "baoab") -> Ensemble:
    """Advance every particle by one step of size ``h``."""
    k = _kernel(pot, params, h, scheme, ens.d)
    x, v = _advance_blocks(k, ens.positions, ens.velocities, ens.stream_ids, ens.seed, ens.step_count)
    return replace(ens, positions=x, velocities=v, time=ens.time + h, step_count=ens.step_count + 1)


def _snapshot_steps(t0: float, h: float, snapshots) -> list[int]:
    out, prev = [], 0
    for t in snapshots:
        k = round((t - t0) / h)
        if k < 0 or abs(t0 + k * h - t) > 1e-12 * max(1.0, abs(t)):
            raise ValueError(f"snapshot time {t!r} is not a multiple of h={h!r} from t0={t0!r}")
        if k < prev:
            raise ValueError("snapshot times must be nondecreasing")
        out.append(k)
        prev = k
    return out


def _run_partition(k: _Kernel, ens: Ensemble, h: float, steps: list[int]) -> list[tuple]:
    x, v = ens.positions, ens.velocities
    groups = block_groups(ens.stream_ids)
    done, out = 0, []
    for target in steps:
        while done < target:
            x, v = _advance_blocks(k, x, v, ens.stream_ids, ens.seed, ens.step_count + done, groups)
            done += 1
        out.append((x.copy(), v.copy()))
    return out


def simulate_ensemble(init, pot: Potential, params: ModelParams, h: float, snapshots,
                      scheme: str = "baoab", *, n: int | None = None, seed: int = 0,
                      workers: int = 1) -> list[Ensemble]:
    """States at each snapshot time, started from an ``Ensemble`` or a ``GaussianLaw``.

    Particles are partitioned across ``workers`` threads along block boundaries;
    the output is identical for any worker count.
    """
    snapshots = list(snapshots)
    if isinstance(init, GaussianLaw):
        if n is None:
            raise ValueError("n is required when sampling the initial ensemble from a law")
        init = sample_ensemble(init, n, seed)
    steps = _snapshot_steps(init.time, h, snapshots)
    if not steps:
        return []
    k = _kernel(pot, params, h, scheme, init.d)

    blocks = init.stream_ids // BLOCK
    ub = np.unique(blocks)
    workers = max(1, min(int(workers), ub.size))
    groups = [np.isin(blocks, part) for part in np.array_split(ub, workers)]
    parts = [init.subset(g) for g in groups]
    if workers == 1:
        results = [_run_partition(k, parts[0], h, steps)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda e: _run_partition(k, e, h, steps), parts))

    out = []
    for j, kj in enumerate(steps):
        x = np.empty_like(init.positions)
        v = np.empty_like(init.velocities)
        for g, res in zip(groups, results):
            x[g], v[g] = res[j]
        out.append(replace(init, positions=x, velocities=v, time=init.time + kj * h,
                           step_count=init.step_count + kj))
    return out

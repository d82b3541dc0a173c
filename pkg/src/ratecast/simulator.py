"""Round-based simulation of decentralized neighbor probing and SGD.

Every node picks ``k`` random neighbors and probes them. A probe of path
i -> j is a two-party exchange: i sends its u-row, j sends its v-row, and
each side updates only its own row from the pre-exchange values. This is
the same arithmetic as one centralized SGD step on entry (i, j), so the
assembled model can be compared bit-for-bit with :func:`factorization.train`
replaying the simulator's global step order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .factorization import (FactorModel, ModelKind, TrainConfig, TrainingDiverged, init_model,
                            predict_rating)
from .ratings import MetricMatrix, RatingMatrix, RatingScale


def default_k(n: int) -> int:
    return 32 if n >= 1000 else 10


def select_neighbors(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    """Row i holds a uniform k-subset of the other n-1 nodes, drawn independently per node."""
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    out = np.empty((n, k), dtype=np.int64)
    for i in range(n):
        pick = rng.choice(n - 1, size=k, replace=False)
        out[i] = pick + (pick >= i)
    return out


def probed_entries(neighbors: np.ndarray, bidirectional: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Directed (row, col) entries measured by the probes, sorted row-major, without duplicates."""
    n, k = neighbors.shape
    rows = np.repeat(np.arange(n, dtype=np.int64), k)
    cols = neighbors.ravel().astype(np.int64)
    if bidirectional:
        rows, cols = np.concatenate([rows, cols]), np.concatenate([cols, rows])
    keys = np.unique(rows * n + cols)
    return keys // n, keys % n


@dataclass(frozen=True)
class SimConfig:
    k: int | None = None
    rounds: int = 30
    train: TrainConfig = TrainConfig()
    seed: int = 0
    bidirectional: bool = False

    def resolve_k(self, n: int) -> int:
        return self.k if self.k is not None else default_k(n)


@dataclass
class NodeState:
    id: int
    u_row: np.ndarray
    v_row: np.ndarray
    neighbor_ids: list[int]
    # (neighbor, outgoing rating, incoming rating or None)
    observed: list[tuple[int, int, int | None]] = field(default_factory=list)


class AccessLog:
    """Checks that nodes read only their contacts and write only themselves."""

    def __init__(self, contacts: list[set[int]], keep: bool = False):
        self.contacts = contacts
        self.keep = keep
        self.entries: list[tuple[int, int, str]] = []
        self.reads = 0
        self.writes = 0
        self.nonlocal_reads = 0
        self.foreign_writes = 0

    def read(self, actor: int, owner: int) -> None:
        self.reads += 1
        if owner != actor and owner not in self.contacts[actor]:
            self.nonlocal_reads += 1
        if self.keep:
            self.entries.append((actor, owner, "read"))

    def write(self, actor: int, owner: int) -> None:
        self.writes += 1
        if owner != actor:
            self.foreign_writes += 1
        if self.keep:
            self.entries.append((actor, owner, "write"))

    @property
    def violations(self) -> int:
        return self.nonlocal_reads + self.foreign_writes


@dataclass
class SimulationResult:
    model: FactorModel
    probed: RatingMatrix
    test: RatingMatrix
    neighbors: np.ndarray
    orders: list[np.ndarray]
    rmse_trajectory: list[float]
    exchanges_per_round: int
    access: AccessLog

    @property
    def rounds(self) -> int:
        return len(self.orders)

    @property
    def messages_per_round(self) -> int:
        return 2 * self.exchanges_per_round

    @property
    def observed_fraction(self) -> float:
        n = self.model.n
        return len(self.probed) / (n * (n - 1))

    def report(self) -> str:
        lines = [
            f"n={self.model.n}",
            f"k={self.neighbors.shape[1]}",
            f"rounds={self.rounds}",
            f"exchanges_per_round={self.exchanges_per_round}",
            f"messages_per_round={self.messages_per_round}",
            f"messages={self.messages_per_round * self.rounds}",
            f"observed_entries={len(self.probed)}",
            f"observed_fraction={self.observed_fraction:.6f}",
            f"locality_violations={self.access.violations}",
            "rmse_trajectory=" + ",".join(f"{x:.6f}" for x in self.rmse_trajectory),
        ]
        if self.rmse_trajectory:
            lines.append(f"final_rmse={self.rmse_trajectory[-1]:.6f}")
        return "\n".join(lines) + "\n"


class Simulation:
    def __init__(self, kind: ModelKind | str, metric: MetricMatrix, scale: RatingScale,
                 sim: SimConfig = SimConfig(), keep_access_log: bool = False,
                 eval_cap: int | None = 200_000):
        self.kind = ModelKind.parse(kind)
        if self.kind is ModelKind.MMMF and sim.train.learn_theta:
            raise ValueError("decentralized MMMF needs fixed thresholds (learn_theta=False)")
        if scale.kind is not metric.kind:
            raise ValueError("metric kind mismatch between matrix and rating scale")
        self.sim = sim
        self.config = sim.train
        n = metric.n
        k = sim.resolve_k(n)
        rng = np.random.default_rng(sim.seed)
        self.rng = rng
        self.neighbors = select_neighbors(n, k, rng)

        rows, cols = probed_entries(self.neighbors, sim.bidirectional)
        keep = ~metric.missing[rows, cols]
        rows, cols = rows[keep], cols[keep]
        self.probed = RatingMatrix(n, rows, cols, scale.rate(metric.values[rows, cols]), scale.R)
        self.entry_index = {(int(i), int(j)): e for e, (i, j) in enumerate(zip(rows, cols))}

        mask = ~metric.missing
        mask[rows, cols] = False
        trows, tcols = np.nonzero(mask)
        if eval_cap is not None and trows.size > eval_cap:
            pick = np.sort(np.random.default_rng([sim.seed, 1]).choice(trows.size, eval_cap, replace=False))
            trows, tcols = trows[pick], tcols[pick]
        self.test = RatingMatrix(n, trows, tcols, scale.rate(metric.values[trows, tcols]), scale.R)

        init = init_model(self.kind, n, self.config, np.random.default_rng(self.config.seed), scale.R)
        self.theta = init.theta.copy() if init.theta is not None else np.empty(0)
        self.nodes = [NodeState(i, init.U[i].copy(), init.V[i].copy(), [int(j) for j in self.neighbors[i]])
                      for i in range(n)]
        for i, node in enumerate(self.nodes):
            for j in node.neighbor_ids:
                out_r = self._rating(i, j)
                in_r = self._rating(j, i) if sim.bidirectional else None
                if out_r is not None or in_r is not None:
                    node.observed.append((j, out_r, in_r))

        contacts = [set() for _ in range(n)]
        for i in range(n):
            for j in self.neighbors[i]:
                contacts[i].add(int(j))
                contacts[int(j)].add(i)
        self.access = AccessLog(contacts, keep_access_log)
        self.orders: list[np.ndarray] = []
        self.rmse_trajectory: list[float] = []
        self.exchanges_per_round = sum((o is not None) + (inc is not None)
                                       for node in self.nodes for _, o, inc in node.observed)

    def _rating(self, i: int, j: int) -> int | None:
        e = self.entry_index.get((i, j))
        return None if e is None else int(self.probed.ratings[e])

    def _exchange(self, a: int, b: int, x: float) -> None:
        """Probe result x for path a -> b: a refreshes its u-row, b its v-row."""
        cfg = self.config
        node_a, node_b = self.nodes[a], self.nodes[b]
        for reader, owner in ((a, b), (b, a)):
            self.access.read(reader, owner)
        u_msg = node_a.u_row.copy()
        v_msg = node_b.v_row.copy()

        u_new = node_a.u_row.copy()
        loss = _kernels.sgd_step(self.kind.code, u_new, v_msg.copy(), self.theta, x,
                                 cfg.eta, cfg.lam, False)
        v_new = node_b.v_row.copy()
        _kernels.sgd_step(self.kind.code, u_msg, v_new, self.theta, x, cfg.eta, cfg.lam, False)
        if not (np.isfinite(loss) and np.all(np.isfinite(u_new)) and np.all(np.isfinite(v_new))):
            raise TrainingDiverged(sum(len(o) for o in self.orders), len(self.orders))

        node_a.u_row = u_new
        self.access.write(a, a)
        node_b.v_row = v_new
        self.access.write(b, b)

    def step_round(self) -> None:
        order = []
        for i in self.rng.permutation(len(self.nodes)):
            node = self.nodes[i]
            for p in self.rng.permutation(len(node.observed)):
                j, out_r, in_r = node.observed[p]
                if out_r is not None:
                    self._exchange(i, j, float(out_r))
                    order.append(self.entry_index[(i, j)])
                if in_r is not None:
                    self._exchange(j, i, float(in_r))
                    order.append(self.entry_index[(j, i)])
        self.orders.append(np.array(order, dtype=np.int64))
        if len(self.test):
            self.rmse_trajectory.append(self.test_rmse())

    def assemble(self) -> FactorModel:
        theta = self.theta.copy() if self.kind is ModelKind.MMMF else None
        return FactorModel(self.kind, np.vstack([nd.u_row for nd in self.nodes]),
                           np.vstack([nd.v_row for nd in self.nodes]), self.probed.R, theta)

    def test_rmse(self) -> float:
        pred = predict_rating(self.assemble(), self.test.rows, self.test.cols)
        return float(np.sqrt(np.mean((pred - self.test.ratings) ** 2)))

    def run(self) -> SimulationResult:
        for _ in range(self.sim.rounds):
            self.step_round()
        return SimulationResult(self.assemble(), self.probed, self.test, self.neighbors, self.orders,
                                self.rmse_trajectory, self.exchanges_per_round, self.access)


def run_simulation(metric: MetricMatrix, scale: RatingScale, sim: SimConfig = SimConfig(),
                   kind: ModelKind | str = ModelKind.RMF, keep_access_log: bool = False) -> SimulationResult:
    return Simulation(kind, metric, scale, sim, keep_access_log).run()

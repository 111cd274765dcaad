"""In-process federation: m machines and a central server exchanging logged messages.

Machines own their datasets. The server only ever sees message payloads,
which are summaries (gradients, quadratic forms, bootstrap vectors, privatized
bits); the payload kinds form a closed set with no raw-sample member.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from .dp_core import InvalidArgument, Released, Rng
from .model import HyperParams, MachineDataset

__all__ = [
    "ProtocolFault",
    "NumericalFault",
    "PayloadKind",
    "Direction",
    "GradientMessage",
    "BroadcastMessage",
    "LogEntry",
    "MessageLog",
    "Machine",
    "FederatedRun",
    "round_gather",
    "round_broadcast",
    "aggregate",
]


class ProtocolFault(RuntimeError):
    """A message violated the channel contract."""

    def __init__(self, msg: str, machine_id: int | None = None):
        super().__init__(msg)
        self.machine_id = machine_id


class NumericalFault(RuntimeError):
    def __init__(self, msg: str, round_index: int | None = None):
        super().__init__(msg)
        self.round_index = round_index


class PayloadKind(str, enum.Enum):
    GRADIENT = "gradient"
    QUADRATIC_FORM = "quadratic_form"
    RESIDUAL_SUMMARY = "residual_summary"
    BOOTSTRAP_VECTOR = "bootstrap_vector"
    SCALAR_SUMMARY = "scalar_summary"
    PRIVATIZED_BITS = "privatized_bits"
    ITERATE = "iterate"


class Direction(str, enum.Enum):
    UP = "machine_to_server"
    DOWN = "server_to_machines"


@dataclass(frozen=True)
class GradientMessage:
    machine_id: int
    round: int
    payload: np.ndarray
    kind: PayloadKind = PayloadKind.GRADIENT


@dataclass(frozen=True)
class BroadcastMessage:
    round: int
    payload: np.ndarray


@dataclass(frozen=True)
class LogEntry:
    direction: Direction
    round: int
    machine_id: int | None
    digest: str
    kind: PayloadKind
    shape: tuple[int, ...] = ()

    def as_dict(self) -> dict[str, Any]:
        return {
            "direction": self.direction.value,
            "round": self.round,
            "machine_id": self.machine_id,
            "kind": self.kind.value,
            "shape": list(self.shape),
            "sha256": self.digest,
        }


def _digest(arr: np.ndarray) -> str:
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    h = hashlib.sha256()
    h.update(str(a.shape).encode())
    h.update(a.tobytes())
    return h.hexdigest()


class MessageLog:
    """Append-only record of every message that crossed a channel."""

    def __init__(self):
        self._entries: list[LogEntry] = []

    def append(self, entry: LogEntry) -> None:
        if not isinstance(entry.kind, PayloadKind):
            raise ProtocolFault(f"unknown payload kind {entry.kind!r}", entry.machine_id)
        self._entries.append(entry)

    @property
    def entries(self) -> tuple[LogEntry, ...]:
        return tuple(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def digests(self) -> list[str]:
        return [e.digest for e in self._entries]

    def dump_jsonl(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self._entries:
                fh.write(json.dumps(e.as_dict()) + "\n")

    @staticmethod
    def load_jsonl(path: str | Path) -> list[dict[str, Any]]:
        with open(path) as fh:
            return [json.loads(line) for line in fh if line.strip()]


class Machine:
    """A local machine. Its dataset is only visible to functions it runs."""

    def __init__(self, data: MachineDataset):
        self._data = data
        self.machine_id = data.machine_id
        self.last_broadcast: np.ndarray | None = None
        self._cache: dict[str, Any] = {}

    @property
    def n(self) -> int:
        return self._data.n

    @property
    def d(self) -> int:
        return self._data.d

    def run(self, local_fn: Callable[["LocalView"], Any]) -> Any:
        return local_fn(LocalView(self._data, self.last_broadcast, self._cache))


@dataclass
class LocalView:
    """What a machine-local computation may read."""

    data: MachineDataset
    last_broadcast: np.ndarray | None
    cache: dict[str, Any] = field(default_factory=dict)

    @property
    def X(self) -> np.ndarray:
        return self.data.X

    @property
    def y(self) -> np.ndarray:
        return self.data.y

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def machine_id(self) -> int:
        return self.data.machine_id

    def gram(self) -> np.ndarray:
        """``X^T X / n``, cached per machine."""
        G = self.cache.get("gram")
        if G is None:
            G = self.X.T @ self.X / self.n
            self.cache["gram"] = G
        return G


class FederatedRun:
    """Server state for one protocol execution.

    ``trusted=True``: machine-to-server messages may be raw summaries, but
    every broadcast must be a :class:`Released` value. ``trusted=False``:
    every machine-to-server payload must be a :class:`Released` value.
    """

    def __init__(self, datasets: Sequence[MachineDataset], hyper: HyperParams | None,
                 rng: Rng, trusted: bool = True):
        if not datasets:
            raise InvalidArgument("a federation needs at least one machine")
        ids = [ds.machine_id for ds in datasets]
        if len(set(ids)) != len(ids):
            raise InvalidArgument("machine ids must be unique")
        self.machines = [Machine(ds) for ds in sorted(datasets, key=lambda ds: ds.machine_id)]
        self.hyper = hyper
        self.rng = rng
        self.trusted = trusted
        self.log = MessageLog()
        self.round = 0
        self.budget_log: list[tuple[str, Any]] = []
        self.cache: dict[str, Any] = {}

    @property
    def m(self) -> int:
        return len(self.machines)

    @property
    def d(self) -> int:
        return self.machines[0].d

    @property
    def sizes(self) -> list[int]:
        return [mc.n for mc in self.machines]

    def next_round(self) -> int:
        self.round += 1
        return self.round

    def record_spend(self, component: str, budget) -> None:
        self.budget_log.append((component, budget))


def aggregate(messages: Sequence[GradientMessage]) -> np.ndarray:
    """Sum of payloads in machine-id order."""
    ordered = sorted(messages, key=lambda msg: msg.machine_id)
    return np.sum(np.stack([msg.payload for msg in ordered]), axis=0)


def round_gather(run: FederatedRun, local_fn: Callable[[LocalView], Any],
                 kind: PayloadKind = PayloadKind.GRADIENT) -> list[GradientMessage]:
    """Run ``local_fn`` on every machine and collect one message each.

    In untrusted mode ``local_fn`` must return a :class:`Released`.
    """
    rnd = run.round
    out = []
    for mc in run.machines:
        result = mc.run(local_fn)
        if isinstance(result, Released):
            payload = np.asarray(result.value, dtype=float)
        else:
            if not run.trusted:
                raise ProtocolFault(
                    f"untrusted server: machine {mc.machine_id} sent an un-privatized payload",
                    mc.machine_id)
            payload = np.asarray(result, dtype=float)
        if not np.all(np.isfinite(payload)):
            raise ProtocolFault(f"machine {mc.machine_id} sent a non-finite payload in round {rnd}",
                                mc.machine_id)
        payload = payload.copy()
        payload.setflags(write=False)
        msg = GradientMessage(mc.machine_id, rnd, payload, kind)
        run.log.append(LogEntry(Direction.UP, rnd, mc.machine_id, _digest(payload), kind,
                                payload.shape))
        out.append(msg)
    return out


def round_broadcast(run: FederatedRun, payload: Released, *, max_nonzero: int | None = None,
                    radius: float | None = None) -> BroadcastMessage:
    """Send a privatized value to every machine."""
    if run.trusted and not isinstance(payload, Released):
        raise ProtocolFault("trusted server: broadcast value did not pass a privatization step")
    value = np.asarray(payload, dtype=float).copy()
    if not np.all(np.isfinite(value)):
        raise NumericalFault(f"non-finite iterate in round {run.round}", run.round)
    if max_nonzero is not None:
        nnz = np.count_nonzero(value, axis=0)
        if np.any(nnz > max_nonzero):
            raise ProtocolFault(f"broadcast has {int(np.max(nnz))} nonzeros, limit {max_nonzero}")
    if radius is not None and value.size and np.max(np.abs(value)) > radius:
        raise ProtocolFault(f"broadcast exceeds the feasibility radius {radius}")
    value.setflags(write=False)
    for mc in run.machines:
        mc.last_broadcast = value
    run.log.append(LogEntry(Direction.DOWN, run.round, None, _digest(value),
                            PayloadKind.ITERATE, value.shape))
    return BroadcastMessage(run.round, value)

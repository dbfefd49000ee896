"""Mixed-platoon composition and its decomposition into control subsystems.

A platoon is a left-to-right sequence of labels, ``0`` for a CAV and ``1``
for an HDV, where index 0 is the platoon leader. The leader is always driven
by an external trajectory, so its label never matters for decomposition.

Every maximal run of consecutive CAVs behind the leader is cut front-to-rear
into chunks of at most ``max_module_size`` vehicles. The first chunk of a run
follows the vehicle directly in front of the run (the last of any HDVs, or the
leader); later chunks follow the last CAV of the chunk before them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import InvalidInputError

CAV = 0
HDV = 1

DEFAULT_MAX_MODULE_SIZE = 5


@dataclass(frozen=True)
class TopologyVector:
    labels: tuple[int, ...]

    def __post_init__(self):
        labels = tuple(int(x) for x in self.labels)
        if not labels:
            raise InvalidInputError("topology must contain at least one vehicle")
        bad = [x for x in labels if x not in (CAV, HDV)]
        if bad:
            raise InvalidInputError(f"topology labels must be 0 or 1, got {bad[0]!r}")
        object.__setattr__(self, "labels", labels)

    @classmethod
    def parse(cls, text: str) -> "TopologyVector":
        """Parse the ``"1,0,0,1,0"`` literal used in config files."""
        parts = [p.strip() for p in str(text).split(",") if p.strip()]
        try:
            return cls(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise InvalidInputError(f"bad topology literal {text!r}") from exc

    def __str__(self) -> str:
        return ",".join(str(x) for x in self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def __iter__(self):
        return iter(self.labels)

    def __getitem__(self, i):
        return self.labels[i]

    def cav_indices(self) -> list[int]:
        """CAVs that need a controller (the leader is excluded)."""
        return [i for i, x in enumerate(self.labels) if i >= 1 and x == CAV]


@dataclass(frozen=True)
class SubsystemAssignment:
    module_size: int
    leader_index: int
    cav_indices: tuple[int, ...]

    def to_dict(self) -> dict:
        return {
            "module_size": self.module_size,
            "leader_index": self.leader_index,
            "cav_indices": list(self.cav_indices),
        }


def _as_topology(topology) -> TopologyVector:
    if isinstance(topology, TopologyVector):
        return topology
    if isinstance(topology, str):
        return TopologyVector.parse(topology)
    return TopologyVector(tuple(topology))


def decompose(topology, max_module_size: int = DEFAULT_MAX_MODULE_SIZE) -> list[SubsystemAssignment]:
    """Split a platoon into HDV-led CAV subsystems, front to rear.

    >>> [a.cav_indices for a in decompose([1, 0, 0, 0, 0, 0, 0, 0])]
    [(1, 2, 3, 4, 5), (6, 7)]
    """
    topo = _as_topology(topology)
    if max_module_size < 1:
        raise InvalidInputError("max_module_size must be >= 1")

    labels = topo.labels
    out: list[SubsystemAssignment] = []
    i = 1
    n = len(labels)
    while i < n:
        if labels[i] != CAV:
            i += 1
            continue
        run_end = i
        while run_end < n and labels[run_end] == CAV:
            run_end += 1
        leader = i - 1
        for start in range(i, run_end, max_module_size):
            cavs = tuple(range(start, min(start + max_module_size, run_end)))
            out.append(SubsystemAssignment(len(cavs), leader, cavs))
            leader = cavs[-1]
        i = run_end
    return out


@dataclass
class PartitionCheck:
    """Outcome of :func:`verify_partition`; truthy when no violation was found."""

    ok: bool
    violations: list[dict] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


def verify_partition(
    topology,
    assignments: Iterable[SubsystemAssignment],
    max_module_size: int = DEFAULT_MAX_MODULE_SIZE,
) -> PartitionCheck:
    """Check an assignment list against every post-condition of :func:`decompose`.

    Written independently of ``decompose`` so it can serve as an oracle.
    """
    topo = _as_topology(topology)
    labels = topo.labels
    n = len(labels)
    assignments = list(assignments)
    violations: list[dict] = []

    def fail(kind: str, **info):
        violations.append({"kind": kind, **info})

    owner: dict[int, int] = {}
    for a_idx, a in enumerate(assignments):
        cavs = tuple(a.cav_indices)
        if not 1 <= a.module_size <= max_module_size:
            fail("module_size_out_of_range", assignment=a_idx, module_size=a.module_size)
        if len(cavs) != a.module_size:
            fail("size_mismatch", assignment=a_idx, module_size=a.module_size, n_cavs=len(cavs))
        if not cavs:
            continue
        if cavs != tuple(range(a.leader_index + 1, a.leader_index + 1 + len(cavs))):
            fail("not_consecutive_after_leader", assignment=a_idx)
        if a.leader_index < 0:
            fail("bad_leader_index", assignment=a_idx, leader=a.leader_index)
        for c in cavs:
            if not 1 <= c < n:
                fail("index_out_of_range", assignment=a_idx, index=c)
                continue
            if labels[c] != CAV:
                fail("hdv_in_module", assignment=a_idx, index=c)
            if c in owner:
                fail("duplicate_cav", index=c, assignments=[owner[c], a_idx])
            else:
                owner[c] = a_idx

        # a CAV leader (other than the playback leader) is only legal when it
        # closes a full chunk of the same run
        lead = a.leader_index
        if 1 <= lead < n and labels[lead] == CAV:
            prev = owner_of(assignments, lead)
            if prev is None:
                fail("cav_leader_not_controlled", assignment=a_idx, leader=lead)
            else:
                p = assignments[prev]
                if p.cav_indices[-1] != lead or p.module_size != max_module_size:
                    fail("bad_chunk_leader", assignment=a_idx, leader=lead)
        # a chunk may only stop short of the run end if it is full
        after = cavs[-1] + 1
        if after < n and labels[after] == CAV and len(cavs) != max_module_size:
            fail("run_split_early", assignment=a_idx)

    expected = set(topo.cav_indices())
    missing = sorted(expected - set(owner))
    if missing:
        fail("uncovered_cav", indices=missing)
    return PartitionCheck(ok=not violations, violations=violations)


def owner_of(assignments: Sequence[SubsystemAssignment], index: int) -> int | None:
    for i, a in enumerate(assignments):
        if index in a.cav_indices:
            return i
    return None

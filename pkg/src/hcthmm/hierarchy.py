"""Three-level parameter hierarchy and its consensus constraint encoding.

Each parameter block (a, c, b0, b1) is declared SUBJECT, SUBGROUP, or
POPULATION.  SUBGROUP and POPULATION blocks are tied through a consensus
vector z: subject i satisfies A_i theta_i = B_i z, where A_i picks the
constrained blocks out of theta_i and B_i picks the matching slice of z.
The stacked system is equivalent to a contrast constraint D theta = 0
(equality of shared blocks within their sharing scope).

z layout: blocks in canonical order (a, c, b0, b1); within a SUBGROUP block,
one copy per group ordered by group id 1..J; POPULATION blocks contribute a
single copy; SUBJECT blocks contribute nothing.
"""

import enum
from dataclasses import dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np

from .errors import GroupAssignmentError
from .params import BLOCK_NAMES, SubjectSeries, block_dims, block_slices, theta_dim


class Level(enum.Enum):
    SUBJECT = "subject"
    SUBGROUP = "subgroup"
    POPULATION = "population"


#: named hierarchy presets; see HierarchySpec.preset
PRESET_LEVELS = {
    "I": {"a": Level.SUBJECT, "c": Level.SUBJECT, "b0": Level.SUBJECT, "b1": Level.SUBJECT},
    "II": {"a": Level.SUBJECT, "c": Level.SUBJECT, "b0": Level.SUBJECT, "b1": Level.POPULATION},
    "III": {"a": Level.SUBGROUP, "c": Level.SUBGROUP, "b0": Level.SUBJECT, "b1": Level.POPULATION},
    "IV": {"a": Level.SUBGROUP, "c": Level.SUBGROUP, "b0": Level.SUBJECT, "b1": Level.SUBGROUP},
}


def _coerce_level(v) -> Level:
    if isinstance(v, Level):
        return v
    return Level(str(v).lower())


@dataclass(frozen=True)
class HierarchySpec:
    """Which blocks are shared at which level, plus the subject->group map.

    ``group_map`` is an ordered mapping subject_id -> group_id (1..J); its
    insertion order defines the subject indexing used by the constraint
    system and the fitting routines.
    """

    levels: Mapping[str, Level]
    group_map: Mapping[str, int]
    M: int
    J: int
    q: int

    def __post_init__(self):
        levels = {name: _coerce_level(self.levels[name]) for name in BLOCK_NAMES}
        object.__setattr__(self, "levels", levels)
        gm = dict(self.group_map)
        for sid, g in gm.items():
            if not 1 <= int(g) <= self.J:
                raise GroupAssignmentError(
                    f"subject {sid!r} assigned to unknown group {g} (J={self.J})"
                )
        object.__setattr__(self, "group_map", gm)
        block_dims(self.M, self.q)  # validates M, q

    @classmethod
    def preset(cls, kind: str, group_map, M: int, J: int, q: int) -> "HierarchySpec":
        kind = kind.upper()
        if kind not in PRESET_LEVELS:
            raise ValueError(f"unknown hierarchy preset {kind!r}; use I, II, III or IV")
        return cls(levels=PRESET_LEVELS[kind], group_map=group_map, M=M, J=J, q=q)

    @classmethod
    def from_data(
        cls, data: Sequence[SubjectSeries], levels, M: int, J: int | None = None
    ) -> "HierarchySpec":
        """Build a spec whose group map follows the data's own group ids."""
        gm = {s.subject_id: s.group_id for s in data}
        if len(gm) != len(data):
            raise GroupAssignmentError("duplicate subject ids in data")
        if J is None:
            J = max(gm.values())
        if isinstance(levels, str):
            return cls.preset(levels, gm, M=M, J=J, q=data[0].q)
        return cls(levels=levels, group_map=gm, M=M, J=J, q=data[0].q)

    def effective_n_params(self, n: int) -> int:
        """Free-parameter count after sharing (used by BIC)."""
        dims = block_dims(self.M, self.q)
        mult = {Level.SUBJECT: n, Level.SUBGROUP: self.J, Level.POPULATION: 1}
        return sum(dims[b] * mult[self.levels[b]] for b in BLOCK_NAMES)

    def uses_groups(self) -> bool:
        return any(l is Level.SUBGROUP for l in self.levels.values())


@dataclass(frozen=True)
class ConstraintSystem:
    """Index-based realisation of A_i theta_i = B_i z for n subjects.

    ``theta_idx`` holds, per subject, the positions within theta_i selected
    by A_i (identical across subjects since sharing is block-wise), and
    ``z_idx`` the matching positions within z selected by B_i.
    """

    n: int
    z_dim: int
    groups: np.ndarray  # (n,) 1-based group per subject
    theta_idx: List[np.ndarray]
    z_idx: List[np.ndarray]
    z_layout: Dict[tuple, slice]  # (block, scope) -> slice of z; scope is group id or "pop"
    spec: HierarchySpec

    @property
    def n_constraints(self) -> int:
        return sum(len(ix) for ix in self.theta_idx)

    def select(self, i: int, theta_vec: np.ndarray) -> np.ndarray:
        """A_i theta_i."""
        return theta_vec[self.theta_idx[i]]

    def z_select(self, i: int, z: np.ndarray) -> np.ndarray:
        """B_i z."""
        return z[self.z_idx[i]]

    def dense_A(self, i: int) -> np.ndarray:
        d = theta_dim(self.spec.M, self.spec.q)
        A = np.zeros((len(self.theta_idx[i]), d))
        A[np.arange(A.shape[0]), self.theta_idx[i]] = 1.0
        return A

    def dense_B(self, i: int) -> np.ndarray:
        B = np.zeros((len(self.z_idx[i]), self.z_dim))
        B[np.arange(B.shape[0]), self.z_idx[i]] = 1.0
        return B

    def scope_members(self) -> Dict[tuple, np.ndarray]:
        """Subject indices backing each z slice (groups for SUBGROUP, all for POPULATION)."""
        out = {}
        for (block, scope), sl in self.z_layout.items():
            if scope == "pop":
                out[(block, scope)] = np.arange(self.n)
            else:
                out[(block, scope)] = np.flatnonzero(self.groups == scope)
        return out


def build_constraints(spec: HierarchySpec, n: int) -> ConstraintSystem:
    """Materialize the constraint system for n subjects in group-map order."""
    if n < 1:
        raise ValueError("need at least one subject")
    if len(spec.group_map) != n:
        raise GroupAssignmentError(
            f"group map covers {len(spec.group_map)} subjects, data has {n}"
        )
    groups = np.array([int(g) for g in spec.group_map.values()], dtype=int)
    present = np.unique(groups)
    if spec.uses_groups():
        for j in range(1, spec.J + 1):
            if j not in present:
                raise GroupAssignmentError(f"group {j} has no subjects")

    dims = block_dims(spec.M, spec.q)
    tslices = block_slices(spec.M, spec.q)

    z_layout: Dict[tuple, slice] = {}
    lo = 0
    for block in BLOCK_NAMES:
        lvl = spec.levels[block]
        if lvl is Level.SUBGROUP:
            for j in range(1, spec.J + 1):
                z_layout[(block, j)] = slice(lo, lo + dims[block])
                lo += dims[block]
        elif lvl is Level.POPULATION:
            z_layout[(block, "pop")] = slice(lo, lo + dims[block])
            lo += dims[block]
    z_dim = lo

    theta_idx, z_idx = [], []
    for g in groups:
        t_parts, z_parts = [], []
        for block in BLOCK_NAMES:
            lvl = spec.levels[block]
            if lvl is Level.SUBJECT:
                continue
            scope = "pop" if lvl is Level.POPULATION else int(g)
            t_parts.append(np.arange(tslices[block].start, tslices[block].stop))
            zsl = z_layout[(block, scope)]
            z_parts.append(np.arange(zsl.start, zsl.stop))
        if t_parts:
            theta_idx.append(np.concatenate(t_parts))
            z_idx.append(np.concatenate(z_parts))
        else:
            theta_idx.append(np.empty(0, dtype=int))
            z_idx.append(np.empty(0, dtype=int))

    return ConstraintSystem(
        n=n,
        z_dim=z_dim,
        groups=groups,
        theta_idx=theta_idx,
        z_idx=z_idx,
        z_layout=z_layout,
        spec=spec,
    )

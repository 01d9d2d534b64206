"""Variable groupings: disjoint groups of predictor indices covering all predictors."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from grouped_bart.logic.errors import InvalidPartitionError


@dataclass(frozen=True)
class Partition:
    groups: tuple[frozenset[int], ...]
    num_variables: int

    def __post_init__(self):
        groups = tuple(frozenset(int(v) for v in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        if self.num_variables < 1:
            raise InvalidPartitionError("a partition needs at least one variable")
        if any(not g for g in groups):
            raise InvalidPartitionError("groups must be nonempty")
        seen: set[int] = set()
        for g in groups:
            if seen & g:
                raise InvalidPartitionError(f"variables {sorted(seen & g)} appear in more than one group")
            seen |= g
        expected = set(range(self.num_variables))
        if seen != expected:
            missing, extra = sorted(expected - seen), sorted(seen - expected)
            raise InvalidPartitionError(
                f"groups must cover 0..{self.num_variables - 1} exactly (missing {missing}, extra {extra})"
            )

    @classmethod
    def trivial(cls, num_variables: int) -> "Partition":
        return cls((frozenset(range(num_variables)),), num_variables)

    @classmethod
    def from_groups(cls, groups: Iterable[Iterable[int]], num_variables: int | None = None) -> "Partition":
        groups = [frozenset(int(v) for v in g) for g in groups]
        if num_variables is None:
            num_variables = max((max(g) for g in groups if g), default=-1) + 1
        return cls(tuple(groups), num_variables)

    @property
    def num_groups(self) -> int:
        return len(self.groups)

    def is_trivial(self) -> bool:
        return len(self.groups) == 1

    def contains_group(self, group: Iterable[int]) -> bool:
        return frozenset(group) in self.groups

    def to_list(self) -> list[list[int]]:
        return [sorted(g) for g in self.groups]

    @classmethod
    def from_list(cls, payload: Sequence[Sequence[int]]) -> "Partition":
        return cls.from_groups(payload)

    def __str__(self) -> str:
        return "{" + ", ".join("{" + ",".join(map(str, sorted(g))) + "}" for g in self.groups) + "}"

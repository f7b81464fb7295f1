"""Operation-count instrumentation.

Counts multiply-accumulates (one per weight-input product; plain adds,
normalizations, and activations are excluded) and live intermediate floats,
keyed by pipeline step. Counters are plain per-invocation values, not global
state; pass a fresh one into a forward call and read it afterwards.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field


@dataclass
class MacCounter:
    macs: dict[str, int] = field(default_factory=lambda: defaultdict(int))
    mem: dict[str, int] = field(default_factory=lambda: defaultdict(int))

    def add_macs(self, step: str, count: int) -> None:
        self.macs[step] += int(count)

    def add_mem(self, step: str, count: int) -> None:
        self.mem[step] += int(count)

    def total_macs(self, steps=None) -> int:
        keys = self.macs.keys() if steps is None else steps
        return sum(self.macs.get(k, 0) for k in keys)

    def as_dicts(self) -> tuple[dict[str, int], dict[str, int]]:
        return dict(self.macs), dict(self.mem)

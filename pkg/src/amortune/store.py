"""Growing log of queried observations with incremental-fidelity bookkeeping.

The store is the single source of truth for everything a tuning session has
observed so far: the surrogate trains on it, and the matched-query task
distance reads from it. Per-task version counters let downstream caches
detect staleness without explicit invalidation calls.
"""

from __future__ import annotations

from typing import Iterable, Mapping

import numpy as np
import torch

from .errors import DataError


class ObservationStore:
    """Observations on a finite (task, configuration, epoch) grid.

    In strict mode (the tuning protocol) an epoch can be added only as the
    immediate successor of the highest epoch already recorded for that
    (task, configuration), so every stored curve is a prefix of the fidelity
    axis. Non-strict mode accepts arbitrary grid subsets and exists for
    held-out evaluation splits, which are not query logs.
    """

    def __init__(
        self, n_tasks: int, n_configs: int, n_epochs: int, strict_fidelity: bool = True
    ) -> None:
        if min(n_tasks, n_configs, n_epochs) < 1:
            raise DataError("grid dimensions must all be at least 1")
        self.n_tasks = n_tasks
        self.n_configs = n_configs
        self.n_epochs = n_epochs
        self.strict_fidelity = strict_fidelity
        self._curves: list[dict[tuple[int, int], float]] = [{} for _ in range(n_tasks)]
        self._e_max: dict[tuple[int, int], int] = {}
        self._versions = np.zeros(n_tasks, dtype=np.int64)
        self._order: list[tuple[int, int, int, float]] = []

    def __len__(self) -> int:
        return len(self._order)

    def add(self, task: int, config: int, epoch: int, value: float) -> None:
        if not (0 <= task < self.n_tasks):
            raise DataError(f"task {task} outside [0, {self.n_tasks})")
        if not (0 <= config < self.n_configs):
            raise DataError(f"config {config} outside [0, {self.n_configs})")
        if not (1 <= epoch <= self.n_epochs):
            raise DataError(f"epoch {epoch} outside [1, {self.n_epochs}]")
        if (config, epoch) in self._curves[task]:
            raise DataError(f"duplicate observation (task={task}, config={config}, epoch={epoch})")
        if self.strict_fidelity and epoch != self._e_max.get((task, config), 0) + 1:
            raise DataError(
                f"incremental-fidelity violation: epoch {epoch} queried for "
                f"(task={task}, config={config}) whose highest recorded epoch is "
                f"{self._e_max.get((task, config), 0)}"
            )
        value = float(value)
        if not np.isfinite(value):
            raise DataError(f"non-finite observation at (task={task}, config={config}, epoch={epoch})")
        self._curves[task][(config, epoch)] = value
        self._e_max[(task, config)] = max(epoch, self._e_max.get((task, config), 0))
        self._versions[task] += 1
        self._order.append((task, config, epoch, value))

    def bulk_add(self, observations: Iterable[tuple[int, int, int, float]]) -> None:
        for task, config, epoch, value in observations:
            self.add(task, config, epoch, value)

    def curves(self, task: int) -> Mapping[tuple[int, int], float]:
        """All (config, epoch) -> value observations recorded on a task."""
        if not (0 <= task < self.n_tasks):
            raise DataError(f"task {task} outside [0, {self.n_tasks})")
        return self._curves[task]

    def e_max(self, task: int, config: int) -> int:
        """Highest queried epoch for (task, config); 0 if never queried."""
        return self._e_max.get((task, config), 0)

    def version(self, task: int) -> int:
        return int(self._versions[task])

    @property
    def grid_cells(self) -> int:
        """Number of (configuration, epoch) cells per task."""
        return self.n_configs * self.n_epochs

    def mean_value(self) -> float | None:
        if not self._order:
            return None
        return float(np.mean([row[3] for row in self._order]))

    def training_data(self) -> tuple[tuple[torch.Tensor, torch.Tensor, torch.Tensor], torch.Tensor]:
        """All observations as ((tasks, configs, epochs), values) tensors."""
        if not self._order:
            empty = torch.zeros(0, dtype=torch.int64)
            return (empty, empty.clone(), empty.clone()), torch.zeros(0, dtype=torch.float64)
        arr = np.asarray(self._order, dtype=np.float64)
        points = (
            torch.from_numpy(arr[:, 0].astype(np.int64)),
            torch.from_numpy(arr[:, 1].astype(np.int64)),
            torch.from_numpy(arr[:, 2].astype(np.int64)),
        )
        return points, torch.from_numpy(arr[:, 3].copy())

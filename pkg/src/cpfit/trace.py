"""Per-iteration run records for convergence traces."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class TraceRecord:
    iteration: int
    elapsed_s: float
    objective: float
    metric: float


@dataclass
class RunTrace:
    """Append-only record of a completion run.

    ``metric_name`` is "rmse" for least-squares runs and "norm_loss"
    (data loss per observed entry) otherwise. Iterations must strictly
    increase and elapsed time must be nondecreasing.
    """

    metric_name: str = "rmse"
    metadata: dict[str, str] = field(default_factory=dict)
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, iteration: int, elapsed_s: float, objective: float,
               metric: float) -> None:
        if self.records:
            last = self.records[-1]
            if iteration <= last.iteration:
                raise ValueError("iterations must strictly increase")
            if elapsed_s < last.elapsed_s:
                raise ValueError("elapsed time must be nondecreasing")
        self.records.append(TraceRecord(int(iteration), float(elapsed_s),
                                        float(objective), float(metric)))

    def __len__(self) -> int:
        return len(self.records)

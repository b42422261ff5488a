import csv
import os
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, TextIO

import numpy as np

from tcavoidsrc.common.types import ActiveController
from tcavoidsrc.kinematics.chain import Pose


@dataclass(eq=False)
class TelemetryRecord:
    t: float
    q: np.ndarray
    q_des: np.ndarray
    active: ActiveController
    v_body: float
    v_tool: float
    costs: np.ndarray
    ee_pose: Pose

    def as_row(self) -> Dict[str, object]:
        row = {"t": round(self.t, 6), "active": self.active.value, "v_body": self.v_body, "v_tool": self.v_tool}
        row.update({f"q{i}": v for i, v in enumerate(self.q)})
        row.update({f"q_des{i}": v for i, v in enumerate(self.q_des)})
        row.update({f"c{i + 1}": int(c) for i, c in enumerate(self.costs)})
        row.update({f"ee_{axis}": v for axis, v in zip("xyz", self.ee_pose.position)})
        row.update({f"ee_q{axis}": v for axis, v in zip("wxyz", self.ee_pose.orientation)})
        return row


def telemetry_fields(n_joints: int, n_costs: int = 4) -> List[str]:
    return (
        ["t", "active", "v_body", "v_tool"]
        + [f"q{i}" for i in range(n_joints)]
        + [f"q_des{i}" for i in range(n_joints)]
        + [f"c{i + 1}" for i in range(n_costs)]
        + [f"ee_{axis}" for axis in "xyz"]
        + [f"ee_q{axis}" for axis in "wxyz"]
    )


class TelemetryWriter:
    """Per-step controller records as CSV rows."""

    def __init__(self, stream: TextIO, n_joints: int, n_costs: int = 4):
        self._writer = csv.DictWriter(stream, fieldnames=telemetry_fields(n_joints, n_costs))
        self._writer.writeheader()
        self._rows = 0

    @property
    def rows(self) -> int:
        return self._rows

    def write(self, record: TelemetryRecord) -> None:
        self._writer.writerow(record.as_row())
        self._rows += 1

    def write_all(self, records: Iterable[TelemetryRecord]) -> None:
        for record in records:
            self.write(record)


def write_telemetry(path: str, records: List[TelemetryRecord], n_joints: Optional[int] = None) -> None:
    if n_joints is None:
        if not records:
            raise ValueError(f"Cannot infer the joint count of an empty telemetry trace for {path}")
        n_joints = len(records[0].q)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        TelemetryWriter(f, n_joints).write_all(records)

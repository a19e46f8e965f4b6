"""
Cycle ingestion: parse current-voltage sweeps, find the set/reset point and
register every curve onto [0, 1] in log-current space.
"""

import io
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import BinaryIO, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from vfts.config import DEFAULT_JUMP_FRACTION
from vfts.error_handler import (
    DuplicateVoltage,
    InvalidCurve,
    MalformedRow,
    NonPositiveCurrent,
    NoSwitchPoint,
    ZeroSwitchVoltage,
)

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["cycle", "process", "voltage", "current"]


class Process(Enum):
    """Switching process that produced a curve."""
    SET = "set"
    RESET = "reset"

    @property
    def rank(self) -> int:
        return 0 if self is Process.SET else 1

    @property
    def default_direction(self) -> str:
        # the set event is a sudden rise, the reset event a sudden drop
        return "rise" if self is Process.SET else "drop"


@dataclass(frozen=True)
class RawCycle:
    """One measured sweep, samples sorted by voltage."""
    cycle_index: int
    process: Process
    voltages: np.ndarray
    currents: np.ndarray

    def __post_init__(self):
        if self.cycle_index < 0:
            raise InvalidCurve(f"Negative cycle index {self.cycle_index}")
        if len(self.voltages) == 0 or len(self.voltages) != len(self.currents):
            raise InvalidCurve(f"Cycle {self.cycle_index}/{self.process.value} has no samples")
        if np.any(np.diff(self.voltages) <= 0):
            raise InvalidCurve(f"Cycle {self.cycle_index}/{self.process.value} voltages not strictly increasing")
        if np.any(self.currents <= 0):
            raise NonPositiveCurrent(f"Cycle {self.cycle_index}/{self.process.value} has non-positive current")

    @property
    def samples(self) -> List[Tuple[float, float]]:
        return list(zip(self.voltages.tolist(), self.currents.tolist()))


@dataclass(frozen=True)
class RegisteredCurve:
    """A curve truncated at its switch point, argument rescaled to [0, 1], values ln(current)."""
    cycle_index: int
    process: Process
    switch_voltage: float
    grid: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.grid) < 2 or len(self.grid) != len(self.values):
            raise InvalidCurve(
                f"Cycle {self.cycle_index}/{self.process.value} needs at least 2 registered samples",
                {"samples": int(len(self.grid))},
            )
        if np.any(np.diff(self.grid) <= 0):
            raise InvalidCurve(f"Cycle {self.cycle_index}/{self.process.value} grid not strictly increasing")
        if abs(self.grid[-1] - 1.0) > 1e-12:
            raise InvalidCurve(f"Cycle {self.cycle_index}/{self.process.value} grid does not end at 1")


def parse_process(value: str) -> Process:
    try:
        return Process(str(value).strip().lower())
    except ValueError:
        raise MalformedRow(f"Unknown process '{value}'")


def _read_frame(source) -> pd.DataFrame:
    try:
        frame = pd.read_csv(source, dtype=str, keep_default_na=False, skipinitialspace=True)
    except pd.errors.EmptyDataError:
        return pd.DataFrame(columns=CSV_COLUMNS)
    except pd.errors.ParserError as e:
        raise MalformedRow(f"Unparseable cycle CSV: {e}")
    if [c.strip().lower() for c in frame.columns] != CSV_COLUMNS:
        raise MalformedRow(
            f"Expected header {','.join(CSV_COLUMNS)}",
            {"header": [str(c) for c in frame.columns]},
        )
    frame.columns = CSV_COLUMNS
    return frame


def parse_cycles(source: Union[BinaryIO, bytes, str, Path]) -> List[RawCycle]:
    """
    Parse the cycle CSV format into RawCycles.

    Args:
        source: Byte stream, raw bytes, or a path

    Returns:
        One RawCycle per (cycle, process) group, ordered by cycle index then process
    """
    if isinstance(source, bytes):
        source = io.BytesIO(source)
    frame = _read_frame(source)
    if frame.empty:
        return []

    # header is line 1
    line_numbers = np.arange(len(frame)) + 2
    blank = (frame == "").any(axis=1) | frame.isna().any(axis=1)
    if blank.any():
        raise MalformedRow("Row has missing fields", {"line": int(line_numbers[blank.to_numpy()][0])})

    cycles = pd.to_numeric(frame["cycle"], errors="coerce")
    voltages = pd.to_numeric(frame["voltage"], errors="coerce")
    currents = pd.to_numeric(frame["current"], errors="coerce")
    bad = cycles.isna() | voltages.isna() | currents.isna() | (cycles % 1 != 0) | (cycles < 0) | (voltages < 0)
    if bad.any():
        raise MalformedRow("Row has unparseable fields", {"line": int(line_numbers[bad.to_numpy()][0])})
    if (currents <= 0).any():
        line = int(line_numbers[(currents <= 0).to_numpy()][0])
        raise NonPositiveCurrent("Current must be strictly positive", {"line": line})

    processes = [parse_process(p) for p in frame["process"]]
    table = pd.DataFrame({
        "cycle": cycles.astype(np.int64),
        "rank": [p.rank for p in processes],
        "voltage": voltages.astype(float),
        "current": currents.astype(float),
    })

    result = []
    for (cycle_index, rank), group in table.groupby(["cycle", "rank"], sort=True):
        group = group.sort_values("voltage", kind="mergesort")
        volts = group["voltage"].to_numpy()
        process = Process.SET if rank == 0 else Process.RESET
        if np.any(np.diff(volts) == 0):
            raise DuplicateVoltage(
                f"Duplicate voltage in cycle {cycle_index}/{process.value}",
                {"cycle": int(cycle_index), "process": process.value},
            )
        result.append(RawCycle(int(cycle_index), process, volts, group["current"].to_numpy()))

    logger.debug(f"Parsed {len(result)} cycles from {len(table)} rows")
    return result


def write_cycles_csv(cycles: Iterable[RawCycle], path: Union[str, Path]) -> None:
    """Emit cycles in the cycle CSV format."""
    frames = [
        pd.DataFrame({
            "cycle": c.cycle_index,
            "process": c.process.value,
            "voltage": c.voltages,
            "current": c.currents,
        })
        for c in cycles
    ]
    frame = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=CSV_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def detect_switch_point(cycle: RawCycle, jump_fraction: float = DEFAULT_JUMP_FRACTION,
                        direction: Optional[str] = None) -> int:
    """
    Find the first consecutive pair whose relative change exceeds jump_fraction.

    The change is measured against the earlier sample. For a drop the
    criterion is (I[k-1] - I[k]) / I[k-1] > jump_fraction, for a rise
    (I[k] - I[k-1]) / I[k-1] > jump_fraction.

    Returns:
        The index k of the post-jump sample; the switch point is sample k - 1
    """
    if not 0 < jump_fraction < 1:
        raise ValueError(f"jump_fraction must lie in (0, 1), got {jump_fraction}")
    direction = direction or cycle.process.default_direction
    currents = cycle.currents
    if direction == "drop":
        change = (currents[:-1] - currents[1:]) / currents[:-1]
    elif direction == "rise":
        change = (currents[1:] - currents[:-1]) / currents[:-1]
    else:
        raise ValueError(f"Unknown jump direction '{direction}'")

    hits = np.flatnonzero(change > jump_fraction)
    if hits.size == 0:
        raise NoSwitchPoint(
            f"No {direction} above {jump_fraction:.0%} in cycle {cycle.cycle_index}/{cycle.process.value}",
            {"cycle": cycle.cycle_index, "process": cycle.process.value},
        )
    return int(hits[0]) + 1


def register_curve(cycle: RawCycle, switch_index: int) -> RegisteredCurve:
    """
    Truncate at the switch sample and rescale voltages by the switch voltage.

    Args:
        cycle: Parsed cycle
        switch_index: Index of the switch sample (kept, maps to t = 1)
    """
    if not 0 <= switch_index < len(cycle.voltages):
        raise IndexError(f"switch_index {switch_index} outside cycle of {len(cycle.voltages)} samples")
    switch_voltage = float(cycle.voltages[switch_index])
    if switch_voltage <= 0:
        raise ZeroSwitchVoltage(
            f"Switch voltage is zero in cycle {cycle.cycle_index}/{cycle.process.value}",
            {"cycle": cycle.cycle_index, "process": cycle.process.value},
        )
    volts = cycle.voltages[:switch_index + 1]
    grid = volts / switch_voltage
    grid[-1] = 1.0
    values = np.log(cycle.currents[:switch_index + 1])
    return RegisteredCurve(cycle.cycle_index, cycle.process, switch_voltage, grid, values)


def register_cycle(cycle: RawCycle, jump_fraction: float = DEFAULT_JUMP_FRACTION,
                   direction: Optional[str] = None) -> RegisteredCurve:
    """Detect the switch point, then register up to it."""
    k = detect_switch_point(cycle, jump_fraction, direction)
    return register_curve(cycle, k - 1)


def register_cycles(cycles: Sequence[RawCycle], jump_fraction: float = DEFAULT_JUMP_FRACTION,
                    directions: Optional[Dict[Process, str]] = None,
                    skip_undetected: bool = False) -> Tuple[Dict[Process, List[RegisteredCurve]], List[int]]:
    """
    Register a batch of cycles, grouped by process.

    Returns:
        (curves per process in cycle order, cycle indices dropped for lacking a switch point)
    """
    directions = directions or {}
    grouped: Dict[Process, List[RegisteredCurve]] = {}
    dropped = []
    for cycle in cycles:
        try:
            curve = register_cycle(cycle, jump_fraction, directions.get(cycle.process))
        except (NoSwitchPoint, InvalidCurve) as e:
            if not skip_undetected:
                raise
            logger.warning(f"Dropping cycle {cycle.cycle_index}/{cycle.process.value}: {e}")
            dropped.append(cycle.cycle_index)
            continue
        grouped.setdefault(cycle.process, []).append(curve)

    if dropped:
        # a cycle is analysed only when every process registered
        gone = set(dropped)
        grouped = {p: [c for c in curves if c.cycle_index not in gone] for p, curves in grouped.items()}
    return grouped, sorted(set(dropped))

"""
Tests for cycle parsing, switch-point detection and curve registration.
"""

from pathlib import Path

import numpy as np
import pytest

from vfts.error_handler import (
    DuplicateVoltage,
    MalformedRow,
    NonPositiveCurrent,
    NoSwitchPoint,
    ZeroSwitchVoltage,
)
from vfts.ingest import (
    Process,
    RawCycle,
    detect_switch_point,
    parse_cycles,
    register_curve,
    register_cycle,
    register_cycles,
    write_cycles_csv,
)

FIXTURE = Path(__file__).parent / "tests" / "fixtures" / "cycles.csv"
HEADER = b"cycle,process,voltage,current\n"


def _cycle(currents, process=Process.RESET, voltages=None, index=0):
    currents = np.asarray(currents, dtype=float)
    voltages = np.arange(1, currents.size + 1) * 0.1 if voltages is None else np.asarray(voltages, dtype=float)
    return RawCycle(index, process, voltages, currents)


def test_parse_orders_groups_by_cycle_then_process():
    """Groups come back ordered by cycle, set before reset, samples sorted by voltage."""
    cycles = parse_cycles(FIXTURE)

    assert [(c.cycle_index, c.process) for c in cycles] == [
        (0, Process.SET), (0, Process.RESET), (1, Process.SET), (1, Process.RESET),
    ]
    assert np.allclose(cycles[0].voltages, [0.5, 1.0, 1.5])
    assert np.allclose(cycles[0].currents, [0.10, 0.12, 0.50])


def test_parse_empty_stream():
    assert parse_cycles(b"") == []
    assert parse_cycles(HEADER) == []


def test_parse_rejects_unparseable_field():
    with pytest.raises(MalformedRow) as e:
        parse_cycles(HEADER + b"0,reset,0.1,1e-3\n0,reset,abc,1e-3\n")
    assert e.value.details["line"] == 3


def test_parse_rejects_unknown_process_and_header():
    with pytest.raises(MalformedRow):
        parse_cycles(HEADER + b"0,forming,0.1,1e-3\n")
    with pytest.raises(MalformedRow):
        parse_cycles(b"cycle,kind,voltage,current\n0,reset,0.1,1e-3\n")


def test_parse_rejects_nonpositive_current():
    with pytest.raises(NonPositiveCurrent) as e:
        parse_cycles(HEADER + b"0,reset,0.1,1e-3\n0,reset,0.2,0\n")
    assert e.value.details["line"] == 3


def test_parse_rejects_duplicate_voltage():
    with pytest.raises(DuplicateVoltage):
        parse_cycles(HEADER + b"0,set,0.1,1e-3\n0,set,0.1,2e-3\n")


def test_detect_reset_drop():
    assert detect_switch_point(_cycle([1.0, 1.1, 1.2, 0.9, 0.1])) == 3


def test_detect_set_rise():
    assert detect_switch_point(_cycle([0.10, 0.12, 0.50], Process.SET)) == 2


def test_detect_is_scale_invariant():
    reset = [1.0, 1.1, 1.2, 0.9, 0.1]
    for scale in (1e-9, 1e-3, 1e3):
        assert detect_switch_point(_cycle(np.array(reset) * scale)) == 3


def test_detect_without_jump():
    with pytest.raises(NoSwitchPoint):
        detect_switch_point(_cycle([1.0, 1.05, 1.1, 1.0]))


def test_detect_direction_override():
    # a reset curve read as a rise only fires on the later increase
    cycle = _cycle([1.0, 0.5, 0.6, 0.9])
    assert detect_switch_point(cycle) == 1
    assert detect_switch_point(cycle, direction="rise") == 3


def test_register_rescales_voltages():
    cycle = _cycle([1.0, 2.0, 3.0, 0.1], voltages=[0.2, 0.4, 0.6, 0.8])
    curve = register_curve(cycle, 2)

    assert curve.switch_voltage == pytest.approx(0.6)
    assert np.allclose(curve.grid, [1 / 3, 2 / 3, 1.0])
    assert curve.grid[-1] == 1.0
    assert np.allclose(curve.values, np.log([1.0, 2.0, 3.0]))


def test_register_zero_switch_voltage():
    cycle = _cycle([1.0, 2.0, 3.0], voltages=[0.0, 0.1, 0.2])
    with pytest.raises(ZeroSwitchVoltage):
        register_curve(cycle, 0)


def test_register_fixture_cycles():
    grouped, dropped = register_cycles(parse_cycles(FIXTURE))

    assert dropped == []
    resets = grouped[Process.RESET]
    sets = grouped[Process.SET]
    assert [c.cycle_index for c in resets] == [0, 1]
    assert np.allclose(resets[0].grid, [1 / 3, 2 / 3, 1.0])
    assert np.allclose(resets[1].grid, [0.25, 0.5, 0.75, 1.0])
    assert sets[0].switch_voltage == pytest.approx(1.0)
    assert np.allclose(sets[1].grid, [1 / 3, 2 / 3, 1.0])


def test_register_cycles_skips_undetected_for_every_process():
    good = _cycle([1.0, 1.1, 1.2, 0.9, 0.1])
    flat = _cycle([1.0, 1.01, 1.02], Process.SET)

    with pytest.raises(NoSwitchPoint):
        register_cycles([flat, good])

    grouped, dropped = register_cycles([flat, good], skip_undetected=True)
    assert dropped == [0]
    assert all(curves == [] for curves in grouped.values())


def test_register_cycle_uses_sample_before_jump():
    curve = register_cycle(_cycle([1.0, 1.1, 1.2, 0.9, 0.1]))
    assert curve.switch_voltage == pytest.approx(0.3)
    assert curve.values.size == 3


def test_written_csv_parses_back(tmp_path):
    cycles = parse_cycles(FIXTURE)
    path = tmp_path / "cycles.csv"
    write_cycles_csv(cycles, path)
    again = parse_cycles(path)

    assert [(c.cycle_index, c.process) for c in again] == [(c.cycle_index, c.process) for c in cycles]
    for a, b in zip(cycles, again):
        assert np.allclose(a.currents, b.currents, rtol=1e-11)

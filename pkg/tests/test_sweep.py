"""CPU sweep: frozen curve anchors, report rendering, input validation."""
import pytest

from cloudmpc.sweep import DEFAULT_BAND, SweepPoint, SweepReport, measure_point, sweep_cpu


@pytest.fixture(scope="module")
def anchor_report():
    # unsorted on purpose: the report must come back ordered by load
    return sweep_cpu([0.99, 0.0, 0.75])


def test_points_are_sorted_and_banded(anchor_report):
    points = anchor_report.points
    assert [p.utilization for p in points] == [0.0, 0.75, 0.99]
    assert [p.in_band for p in points] == [True, True, False]
    assert anchor_report.band == DEFAULT_BAND
    assert anchor_report.tau_max == 0.1


def test_frozen_anchor_rows(anchor_report):
    lines = anchor_report.render().splitlines()
    assert lines[0] == "# cloudmpc-sweep v1"
    assert lines[1] == "# band 0.000000 0.750000 tau_max 0.100000"
    assert lines[2] == "utilization tau_p_model tau_rrt in_band deadline"
    # idle and knee loads leave the processing time at its base; past the
    # knee it grows hyperbolically until the saturation cap
    assert lines[3] == "0.000000 0.010000 0.050000 yes ok"
    assert lines[4] == "0.750000 0.020000 0.060000 yes ok"
    assert lines[5] == "0.990000 0.500000 0.540000 no violation"
    assert lines[6] == "# inside-band deadline ok"
    assert anchor_report.ok_inside_band()


def test_measure_point_matches_report(anchor_report):
    tau_rrt, ok = measure_point(0.0)
    assert tau_rrt == anchor_report.points[0].tau_rrt
    assert ok


def test_inside_band_violation_flips_verdict():
    report = SweepReport(band=(0.0, 0.5), tau_max=0.1)
    report.points.append(SweepPoint(0.2, 0.01, 0.2, deadline_ok=False, in_band=True))
    assert not report.ok_inside_band()
    assert report.render().splitlines()[-1] == "# inside-band deadline violation"
    # out-of-band violations do not count against the verdict
    report.points[0] = SweepPoint(0.9, 0.5, 0.54, deadline_ok=False, in_band=False)
    assert report.ok_inside_band()


def test_input_validation():
    with pytest.raises(ValueError, match="at least one load point"):
        sweep_cpu([])
    with pytest.raises(ValueError, match="within \\[0, 1\\]"):
        sweep_cpu([1.5])
    with pytest.raises(ValueError, match="band"):
        sweep_cpu([0.5], band=(0.8, 0.2))
    with pytest.raises(ValueError, match="within \\[0, 1\\]"):
        measure_point(-0.1)

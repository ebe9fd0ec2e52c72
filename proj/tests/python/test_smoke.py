import math
import os
import subprocess

import pytest

import boat


def test_fresnel_conserves_energy():
    r, t, tir = boat.fresnel(1.43, 1.0, 0.3)
    assert abs(r + t - 1.0) < 1e-12
    assert not tir
    assert boat.fresnel(1.43, 1.0, 1.2)[2]
    assert abs(boat.critical_angle(1.43, 1.0) - math.asin(1 / 1.43)) < 1e-12


def test_straight_guide_cone_count():
    result = boat.trace_straight(40.0, power_floor=1.0)
    assert result["ndr"] == 190
    assert result["max_energy_residual"] < 1e-12


def test_state_library_and_response():
    lib = boat.synthesize_states()
    ndr = boat.ndr_vs_state(lib, (5, 1.0, 0.5, 0.9))
    assert len(ndr) == 15
    assert all(v >= 0 for v in ndr)


def test_p_metric_and_cubic():
    p, guard, perfect = boat.p_metric(10.0, 2, 0.5)
    assert p == 10.0 and not guard and not perfect
    xs = [float(i) for i in range(15)]
    ys = [1.0 + 2.0 * x - 0.5 * x**2 + 0.01 * x**3 for x in xs]
    coeffs, rmse = boat.fit_cubic(xs, ys)
    assert coeffs == pytest.approx([1.0, 2.0, -0.5, 0.01], abs=1e-9)
    assert rmse < 1e-9


def test_calibration_model_inverts():
    model = boat.CalibrationModel(1, [1651.9842, 46.4413, -2.6934, -0.36251], -3.2, 4.0)
    x, saturated = model.invert(model.evaluate(1.25))
    assert abs(x - 1.25) < 1e-9
    assert not saturated
    assert model.invert(model.evaluate(4.0) + 50.0) == (4.0, True)


def test_invalid_input_raises_value_error():
    with pytest.raises(ValueError):
        boat.critical_angle(1.0, 1.43)
    with pytest.raises(ValueError):
        boat.fit_calibration([0.0, 1.0], [1.0], 1)


@pytest.mark.skipif("BOAT_CLI" not in os.environ, reason="CLI path not provided")
def test_cli_trace(tmp_path):
    out = subprocess.run(
        [os.environ["BOAT_CLI"], "--out-dir", str(tmp_path), "synth-states"],
        capture_output=True,
        text=True,
    )
    assert out.returncode == 0, out.stderr
    lib = boat.load_states(str(tmp_path / "states.csv"))
    assert lib.labels[0] == "compression_7"
    assert len(lib) == 15

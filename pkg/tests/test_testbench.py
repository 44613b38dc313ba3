"""Benches: analytic oracles, boolean composites, the external simulator
adapter, and the parameterized family used by the design optimizer."""
import math
import os
import signal
import sys
import time

import numpy as np
import pytest
from scipy import stats

from visyield import (
    ContractError,
    ExternalBench,
    ParameterizedBenchFamily,
    SimulationError,
    Testbench,
    external_bench,
    intersection_bench,
    linear_bench,
    mc_probability,
    sphere_bench,
    union_bench,
)

STUB = [sys.executable, os.path.join(os.path.dirname(__file__), "stub_sim.py")]

PHI = stats.norm.cdf


def x1_bench(b, sign=1.0, dim=1):
    a = np.zeros(dim)
    a[0] = sign
    return linear_bench(a, b)


# ------------------------------------------------------- linear


def test_linear_oracle_values():
    assert linear_bench(np.array([1.0, 0, 0, 0]), 3.0).oracle_pf == pytest.approx(
        0.0013498980316300933, rel=1e-12
    )
    # non-unit normal: threshold scales by the norm
    b = linear_bench(np.array([1.0, 1.0, 0.0, 0.0]), 3.0)
    assert b.oracle_pf == pytest.approx(0.016947426762344633, rel=1e-12)
    assert b.oracle_se == 0.0
    assert linear_bench(np.array([2.0]), 6.0).oracle_pf == pytest.approx(
        linear_bench(np.array([1.0]), 3.0).oracle_pf, rel=1e-12
    )


def test_linear_indicator_and_form():
    b = linear_bench(np.array([1.0, -1.0]), 0.5)
    got = b.evaluate([[1.0, 0.0], [0.0, 1.0], [0.25, -0.25]])
    assert got.dtype == np.uint8
    np.testing.assert_array_equal(got, [1, 0, 1])
    a, thr = b.linear_form
    np.testing.assert_array_equal(a, [1.0, -1.0])
    assert thr == 0.5
    # 1-D input is a single point
    assert b.evaluate(np.array([2.0, 0.0])).shape == (1,)


def test_evaluate_rejects_wrong_width():
    b = linear_bench(np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ContractError):
        b.evaluate(np.zeros((5, 3)))
    with pytest.raises(ContractError):
        linear_bench(np.zeros(3), 1.0)


# ------------------------------------------------------- sphere


def test_sphere_oracle_centered():
    # ||x||^2 ~ chi2(2): P(<= 1) = 1 - exp(-1/2)
    b = sphere_bench(np.zeros(2), 1.0, oracle_draws=10 ** 6)
    true = 0.3934693402873666
    assert b.oracle_se > 0.0
    assert abs(b.oracle_pf - true) < 5.0 * b.oracle_se
    np.testing.assert_array_equal(
        b.evaluate([[0.0, 0.0], [0.9, 0.0], [1.1, 0.0]]), [1, 1, 0]
    )


def test_sphere_oracle_off_center():
    # noncentral chi-square tail, df=2, noncentrality 16
    b = sphere_bench(np.array([4.0, 0.0]), 1.0, oracle_draws=10 ** 6)
    true = 0.000589949144360826
    assert abs(b.oracle_pf - true) < 5.0 * b.oracle_se


def test_sphere_validation():
    with pytest.raises(ContractError):
        sphere_bench(np.zeros(2), 0.0)
    with pytest.raises(ContractError):
        sphere_bench(np.zeros((2, 2)), 1.0)


# ------------------------------------------------------- composites


def test_union_two_sided_tails_exact():
    b = union_bench([x1_bench(3.0), x1_bench(3.0, sign=-1.0)])
    assert b.oracle_pf == pytest.approx(2 * 0.0013498980316300933, rel=1e-12)
    assert b.oracle_se == 0.0
    np.testing.assert_array_equal(b.evaluate([[-4.0], [0.0], [4.0]]), [1, 0, 1])


def test_union_overlapping_rays_cover_the_line():
    b = union_bench([x1_bench(0.0), x1_bench(0.0, sign=-1.0)])
    assert b.oracle_pf == 1.0 and b.oracle_se == 0.0


def test_intersection_nested_and_disjoint():
    nested = intersection_bench([x1_bench(1.0), x1_bench(2.0)])
    assert nested.oracle_pf == pytest.approx(PHI(-2.0), rel=1e-12)
    assert nested.oracle_se == 0.0
    same = intersection_bench([x1_bench(1.0), x1_bench(0.0)])
    assert same.oracle_pf == pytest.approx(PHI(-1.0), rel=1e-12)
    empty = intersection_bench([x1_bench(3.0), x1_bench(3.0, sign=-1.0)])
    assert empty.oracle_pf == 0.0
    np.testing.assert_array_equal(empty.evaluate([[0.0], [5.0], [-5.0]]), [0, 0, 0])


def test_union_noncollinear_falls_back_to_mc():
    kids = [
        linear_bench(np.array([1.0, 0.0]), 3.0),
        linear_bench(np.array([0.0, 1.0]), 3.0),
    ]
    b = union_bench(kids, oracle_draws=10 ** 6)
    true = 0.002697973838564388  # 2 Phi(-3) - Phi(-3)^2
    assert b.oracle_se > 0.0
    assert abs(b.oracle_pf - true) < 5.0 * b.oracle_se
    np.testing.assert_array_equal(
        b.evaluate([[4.0, 0.0], [0.0, 4.0], [4.0, 4.0], [0.0, 0.0]]), [1, 1, 1, 0]
    )


def test_composite_skips_oracle_for_serial_children():
    serial = Testbench(
        "opaque", 1, lambda p: p[:, 0] >= 1.0, concurrency_safe=False
    )
    b = union_bench([serial, x1_bench(3.0)])
    assert b.oracle_pf is None
    assert not b.concurrency_safe


def test_composite_validation():
    with pytest.raises(ContractError):
        union_bench([])
    with pytest.raises(ContractError):
        union_bench([x1_bench(1.0), linear_bench(np.ones(2), 1.0)])


def test_mc_probability_seeded_and_binomial():
    b = x1_bench(0.0, dim=2)
    pf1, se1 = mc_probability(b, 10_000, seed=9)
    pf2, se2 = mc_probability(b, 10_000, seed=9)
    assert (pf1, se1) == (pf2, se2)
    assert pf1 == pytest.approx(0.5, abs=0.02)
    assert se1 == pytest.approx(math.sqrt(pf1 * (1 - pf1) / 10_000), rel=1e-12)
    pf3, _ = mc_probability(b, 10_000, seed=10)
    assert pf3 != pf1


# ------------------------------------------------------- family


def family(c1=(1.2, 1.2)):
    return ParameterizedBenchFamily(
        a=np.array([1.0, 0, 0, 0, 0, 0]),
        c0=3.0,
        c1=np.array(c1),
        c2=np.eye(2),
        box=np.array([[-2.0, 2.0], [-2.0, 2.0]]),
    )


def test_family_threshold_and_oracles():
    fam = family()
    z0 = np.array([-0.5, -0.5])
    assert fam.threshold(z0) == pytest.approx(1.55, rel=1e-12)
    b0 = fam.bench(z0)
    assert b0.oracle_pf == pytest.approx(0.06057075800205901, rel=1e-12)
    assert b0.dim == 6
    # interior optimum z* = C2^-1 c1
    z_star = np.array([1.2, 1.2])
    assert fam.threshold(z_star) == pytest.approx(4.44, rel=1e-12)
    assert fam.bench(z_star).oracle_pf == pytest.approx(
        4.497943888567925e-06, rel=1e-12
    )
    np.testing.assert_array_equal(
        b0.evaluate([[2.0, 0, 0, 0, 0, 0], [1.0, 0, 0, 0, 0, 0]]), [1, 0]
    )


def test_family_gradient_matches_finite_differences(rng):
    fam = family(c1=(0.7, -0.4))
    for _ in range(5):
        z = rng.uniform(-1.5, 1.5, size=2)
        grad = fam.threshold_grad(z)
        h = 1e-6
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd = (fam.threshold(z + e) - fam.threshold(z - e)) / (2 * h)
            assert grad[j] == pytest.approx(fd, abs=1e-6)


def test_family_box_and_validation():
    fam = family()
    assert fam.contains([0.0, 0.0]) and not fam.contains([2.5, 0.0])
    with pytest.raises(ContractError):
        fam.bench(np.array([2.5, 0.0]))
    with pytest.raises(ContractError):
        ParameterizedBenchFamily(
            a=np.zeros(3), c0=1.0, c1=np.zeros(2), c2=np.eye(2),
            box=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        )
    with pytest.raises(ContractError):
        ParameterizedBenchFamily(
            a=np.ones(3), c0=1.0, c1=np.zeros(2),
            c2=np.array([[1.0, 0.5], [0.0, 1.0]]),
            box=np.array([[-1.0, 1.0], [-1.0, 1.0]]),
        )
    with pytest.raises(ContractError):
        ParameterizedBenchFamily(
            a=np.ones(3), c0=1.0, c1=np.zeros(2), c2=np.eye(2),
            box=np.array([[1.0, -1.0], [-1.0, 1.0]]),
        )


# ------------------------------------------------------- external


def test_external_matches_analytic_indicator(rng):
    ref = linear_bench(np.array([1.0, 0, 0, 0]), 4.0)
    pts = rng.standard_normal((60, 4))
    pts[30:, 0] += 4.0
    with external_bench(STUB, dim=4) as ext:
        assert not ext.concurrency_safe
        got = ext.evaluate(pts)
    np.testing.assert_array_equal(got, ref.evaluate(pts))


def test_external_rejects_malformed_reply():
    with external_bench(STUB + ["malformed"], dim=2) as ext:
        with pytest.raises(SimulationError, match="expected 'FAIL' or 'PASS'"):
            ext.evaluate(np.zeros((1, 2)))


def test_external_times_out_on_silence():
    with external_bench(STUB + ["hang"], dim=2, timeout=0.4) as ext:
        with pytest.raises(SimulationError, match="no reply within 0.4"):
            ext.evaluate(np.zeros((1, 2)))


def test_external_bad_handshake():
    with pytest.raises(SimulationError, match="expected 'READY'"):
        ExternalBench(STUB + ["rude"], dim=2)


def test_external_child_exit_is_reported():
    ext = external_bench(STUB + ["die"], dim=2)
    time.sleep(0.2)  # let the child finish exiting
    with pytest.raises(SimulationError, match="exited|closed its input"):
        ext.evaluate(np.zeros((2, 2)))


def test_external_killed_mid_run():
    ext = external_bench(STUB, dim=2)
    ext.evaluate(np.zeros((1, 2)))
    os.kill(ext._proc.pid, signal.SIGKILL)
    ext._proc.wait()
    with pytest.raises(SimulationError, match="exited|closed its input"):
        ext.evaluate(np.zeros((3, 2)))


def test_external_cannot_launch():
    with pytest.raises(SimulationError, match="cannot launch"):
        external_bench(["/no/such/binary"], dim=2)


def test_external_close_is_clean_and_idempotent():
    ext = external_bench(STUB, dim=3)
    ext.evaluate(np.ones((2, 3)))
    ext.close()
    assert ext._proc.poll() == 0  # child honored QUIT
    ext.close()


def test_external_float_roundtrip():
    # 17 significant digits: the child sees the exact threshold boundary
    with external_bench(STUB, dim=1) as ext:
        tricky = np.array([[4.0], [np.nextafter(4.0, -np.inf)], [np.pi]])
        np.testing.assert_array_equal(ext.evaluate(tricky), [1, 0, 0])

import ast
import math
from pathlib import Path

import pytest

import batchsel.verify as verify
from batchsel.verify import (
    chi_square_gof,
    chi_square_sf,
    compare,
    finite_difference_grad,
    naive_cross_entropy,
    naive_pressure,
    naive_quantize,
    naive_std_hat,
    naive_uncertainty,
    pool_cells,
)


def test_chi_square_critical_value():
    # df=1 survival function is erfc(sqrt(x/2))
    p = chi_square_sf(3.841458820694124, 1)
    assert p == pytest.approx(0.05, abs=1e-9)
    for x in (0.1, 1.0, 7.5, 20.0):
        assert chi_square_sf(x, 1) == pytest.approx(math.erfc(math.sqrt(x / 2)), rel=1e-12)


def test_chi_square_df2_closed_form():
    for x in (0.5, 3.0, 12.0):
        assert chi_square_sf(x, 2) == pytest.approx(math.exp(-x / 2), rel=1e-12)


def test_proportional_counts_give_zero_statistic():
    stat, p = chi_square_gof([250, 500, 250], [0.25, 0.5, 0.25])
    assert stat == 0.0 and p == 1.0


def test_chi_square_input_validation():
    with pytest.raises(ValueError):
        chi_square_gof([10, 10], [0.5, 0.5])  # too few observations
    with pytest.raises(ValueError):
        chi_square_gof([500, 500], [1.0, 0.0])
    with pytest.raises(ValueError):
        chi_square_gof([1000], [1.0])


def test_pooling_merges_sparse_cells():
    obs, p = pool_cells([1, 2, 3, 994], [0.001, 0.002, 0.003, 0.994], 5.0, 1000)
    assert obs == [6, 994] and p == pytest.approx([0.006, 0.994])
    obs, p = pool_cells([500, 499, 1], [0.5, 0.499, 0.001], 5.0, 1000)
    assert obs == [500, 500] and p == pytest.approx([0.5, 0.5])
    # pooling keeps totals
    stat, _ = chi_square_gof([1, 2, 3, 994], [0.001, 0.002, 0.003, 0.994])
    assert stat == pytest.approx(0.0, abs=1e-12)


def test_finite_differences_exact_on_quadratic():
    g = finite_difference_grad(lambda t: 3 * t[0] ** 2 + t[0] * t[1] - 2 * t[1], [1.5, -2.0], 1e-3)
    assert g[0] == pytest.approx(2 * 3 * 1.5 - 2.0, abs=1e-9)
    assert g[1] == pytest.approx(1.5 - 2, abs=1e-9)


def test_finite_differences_linear():
    g = finite_difference_grad(lambda t: 2 * t[0] - 5 * t[1] + 0.5 * t[2], [0.3, 0.1, 9.0])
    assert g == pytest.approx([2, -5, 0.5], abs=1e-9)


def test_finite_difference_step_checked():
    with pytest.raises(ValueError):
        finite_difference_grad(lambda t: t[0], [0.0], 0.0)


def test_naive_uncertainty_values():
    assert naive_uncertainty([1, 1, 1], 10) == 0.0
    assert naive_uncertainty([0, 1, 2, 3], 4) == pytest.approx(1.0)
    assert naive_uncertainty([0, 1], 4) == pytest.approx(0.5)


def test_naive_quantize_snaps_exact_quotients():
    assert naive_quantize(0.7, 0.1) == 3  # 0.3/0.1 is not exactly 3 in floats
    assert naive_quantize(0.71, 0.1) == 3
    assert naive_quantize(0.0, 1 / 1000) == 1000
    assert naive_quantize(1.0, 0.25) == 0


def test_naive_pressure_endpoints():
    assert naive_pressure(100, 11, 50, 11) == 100
    assert naive_pressure(100, 11, 50, 50) == 1.0
    assert naive_pressure(100, 11, 50, 3) == 100
    assert naive_pressure(100, 11, 50, 30, mode="constant") == 100


def test_naive_std_hat():
    assert naive_std_hat([0.4]) == 0.0
    # population variance 0.25 over two values -> sqrt(0.25 + 0.0625)
    assert naive_std_hat([0.0, 1.0]) == pytest.approx(math.sqrt(0.3125))


def test_naive_cross_entropy_stable():
    assert naive_cross_entropy([0.0, 0.0], 0) == pytest.approx(math.log(2))
    assert naive_cross_entropy([1000.0, 0.0], 0) == pytest.approx(0.0, abs=1e-300)


def test_compare_report():
    r = compare("x", [1.0, 2.0], [1.0, 2.0 + 1e-13], 1e-12)
    assert r.passed and "PASS" in str(r)
    r = compare("x", [1.0], [1.1], 1e-3, relative=True)
    assert not r.passed and "FAIL" in str(r)
    with pytest.raises(ValueError):
        compare("x", [1.0], [1.0, 2.0], 1e-12)


def test_oracles_share_no_code_with_implementation():
    tree = ast.parse(Path(verify.__file__).read_text())
    imported = set()
    for node in ast.walk(tree):
        if isinstance(node, ast.ImportFrom):
            imported.add(node.module or "")
        elif isinstance(node, ast.Import):
            imported.update(a.name for a in node.names)
    assert not any(m.startswith("batchsel") or m in {"numpy", "history", "selection", "model"}
                   for m in imported)

import csv
import io

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from relent_lab.cli import csv_text, parse_config, serialize
from relent_lab.relent import rel_entropy
from relent_lab.systems import invert_A, make_cubic_A, make_duct_gas, make_weighted_burgers

finite = st.floats(-5, 5, allow_nan=False)
density = st.floats(0.05, 5, allow_nan=False)
place = st.floats(0, 2 * np.pi, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(density, finite, density, finite, place)
def test_duct_relative_entropy_nonnegative(r, m, rb, mb, x):
    spec = make_duct_gas()
    val = float(rel_entropy(spec, np.array([r, m]), np.array([rb, mb]), x, 0.0))
    scale = 1 + r + rb + m * m / r + mb * mb / rb
    assert val >= -1e-12 * scale


@settings(max_examples=200, deadline=None)
@given(density, finite, place)
def test_equal_states_have_zero_entropy(r, m, x):
    spec = make_duct_gas()
    U = np.array([r, m])
    assert float(rel_entropy(spec, U, U, x, 0.3)) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(-3, 3, allow_nan=False), place, st.floats(0, 1))
def test_invert_round_trip(u, x, t):
    for spec in (make_cubic_A(), make_weighted_burgers()):
        U = np.array([u])
        V = spec.A(U, x, t)
        back = invert_A(spec, V, x, t, guess=np.zeros(1))
        assert abs(back[0] - u) <= 1e-10 * (1 + abs(u))


@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_csv_float_round_trip(values):
    rows = [{"v": v} for v in values]
    back = [float(r["v"]) for r in csv.DictReader(io.StringIO(csv_text(rows)))]
    assert back == values


@settings(max_examples=50, deadline=None)
@given(st.sampled_from(["audit", "solve", "identity", "stability", "weakstrong"]),
       st.integers(0, 2 ** 31), st.floats(0.05, 1.0), st.sampled_from(["central", "llf"]))
def test_config_round_trip(command, seed, cfl, scheme):
    text = ('{"system": {"kind": "duct_gas", "gamma": 1.4}, "seed": %d, '
            '"solver": {"cfl": %r, "scheme": "%s"}}' % (seed, cfl, scheme))
    c = parse_config(text, command=command)
    assert parse_config(serialize(c)) == c

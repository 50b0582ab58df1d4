import math

import numpy as np
import pytest

from srmcf.config import ConfigError, parse_config, parse_datum

MINIMAL = """
group = "heisenberg"
[flow]
eps = [1.0]
T = 0.1
[datum]
phi = "0"
"""


def _errors(text, **kw):
    with pytest.raises(ConfigError) as exc:
        parse_config(text, **kw)
    return exc.value.errors


def test_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.group == "heisenberg" and cfg.eps == [1.0] and cfg.T == 0.1
    assert cfg.lo == (0.0,) * 3 and cfg.hi == (1.0,) * 3 and cfg.shape == (21,) * 3
    assert cfg.phi(np.zeros((3, 2))).tolist() == [0.0, 0.0]


def test_unsorted_eps_names_key():
    errs = _errors(MINIMAL.replace("[1.0]", "[0.5, 1]"))
    assert any(e.startswith("flow.eps") for e in errs)


def test_dimension_error():
    errs = _errors(MINIMAL.replace("heisenberg", "abelian:1").replace('"0"', '"x1*x2"'))
    assert any("x2" in e and "dimension" in e for e in errs)


def test_all_errors_collected():
    text = MINIMAL.replace("T = 0.1", "T = 0.1\nbogus = 1").replace("[1.0]", "[0.5, 1]")
    text += "\n[output]\ncolour = 'red'\n"
    errs = _errors(text)
    assert len(errs) == 3
    assert any("bogus" in e for e in errs) and any("colour" in e for e in errs)


@pytest.mark.parametrize("bad", [
    'group = "nope"\n[flow]\nT = 1\n[datum]\nphi = "0"',
    'group = "heisenberg"\n[datum]\nphi = "0"',
    'group = "heisenberg"\n[flow]\nT = 1\n[datum]\nphi = "__import__(1)"',
    'group = "heisenberg"\n[flow]\nT = 1\n[datum]\nphi = "x1 ** x2"',
    'group = "heisenberg"\n[flow]\nT = 1\neps = [2.0]\n[datum]\nphi = "0"',
    'group = "heisenberg"\n[grid]\nshape = [3, 10, 10]\n[flow]\nT = 1\n[datum]\nphi = "0"',
    'group = "heisenberg"\n[grid]\nlo = [0, 0]\n[flow]\nT = 1\n[datum]\nphi = "0"',
    'group = "heisenberg"\n[flow]\nT = 1\n[datum]\nphi = "0"\n[diagnostics]\nholder_alpha = [1.5]',
    'group = "heisenberg"\nseed = -1\n[flow]\nT = 1\n[datum]\nphi = "0"',
    'group = "heisenberg"\n[flow\nT = 1',
])
def test_invalid_configs(bad):
    assert _errors(bad)


def test_steady_waives_T():
    text = MINIMAL.replace("T = 0.1", "")
    assert _errors(text)
    cfg = parse_config(text, steady=True)
    assert math.isinf(cfg.T)


def test_datum_catalog():
    x = np.array([[0.5, 1.0], [2.0, -1.0], [0.0, 3.0]])
    d = parse_datum("2*x1 - 0.5*x2 + 1", 3)
    np.testing.assert_allclose(d(x), 2 * x[0] - 0.5 * x[1] + 1)
    assert d.is_linear
    d = parse_datum("sin(pi*x1)*cos(x2) + exp(-x3) + x1**2 / 4", 3)
    np.testing.assert_allclose(d(x), np.sin(np.pi * x[0]) * np.cos(x[1]) + np.exp(-x[2]) + x[0] ** 2 / 4)
    assert not d.is_linear
    assert parse_datum("3", 2)(np.zeros((2, 4))).shape == (4,)
    for bad in ("x1 / x2", "log(x1)", "x1 ** 9", "y1", "x1.real", "[x1]"):
        with pytest.raises(ConfigError):
            parse_datum(bad, 3)

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from chsd.app.config import ConfigError, PRESETS, RunConfig, evaluate_expression, load_config, parse_config, preset


def test_spinodal_preset_parameters():
    p = parse_config("[run]\npreset = spinodal\n").params
    assert p.rho0 / p.chi == pytest.approx(0.01)
    assert (p.epsilon, p.nu, p.gamma, p.mobility) == (0.01, 0.1, 0.1, 0.1)
    np.testing.assert_array_equal(p.Pi, np.eye(2))


def test_droplet_preset_parameters():
    cfg = preset("droplet")
    p = cfg.params
    assert (p.epsilon, p.gamma, p.nu, p.alpha_bjsj) == (0.01, 0.001, 0.1, 0.1)
    np.testing.assert_allclose(p.Pi, 0.001 * np.eye(2))
    assert p.mobility == "degenerate"
    assert cfg.inflow_amplitude == 1.0 and cfg.tau == 0.001


def test_bubble_preset_parameters():
    p = preset("bubble").params
    assert p.buoyancy == 2.0
    np.testing.assert_allclose(p.Pi, 0.01 * np.eye(2))


def test_convergence_preset_has_unit_parameters():
    p = preset("convergence").params
    for name in ("rho0", "chi", "nu", "gamma", "epsilon", "alpha_bjsj", "mobility", "beta"):
        assert getattr(p, name) == 1.0
    np.testing.assert_array_equal(p.Pi, np.eye(2))


def test_inflow_profile_peak():
    u1, u2 = preset("droplet").inflow_profile()(np.array([0.0, 0.0, 0.0]), np.array([0.5, 0.4, 0.7]))
    np.testing.assert_allclose(u1, [1.0, 0.0, 0.0], atol=1e-15)
    assert np.all(u2 == 0)


def test_full_file_overrides_preset():
    text = """
    # comment line
    [run]
    preset = droplet
    tau = 0.002
    t_final = 0.01
    [physics]
    nu = 0.2            # trailing comment
    permeability = 0.5 0.1 0.1 0.3
    [initial]
    phi = tanh(x - 0.5)
    """
    cfg = parse_config(text)
    assert cfg.tau == 0.002 and cfg.steps == 5
    assert cfg.params.nu == 0.2 and cfg.params.epsilon == 0.01
    np.testing.assert_allclose(cfg.params.Pi, [[0.5, 0.1], [0.1, 0.3]])
    assert cfg.phi0 == "tanh(x - 0.5)"


@pytest.mark.parametrize("text,key,line", [
    ("[run]\nn = 4\ntau = -0.1\nt_final = 1\n", "tau", 3),
    ("[run]\npreset = spinodal\n[physics]\nepsilon = 0\n", "epsilon", 4),
    ("[run]\npreset = spinodal\nbogus = 1\n", "bogus", 3),
    ("[run]\npreset = spinodal\n[nowhere]\n", "nowhere", 3),
    ("[run]\npreset = spinodal\nn = 3\nn = 4\n", "n", 4),
    ("[run]\npreset = spinodal\nn = three\n", "n", 3),
    ("[run]\npreset = unknown\n", "unknown", 2),
    ("[run]\npreset = spinodal\n[physics]\npermeability = 1 2 3 4\n", "permeability", None),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigError) as info:
        parse_config(text)
    assert key in str(info.value)
    if line is not None:
        assert info.value.line == line


def test_missing_required_keys():
    with pytest.raises(ConfigError, match="t_final"):
        parse_config("[run]\nn = 4\ntau = 0.1\n")


def test_step_must_divide_final_time():
    with pytest.raises(ConfigError):
        RunConfig(tau=0.3, t_final=1.0)


def test_expression_evaluation_is_restricted():
    x = np.linspace(0, 1, 5)
    np.testing.assert_allclose(evaluate_expression("sin(pi * x) + y", x, 2 * x), np.sin(np.pi * x) + 2 * x)
    with pytest.raises(ConfigError):
        evaluate_expression("__import__('os')", x, x)
    with pytest.raises(ConfigError):
        parse_config("[run]\npreset = spinodal\n[initial]\nphi = (x +\n")


def test_load_config_from_file_and_preset(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("[run]\npreset = bubble\nn = 8\n")
    assert load_config(str(path)).n == 8
    assert load_config("spinodal").name == "spinodal"
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "absent.cfg"))


def test_every_preset_is_valid():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.steps * cfg.tau == pytest.approx(cfg.t_final)


@settings(max_examples=40, deadline=None)
@given(n=st.integers(1, 200), k=st.integers(1, 500), tau=st.sampled_from([0.1, 0.01, 0.001, 0.25]),
       seed=st.integers(0, 10**6))
def test_parse_roundtrip(n, k, tau, seed):
    text = f"[run]\nn = {n}\ntau = {tau!r}\nt_final = {k * tau!r}\nseed = {seed}\nscheme = PD\n"
    cfg = parse_config(text)
    assert (cfg.n, cfg.seed, cfg.scheme, cfg.steps) == (n, seed, "pd", k)

import os
import tempfile

import numpy as np
import pytest

from src.config_io import (
    Section,
    dump_kernels,
    dump_scm,
    load_kernels,
    load_kernels_file,
    load_scm,
    load_scm_file,
    read_yaml,
    write_yaml,
)
from src.errors import ConfigError
from src.forward import InitialState
from src.gformula import fit_kernels
from src.schedule import Schedule
from src.scm import AdditiveSCM, DiscreteSCM, NoiseFamily, Regime, Variant, random_discrete_scm, simulate

BASIC_DOC = {
    "variant": "basic",
    "y_values": [0.0, 1.0],
    "y_kernel": [[[0.5, 0.5], [0.2, 0.8]]],
}


def test_scm_files_load_exactly() -> None:
    """Test that every variant written to YAML loads back with identical tables."""
    rng = np.random.default_rng(9)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "scm.yaml")
        for variant in Variant:
            scm = random_discrete_scm(rng, variant, ny=3, nl=2, nu=2)
            write_yaml({"scm": dump_scm(scm)}, path)
            loaded = load_scm_file(path)
            assert isinstance(loaded, DiscreteSCM)
            assert loaded.variant is variant
            assert np.array_equal(loaded.y_kernel, scm.y_kernel)
            assert np.array_equal(loaded.l_kernel, scm.l_kernel)
            assert np.array_equal(loaded.u_weights, scm.u_weights)
            assert loaded.u_levels == ("u0", "u1")
            assert loaded.declared_positive

        write_yaml(dump_scm(AdditiveSCM(beta=0.25, u_value=-1.0, noise_sd=0.5, noise_family=NoiseFamily.UNIFORM)), path)
        assert load_scm_file(path) == AdditiveSCM(0.25, -1.0, 0.5, NoiseFamily.UNIFORM)


def test_scm_defaults() -> None:
    """Test optional keys of the SCM document."""
    scm = load_scm(dict(BASIC_DOC, initial={"y": 1, "a": 1}))
    assert isinstance(scm, DiscreteSCM)
    assert scm.u_levels == ("u0",)
    assert scm.initial == InitialState(y=1, l=0, a=1)
    assert load_scm({"kind": "additive", "beta": 1, "noise_family": "constant"}) == AdditiveSCM(
        1.0, 0.0, 0.0, NoiseFamily.CONSTANT)


@pytest.mark.parametrize(
    "doc, message",
    [
        ({"kind": "tabular"}, "scm.kind: must be one of"),
        ({"y_values": [0.0, 1.0]}, "scm.variant: required key is missing"),
        (dict(BASIC_DOC, lag=2), "scm.lag: only lag 1"),
        (dict(BASIC_DOC, y_kernel="flat"), "scm.y_kernel: expected list, got str"),
        (dict(BASIC_DOC, y_values=[0.0, "one"]), "scm.y_values: not a numeric array"),
        (dict(BASIC_DOC, y_kernel=[[[0.5, 0.6], [0.2, 0.8]]]), "scm: y_kernel row .* sums to"),
        (dict(BASIC_DOC, initial={"y": -1}), "scm.initial.y: must be >= 0"),
        ({"kind": "additive", "beta": True}, "scm.beta: expected a number or string, got a boolean"),
        ([1, 2], "scm: expected a mapping, got list"),
    ],
)
def test_scm_errors(doc: object, message: str) -> None:
    """Test that the first violation is reported with its dotted path."""
    with pytest.raises(ConfigError, match=message):
        load_scm(doc)


def test_kernel_files_load_exactly() -> None:
    """Test writing fitted kernels, counts included, and reading them back."""
    scm = random_discrete_scm(np.random.default_rng(1), Variant.RELAXED, ny=2, nl=2)
    traj = simulate(scm, 0, Regime.natural(Schedule.from_string("000111")), 120, seed=2)
    kernels = fit_kernels(traj, smoothing=0.5, y_values=scm.y_values, l_values=scm.l_values)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "kernels.yaml")
        write_yaml({"kernels": dump_kernels(kernels)}, path)
        loaded = load_kernels_file(path)
    for name in ("gl", "gy", "gy_switch", "gl_counts", "gy_counts", "gy_switch_counts"):
        assert np.array_equal(getattr(loaded, name), getattr(kernels, name))
    assert loaded.smoothing == 0.5

    doc = dump_kernels(kernels)
    doc["gy"][0][0][0][0] = [0.9, 0.9]
    with pytest.raises(ConfigError, match="kernels: gy rows must be probability vectors"):
        load_kernels(doc)


def test_yaml_errors_and_sections() -> None:
    """Test unreadable files and typed section access."""
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "bad.yaml")
        with open(path, "w") as f:
            f.write("scm: [unclosed\n")
        with pytest.raises(ConfigError, match="invalid YAML"):
            read_yaml(path)
        with pytest.raises(ConfigError, match="cannot read"):
            read_yaml(os.path.join(tmp, "absent.yaml"))

    section = Section({"run": {"reps": 0, "mode": "dp", "plot": True}})
    run = section.section("run")
    assert run is not None
    assert run.get_str("mode") == "dp"
    assert run.get_bool("plot")
    assert run.get_float("level", 0.95) == 0.95
    assert section.section("bootstrap", required=False) is None
    with pytest.raises(ConfigError, match="run.reps: must be >= 1, got 0"):
        run.get_int("reps", minimum=1)
    with pytest.raises(ConfigError, match="run.mode: must be one of"):
        run.get_choice("mode", ("gcomputation",))
    with pytest.raises(ConfigError, match="bootstrap: required section is missing"):
        section.section("bootstrap")

import json
import os
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from click.testing import CliRunner

from preflect.cli import EXIT_OK, EXIT_VALIDATION, EXIT_WARNING, main
from preflect.errors import BadEpsilon, BadExponent, BadLevel, TooCoarse
from preflect.tukia_assembly import assemble_reflection
from preflect.verify import PLOTS, PipelineConfig, chart_samples, distortion_ratios, distortion_report


@pytest.mark.parametrize("p, r", [(1.5, 1.5), (1.5, 1.6), (2.0, 1.25), (1.5, 1.0)])
def test_config_rejects_bad_exponents(p, r):
    with pytest.raises(BadExponent):
        PipelineConfig(p=p, r=r)


def test_config_rejects_eps_and_level():
    with pytest.raises(BadEpsilon):
        PipelineConfig(eps=0.2)
    with pytest.raises(BadLevel):
        PipelineConfig(k_max=0)
    assert PipelineConfig(r=1.25).q == pytest.approx(5.0)


def test_identity_harness():
    D = np.broadcast_to(np.eye(2), (10, 2, 2))
    fwd, inv, J = distortion_ratios(D, 1.25, 5.0)
    np.testing.assert_allclose(fwd, 1.0)
    np.testing.assert_allclose(inv, 1.0)
    np.testing.assert_allclose(J, 1.0)


def test_conformal_scaling_harness():
    # a rotation scaled by 2: |Df|^r / J = 2^(r-2), inverse 2^(2-q)
    c, s = np.cos(0.3), np.sin(0.3)
    D = 2 * np.array([[[c, -s], [s, c]]])
    fwd, inv, _ = distortion_ratios(D, 1.25, 5.0)
    assert fwd[0] == pytest.approx(2 ** -0.75)
    assert inv[0] == pytest.approx(2 ** -3.0)


@pytest.fixture(scope="module")
def disk_f(disk_collar):
    return assemble_reflection(disk_collar)


def test_too_coarse_grid(disk_f):
    with pytest.raises(TooCoarse):
        chart_samples(disk_f, 2)


def test_distortion_report_on_disk(disk_f):
    rep, extra = distortion_report(disk_f, 4)
    assert rep.flagged == 0
    assert rep.samples == 16 * len(disk_f.children)
    assert np.isfinite(rep.quantiles["q99"]) and np.isfinite(rep.inverse_quantiles["q99"])
    assert set(rep.per_level) == {1, 2, 3}
    assert extra["per_rect_max"].shape == (len(disk_f.children),)


# command line ---------------------------------------------------------------

@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("run"))
    res = CliRunner().invoke(main, ["reflect", "circle", "--kmax", "2", "--out", out])
    assert res.exit_code == EXIT_OK, res.output
    return out


def test_reflect_writes_reports(run_dir):
    with open(os.path.join(run_dir, "report.json")) as fh:
        rep = json.load(fh)
    for key in ("conformal", "screen", "whitney", "reflect", "refine", "edges", "assembly", "distortion"):
        assert key in rep
    assert rep["config"]["k_max"] == 2
    with open(os.path.join(run_dir, "cells.csv")) as fh:
        rows = fh.read().splitlines()
    assert rows[0].startswith("source,target,level")
    assert len(rows) - 1 == rep["refine"]["children"]


def test_reflect_writes_parseable_svgs(run_dir):
    for name in PLOTS:
        root = ET.parse(os.path.join(run_dir, name)).getroot()
        assert root.tag.endswith("svg")


def test_verify_command(run_dir):
    res = CliRunner().invoke(main, ["verify", run_dir, "--grid", "4"])
    assert res.exit_code == EXIT_OK, res.output
    with open(os.path.join(run_dir, "verify.json")) as fh:
        assert json.load(fh)["grid"] == 4


def test_plot_command(run_dir):
    res = CliRunner().invoke(main, ["plot", run_dir])
    assert res.exit_code == EXIT_OK
    assert len(res.output.split()) == len(PLOTS)


def test_bad_exponent_exit_code(tmp_path):
    res = CliRunner().invoke(main, ["reflect", "circle", "--r", "1.6", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_VALIDATION
    assert "BadExponent" in res.output


def test_unknown_curve_exit_code():
    res = CliRunner().invoke(main, ["check", "no_such_curve"])
    assert res.exit_code == EXIT_VALIDATION


def test_config_file_and_flags(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("# screen settings\nalpha = 0.3\npairs = 8\n")
    res = CliRunner().invoke(main, ["check", "circle", "--config", str(cfg), "--pairs", "12", "--mesh", "0.1"])
    assert res.exit_code == EXIT_OK, res.output
    out = json.loads(res.output)
    assert out["alpha"] == 0.3  # from the file
    assert out["pairs"] == 12  # the flag wins


def test_config_unknown_key(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("bogus = 1\n")
    res = CliRunner().invoke(main, ["check", "circle", "--config", str(cfg)])
    assert res.exit_code == 2


@pytest.mark.slow
def test_cusp_warns(tmp_path):
    res = CliRunner().invoke(main, ["reflect", "cusp", "--kmax", "2", "--no-plots", "--out", str(tmp_path)])
    assert res.exit_code == EXIT_WARNING, res.output
    assert "SubhyperbolicityWarning" in res.output
    assert not any(n.endswith(".svg") for n in os.listdir(tmp_path))

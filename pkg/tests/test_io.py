import json

import numpy as np
import pytest

from multigen import estimators as est
from multigen.experiments import replicate_fig1b
from multigen.io import PanelFormatError, emit, export_panel, load_panel, panel_to_csv, render
from multigen.models import AssortativeParams, LatentFactorParams, MultiplicityParams
from multigen.moments import latent_factor_moments
from multigen.pedigree import PedigreeError, SimTopology
from multigen.simulate import simulate

LF = LatentFactorParams(0.8, 0.7)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_round_trip_identical_estimates(tmp_path, fmt):
    ped = simulate(LF, SimTopology(500, 4, 2, 1))
    path = tmp_path / f"p.{fmt}"
    export_panel(ped, path)
    back = load_panel(path)
    assert ped.same_panel(back)
    a = est.multigen_regression(ped, (1, 2))
    b = est.multigen_regression(back, (1, 2))
    assert a.to_json() == b.to_json()


def test_latent_columns_optional(tmp_path):
    ped = simulate(MultiplicityParams(0.3, 0.7, 0.9, 0.5), SimTopology(20, 2, 1, 1))
    export_panel(ped, tmp_path / "a.csv")
    export_panel(ped, tmp_path / "b.csv", include_latent=True)
    assert "e1" not in (tmp_path / "a.csv").read_text().splitlines()[1]
    back = load_panel(tmp_path / "b.csv")
    assert np.array_equal(back.e, ped.e)


def test_two_parent_round_trip(tmp_path):
    ped = simulate(AssortativeParams(0.8, 0.7, 0.5), SimTopology(50, 3, 1, 1))
    export_panel(ped, tmp_path / "p.json")
    back = load_panel(tmp_path / "p.json")
    assert ped.same_panel(back) and back.has_spouses


def _write(tmp_path, text, name="p.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


HEADER = "person_id,dynasty_id,generation,father_id,mother_id,spouse_id,y\n"


def test_generation_error_names_line(tmp_path):
    path = _write(tmp_path, HEADER + "0,0,0,,,,0.1\n1,0,0,0,,,0.2\n")
    with pytest.raises(PedigreeError, match="line 3"):
        load_panel(path)


def test_orphan_parent_names_line(tmp_path):
    path = _write(tmp_path, HEADER + "0,0,0,,,,0.1\n1,0,1,7,,,0.2\n")
    with pytest.raises(PedigreeError, match="line 3.*father_id=7"):
        load_panel(path)


def test_malformed_rows(tmp_path):
    with pytest.raises(PanelFormatError, match="line 2.*not a number"):
        load_panel(_write(tmp_path, HEADER + "0,0,0,,,,abc\n"))
    with pytest.raises(PanelFormatError, match="line 3.*expected 7 fields"):
        load_panel(_write(tmp_path, HEADER + "0,0,0,,,,0.1\n1,0,1,0\n"))
    with pytest.raises(PanelFormatError, match="line 3.*duplicate person_id"):
        load_panel(_write(tmp_path, HEADER + "0,0,0,,,,0.1\n0,0,0,,,,0.2\n"))
    with pytest.raises(PanelFormatError, match="missing required"):
        load_panel(_write(tmp_path, "person_id,y\n0,0.1\n"))
    with pytest.raises(PanelFormatError, match="unknown column"):
        load_panel(_write(tmp_path, HEADER.strip() + ",zzz\n0,0,0,,,,0.1,1\n"))


def test_json_errors_name_record(tmp_path):
    doc = {"persons": [{"person_id": 0, "dynasty_id": 0, "generation": 0, "father_id": None, "y": 0.1},
                       {"person_id": 1, "dynasty_id": 0, "generation": 1, "father_id": 9, "y": 0.1}]}
    with pytest.raises(PedigreeError, match="record 1"):
        load_panel(_write(tmp_path, json.dumps(doc), "p.json"))


def test_missing_spouse_column_accepted(tmp_path):
    ped = simulate(LF, SimTopology(100, 3, 1, 1))
    lines = panel_to_csv(ped).splitlines()[1:]
    rows = [",".join(ln.split(",")[:4] + [ln.split(",")[6]]) for ln in lines]
    path = _write(tmp_path, "\n".join(rows) + "\n")
    back = load_panel(path)
    assert est.multigen_regression(back, (1, 2)).n_obs > 0
    with pytest.raises(est.MissingColumnError):
        est.multigen_regression(back, (1, 2), ["spouse_y"])


def test_unreadable_file(tmp_path):
    with pytest.raises(PanelFormatError, match="nope.csv"):
        load_panel(tmp_path / "nope.csv")


def test_emit_is_byte_stable(tmp_path):
    ped = simulate(LF, SimTopology(300, 3, 1, 1))
    r = est.multigen_regression(ped, (1, 2))
    emit(r, tmp_path / "a.json")
    emit(r, tmp_path / "b.json")
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_moment_set_csv(tmp_path):
    m = latent_factor_moments(LF, 3)
    emit(m, tmp_path / "m.csv", "csv")
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "k,beta_k"


def test_report_json_keeps_provenance():
    doc = json.loads(render(replicate_fig1b()))
    assert all(e["provenance"] for e in doc["expected"])


def test_emit_surfaces_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="file"):
        emit({"a": 1}, blocker / "sub" / "out.json")

import json

import pytest

from multigen.cli import SCHEMA_ID, RunConfig, UsageError, main, parse_cli


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_happy_path_config():
    cfg = parse_cli(["simulate", "--model", "latent_factor", "--rho", "0.8", "--lambda", "0.7",
                     "--dynasties", "10000", "--generations", "8", "--seed", "42", "--out", "panel.csv"])
    assert cfg.seed == 42 and cfg.topology == {"n_dynasties": 10000, "generations": 8}
    assert cfg.model["params"] == {"rho": 0.8, "lambda": 0.7}


def test_missing_m_names_field(capsys):
    code, _, err = run(["simulate", "--model", "assortative", "--rho", "0.8"], capsys)
    assert code == 2 and "assortative_m" in err


def test_all_problems_listed():
    with pytest.raises(UsageError) as exc:
        parse_cli(["simulate", "--model", "latent_factor", "--rho", "0.8", "--lambda", "1.5"])
    msgs = " ".join(exc.value.problems)
    assert "transferability_lambda" in msgs and "--dynasties" in msgs and "--generations" in msgs


def test_unknown_flag_and_type_errors(capsys):
    assert run(["simulate", "--bogus"], capsys)[0] == 2
    assert run(["simulate", "--model", "latent_factor", "--rho", "abc"], capsys)[0] == 2
    assert run(["nonsense"], capsys)[0] == 2


def test_fit_prints_json(capsys):
    code, out, _ = run(["fit", "--beta1", "0.448", "--beta2", "0.3136"], capsys)
    doc = json.loads(out)
    assert code == 0
    assert doc["result"]["lambda"] == pytest.approx(0.7, abs=1e-12)
    assert doc["result"]["rho_sq"] == pytest.approx(0.64, abs=1e-12)
    assert {"seed", "model", "topology", "version"} <= set(doc["header"])


def test_fit_infeasible_exit_code(capsys):
    assert run(["fit", "--beta1", "0.3", "--beta2", "0.4"], capsys)[0] == 4


def test_fit_extra_moments(capsys):
    code, out, _ = run(["fit", "--beta", "1=0.448", "--beta", "2=0.3136", "--beta", "3=0.21952"], capsys)
    assert code == 0 and json.loads(out)["result"]["n_moments"] == 3


def test_config_merge_flags_win(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({
        "schema_id": SCHEMA_ID, "seed": 5,
        "model": {"model": "latent_factor", "params": {"rho": 0.8, "lambda": 0.7}},
        "topology": {"n_dynasties": 100, "generations": 3},
    }))
    cfg = parse_cli(["simulate", "--config", str(cfg_path), "--seed", "9", "--lambda", "0.5"])
    assert cfg.seed == 9
    assert cfg.model["params"] == {"rho": 0.8, "lambda": 0.5}
    assert cfg.topology["n_dynasties"] == 100


def test_config_unknown_keys_named(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"seed": 1, "topology": {"n_dynasties": 1, "gens": 3},
                                    "extra": 1, "options": {"foo": 1}}))
    with pytest.raises(UsageError) as exc:
        parse_cli(["simulate", "--config", str(cfg_path)])
    msgs = exc.value.problems
    assert "config.extra: unknown key" in msgs
    assert "config.topology.gens: unknown key" in msgs
    assert any(m.startswith("config.options.foo") for m in msgs)


def test_config_schema_id_checked(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"schema_id": "other/9"}))
    with pytest.raises(UsageError, match="schema_id"):
        parse_cli(["fit", "--config", str(p), "--beta1", "0.4", "--beta2", "0.2"])


def test_run_config_round_trip():
    cfg = parse_cli(["moments", "--model", "assortative", "--rho", "0.8", "--lambda-tilde", "0.7",
                     "--m", "0.5", "--max-k", "4"])
    assert RunConfig.from_json(cfg.to_json()) == cfg
    with pytest.raises(UsageError, match="config.bad"):
        RunConfig.from_dict({**cfg.to_dict(), "bad": 1})


def test_moments_csv(capsys):
    code, out, _ = run(["moments", "--model", "latent_factor", "--rho", "0.8", "--lambda", "0.7",
                        "--max-k", "3", "--format", "csv"], capsys)
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("# ") and lines[1] == "k,beta_k" and lines[2] == "1,0.448"
    head = json.loads(lines[0][2:])
    assert {"seed", "model", "topology", "version"} <= set(head)


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_simulate_deterministic_across_workers(tmp_path, fmt):
    base = ["simulate", "--model", "latent_factor", "--rho", "0.8", "--lambda", "0.7",
            "--dynasties", "500", "--generations", "4", "--children", "2", "--seed", "42"]
    outs = []
    for i, w in enumerate(("1", "1", "4")):
        path = tmp_path / f"p{i}.{fmt}"
        assert main(base + ["--workers", w, "--out", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1] == outs[2]


def test_regress_on_exported_panel(tmp_path, capsys):
    panel = tmp_path / "p.csv"
    main(["simulate", "--model", "assortative", "--rho", "0.8", "--lambda-tilde", "0.7", "--m", "0.5",
          "--dynasties", "2000", "--generations", "3", "--seed", "1", "--out", str(panel)])
    code, out, _ = run(["regress", "--panel", str(panel), "--lags", "1,2", "--controls", "mother_y"], capsys)
    doc = json.loads(out)
    assert code == 0 and "mother_y" in doc["result"]["coefficients"]
    assert doc["header"]["model"]["model"] == "assortative"
    code, out, _ = run(["regress", "--panel", str(panel), "--format", "table"], capsys)
    assert code == 0 and "grandparent" in out


def test_regress_data_errors(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("person_id,dynasty_id,generation,father_id,y\n0,0,0,,0.1\n1,0,0,0,0.2\n")
    code, _, err = run(["regress", "--panel", str(bad)], capsys)
    assert code == 3 and "line 3" in err
    assert run(["regress", "--panel", str(tmp_path / "missing.csv")], capsys)[0] == 3
    assert run(["regress"], capsys)[0] == 2


def test_regress_missing_column_exit_3(tmp_path, capsys):
    p = tmp_path / "p.csv"
    rows = ["person_id,dynasty_id,generation,father_id,y"]
    rows += [f"{i},{i},0,,{(i * 37 % 11) / 10}" for i in range(40)]
    rows += [f"{40 + i},{i},1,{i},{(i * 13 % 7) / 10}" for i in range(40)]
    rows += [f"{80 + i},{i},2,{40 + i},{(i * 29 % 5) / 10}" for i in range(40)]
    p.write_text("\n".join(rows) + "\n")
    code, _, err = run(["regress", "--panel", str(p), "--controls", "spouse_y"], capsys)
    assert code == 3 and "spouse_id" in err


def test_replicate_writes_outputs(tmp_path, capsys):
    out = tmp_path / "r"
    code, stdout, _ = run(["replicate", "fig1b", "--out", str(out)], capsys)
    assert code == 0 and "fig1b: PASS" in stdout
    doc = json.loads((out / "report.json").read_text())
    assert doc["header"]["seed"] == doc["report"]["seed"]
    assert (out / "series.csv").read_text().splitlines()[1] == "series,k,value"


def test_replicate_deterministic(tmp_path, capsys):
    for d in ("a", "b"):
        assert main(["replicate", "table2", "--out", str(tmp_path / d)]) == 0
    for name in ("report.json", "series.csv", "table.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

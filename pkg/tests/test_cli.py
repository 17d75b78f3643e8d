import json

import pytest

from pumpline.cli import apply_overrides, build_config, dumps, main
from pumpline.errors import ConfigError

FAST = ["--override", "grids.n_s=128", "--override", "N_list=[1, 2, 4, 32]"]


def _write(tmp_path, doc):
    p = tmp_path / "run.json"
    p.write_text(json.dumps(doc))
    return str(p)


def test_bands_certificate(tmp_path, capsys):
    assert main(["bands", "--preset", "sliding_cosine", "--out", str(tmp_path)]) == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["n"] == 1 and cert["disc_sign"] == -1
    header = (tmp_path / "bands.csv").read_text().splitlines()[0]
    assert header == "n,s,E_minus,E_plus"


def test_free_space_has_no_gap(tmp_path, capsys):
    cfg = _write(tmp_path, {"potential": {"terms": []}, "E_F": 5.0})
    assert main(["bands", "--config", cfg, "--out", str(tmp_path)]) == 2
    assert "no spectral gap at E_F" in capsys.readouterr().err


def test_missing_fermi_energy_is_schema_error(tmp_path, capsys):
    cfg = _write(tmp_path, {"potential": {"preset": "sliding_cosine"}})
    assert main(["bands", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "E_F" in capsys.readouterr().err


def test_unknown_key_is_schema_error(tmp_path, capsys):
    cfg = _write(tmp_path, {"potential": {"preset": "sliding_cosine"}, "E_F": 9.8, "colour": 1})
    assert main(["chern", "--config", cfg, "--out", str(tmp_path)]) == 1
    assert "colour" in capsys.readouterr().err


def test_bad_usage_exits_one(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["bands", "--nonsense"])
    assert exc.value.code == 1


def test_chern_json_has_stability_flag(tmp_path, capsys):
    assert main(["chern", "--preset", "sliding_cosine", "--out", str(tmp_path)]) == 0
    out = json.loads((tmp_path / "chern.json").read_text())
    assert out["total"] == 1 and out["stable"] is True


def test_chern_static_zero(tmp_path, capsys):
    assert main(["chern", "--preset", "static_cosine", "--out", str(tmp_path)]) == 0
    assert json.loads((tmp_path / "chern.json").read_text())["total"] == 0


def test_closed_gap_exit_two(tmp_path, capsys):
    args = ["compare", "--preset", "sliding_cosine", "--override", "potential.params.V0=0",
            "--override", "E_F=9.8", "--out", str(tmp_path)]
    assert main(args) == 2


@pytest.mark.parametrize("cmd, files", [
    ("winding", ["winding.json", "u_minus.csv"]),
    ("scatter", ["scatter.csv", "convergence.csv", "convergence.json"]),
    ("pump", ["pump.csv", "pump.json"]),
])
def test_other_subcommands(tmp_path, capsys, cmd, files):
    assert main([cmd, "--preset", "two_harmonic_pump", "--out", str(tmp_path)] + FAST) == 0
    for f in files:
        assert (tmp_path / f).stat().st_size > 0


def test_compare_is_deterministic(tmp_path, capsys):
    outs = []
    for k in range(2):
        d = tmp_path / str(k)
        assert main(["compare", "--preset", "sliding_cosine", "--out", str(d), "--override", "seed=3"] + FAST) == 0
        outs.append({f.name: f.read_bytes() for f in d.iterdir()})
    assert outs[0] == outs[1]
    report = json.loads(outs[0]["report.json"])
    assert report["chern_total"] == report["node_count"] == report["winding_u_minus"] == 1


def test_overrides_parse_yaml_values():
    doc = apply_overrides({"grids": {"n_s": 64}}, ["grids.N_k=16", "N_list=[1, 3]", "potential.L=2.0"])
    assert doc == {"grids": {"n_s": 64, "N_k": 16}, "N_list": [1, 3], "potential": {"L": 2.0}}
    with pytest.raises(ConfigError):
        apply_overrides({}, ["novalue"])


def test_preset_fills_fermi_energy():
    doc = build_config(None, "two_harmonic_pump", [])
    assert 33.0 < doc["E_F"] < 46.0


def test_n_list_must_ascend():
    with pytest.raises(ConfigError, match="N_list"):
        build_config(None, "sliding_cosine", ["N_list=[3, 1]"])


def test_json_uses_seventeen_digits_and_sorted_keys():
    text = dumps({"b": 0.1, "a": [1, 2.5, None, True], "c": complex(1, -2)})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "0.10000000000000001" in text
    assert json.loads(text)["c"] == {"im": -2.0, "re": 1.0}


def test_coarse_grid_is_numerical_failure(tmp_path, capsys):
    args = ["pump", "--preset", "two_harmonic_pump", "--out", str(tmp_path),
            "--override", "grids.n_s=16", "--override", "N_list=[2]"]
    assert main(args) == 3
    assert "denser s-grid" in capsys.readouterr().err

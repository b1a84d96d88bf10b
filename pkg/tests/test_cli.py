import csv
import io
import json

import pytest

from ppfi.cli import main
from ppfi.experiments import SCHEMA, SUITE_DIR, ConfigError, load_config, render

POISSON = '{"kind": "poisson", "horizon": 1, "rate": 1}'
HAWKES = json.dumps({"kind": "hawkes", "horizon": 1, "phi": {"kind": "clamp", "alpha": 1, "K": 2},
                     "kernel": {"kind": "indicator", "lo": 0, "hi": 0.1, "value": 1}})


def write(path, data):
    path.write_text(json.dumps(data, indent=2) if not isinstance(data, str) else data)
    return path


def test_poincare_poisson_passes(tmp_path):
    out = tmp_path / "r.json"
    code = main(["poincare", "--model", POISSON, "--functional", "count", "--n", "2000", "--seed", "1",
                 "--report", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    assert rep["schema"] == SCHEMA and rep["verdict"] == "pass"
    assert rep["inputs"]["seed"] == 1
    assert rep["results"]["factor"] == 1.0
    timing = json.loads((tmp_path / "r.timing.json").read_text())
    assert timing["wall_clock_seconds"] >= 0


def test_deviation_with_zero_bound_fails(tmp_path):
    code = main(["deviation", "--model", POISSON, "--g", "1", "--n", "20", "--r", "0.5", "--reps", "5000",
                 "--bound-override", "0", "--report", str(tmp_path / "d.json")])
    assert code == 2
    assert json.loads((tmp_path / "d.json").read_text())["verdict"] == "fail"


def test_malformed_json_is_an_error(tmp_path, capsys):
    cfg = write(tmp_path / "bad.json", '{\n  "check": "poincare",\n  "model": \n}\n')
    assert main(["run", str(cfg)]) == 1
    err = capsys.readouterr().err
    assert "line 4" in err


def test_bad_value_names_its_line(tmp_path, capsys):
    cfg = write(tmp_path / "bad.json", '{\n  "check": "poincare",\n  "n": "many",\n  "model": ' + POISSON + '\n}\n')
    assert main(["run", str(cfg)]) == 1
    assert "line 3: n must be an integer" in capsys.readouterr().err


@pytest.mark.parametrize("field,value", [("n", 0), ("grid", -1), ("check", "nope"), ("functional", "wavelet")])
def test_validation_errors(tmp_path, field, value):
    data = {"check": "poincare", "model": json.loads(POISSON), field: value}
    cfg = write(tmp_path / "c.json", data)
    with pytest.raises(ConfigError):
        load_config(cfg)


def test_unknown_key_rejected(tmp_path):
    cfg = write(tmp_path / "c.json", {"check": "poincare", "model": json.loads(POISSON), "colour": 1})
    with pytest.raises(ConfigError, match="colour"):
        load_config(cfg)


def test_missing_model(capsys):
    assert main(["poincare", "--n", "10"]) == 1


def test_report_to_stdout(capsys):
    assert main(["isometry", "--model", POISSON, "--n", "500"]) == 0
    out = capsys.readouterr()
    rep = json.loads(out.out)
    assert rep["metric"]["name"] == "difference"
    assert "isometry: pass" in out.err


def test_not_applicable_exits_zero(tmp_path):
    model = {"kind": "cox", "components": [0.05, 1.1], "prior": [0.5, 0.5]}
    out = tmp_path / "p.json"
    assert main(["poincare", "--model", json.dumps(model), "--n", "200", "--report", str(out)]) == 0
    assert json.loads(out.read_text())["verdict"] == "not-applicable"


def test_sample_writes_jsonl(tmp_path):
    out = tmp_path / "paths.jsonl"
    assert main(["sample", "--model", HAWKES, "--n", "25", "--seed", "3", "--out", str(out),
                 "--report", str(tmp_path / "s.json")]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 25
    assert all(isinstance(json.loads(line), (list, dict)) for line in lines)


def test_transport_law_writes_csv(tmp_path):
    prefix = tmp_path / "law"
    assert main(["transport-law", "--model", HAWKES, "--g", "1", "--r", "1", "--out", str(prefix),
                 "--report", str(tmp_path / "t.json")]) == 0
    lam = (tmp_path / "law.lambda.csv").read_text().splitlines()
    assert lam[0] == "theta,Lambda"
    assert (tmp_path / "law.conjugate.csv").read_text().startswith("x,c,c_tilde")


def test_clark_ocone_and_laplace_subcommands(tmp_path):
    assert main(["clark-ocone", "--model", POISSON, "--functional", "count", "--integrand", "1", "--n", "500",
                 "--report", str(tmp_path / "c.json")]) == 0
    assert main(["laplace", "--model", POISSON, "--functional", "linear:c=1", "--control", "const:u=0.5",
                 "--expect", "positive", "--n", "5000", "--report", str(tmp_path / "l.json")]) == 0
    rep = json.loads((tmp_path / "l.json").read_text())
    assert rep["results"]["expect"] == "positive"


@pytest.mark.parametrize("argv", [
    ["poincare", "--model", HAWKES, "--n", "3000", "--seed", "5"],
    ["isometry", "--model", HAWKES, "--n", "3000", "--seed", "5"],
    ["deviation", "--model", HAWKES, "--g", "1", "--n", "10", "--reps", "300", "--seed", "5"],
    ["laplace", "--model", HAWKES, "--functional", "count", "--control", "const:u=0.3", "--n", "3000"],
    ["clark-ocone", "--model", HAWKES, "--functional", "count", "--n", "40", "--m", "8", "--grid", "16"],
    ["sample", "--model", HAWKES, "--n", "3000", "--seed", "5"],
], ids=lambda a: a[0])
def test_reports_are_byte_identical(tmp_path, argv):
    paths = []
    for k, threads in enumerate(("1", "1", "8")):
        p = tmp_path / f"r{k}.json"
        assert main(argv + ["--threads", threads, "--report", str(p)]) in (0, 2)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1] == paths[2]


def test_render_is_canonical():
    text = render({"b": float("inf"), "a": [1.0, float("-inf"), float("nan")]})
    assert text == render(json.loads(text))
    assert '"+inf"' in text and '"-inf"' in text and '"nan"' in text
    assert text.index('"a"') < text.index('"b"')


class TestReproduceAll:
    def test_empty_suite(self, tmp_path, capsys):
        assert main(["reproduce-all", "--suite", str(tmp_path)]) == 0
        rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
        assert rows == [["name", "check", "metric", "value", "verdict", "runtime_s", "message"]]

    def test_broken_config_is_isolated(self, tmp_path, capsys):
        write(tmp_path / "01_ok.json", {"name": "ok", "check": "isometry", "model": json.loads(POISSON), "n": 200})
        write(tmp_path / "02_broken.json", '{"check": "isometry", "model": ')
        write(tmp_path / "03_fails.json", {"name": "fails", "check": "deviation", "model": json.loads(POISSON),
                                           "g": 1, "n": 20, "reps": 5000, "bound_override": 0})
        out_dir = tmp_path / "reports"
        code = main(["reproduce-all", "--suite", str(tmp_path), "--out", str(out_dir), "--csv", str(tmp_path / "s.csv")])
        assert code == 1
        rows = list(csv.DictReader(io.StringIO(capsys.readouterr().out)))
        assert [r["verdict"] for r in rows] == ["pass", "error", "fail"]
        assert rows[1]["message"]
        assert (out_dir / "01_ok.report.json").exists()
        assert (tmp_path / "s.csv").read_text().count("\n") == 4

    def test_shipped_suite_is_valid(self):
        configs = sorted(SUITE_DIR.glob("*.json"))
        assert len(configs) >= 12
        checks = set()
        for path in configs:
            cfg = load_config(path)
            checks.add(cfg.check)
            assert path.stem.split("_", 1)[1] == cfg.name
        assert checks == {"poincare", "isometry", "deviation", "transport-law", "clark-ocone", "laplace"}

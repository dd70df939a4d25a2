from __future__ import annotations

import json

import pytest
import yaml

from snlslab.cli import main
from snlslab.config import load_config, shipped_config

SMOKE = shipped_config("smoke.yaml")


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.suffix == ".csv"}


def test_print_plan_no_outputs(tmp_path, capsys):
    assert main(["print-plan", "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
    assert "digest" in capsys.readouterr().out
    assert not any(tmp_path.iterdir())


def test_unknown_subcommand_exits_2():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate", "--config", str(SMOKE)])
    assert exc.value.code == 2


def test_invalid_config_exits_2_with_field_diagnostics(tmp_path, capsys):
    data = yaml.safe_load(SMOKE.read_text())
    data["convergence"]["spatial"][0]["K_ref"] = 1  # coarser than its ladder
    data["solver"]["fp_tol"] = -1.0
    bad = tmp_path / "bad.yaml"
    bad.write_text(yaml.safe_dump(data))
    assert main(["print-plan", "--config", str(bad)]) == 2
    err = capsys.readouterr().err
    assert "solver.fp_tol" in err
    (tmp_path / "extra.yaml").write_text("seed: 1\nbogus_key: 3\n")
    assert main(["print-plan", "--config", str(tmp_path / "extra.yaml")]) == 2
    assert main(["print-plan", "--config", str(tmp_path / "missing.yaml")]) == 2


def test_contraction_gate_rejected_at_config_time(tmp_path):
    data = yaml.safe_load(SMOKE.read_text())
    data["model"] = {"name": "saturated", "params": {"gamma": 50.0}}
    path = tmp_path / "gate.yaml"
    path.write_text(yaml.safe_dump(data))
    assert main(["print-plan", "--config", str(path)]) == 2


def test_digest_stable_under_key_reordering(tmp_path):
    data = yaml.safe_load(SMOKE.read_text())
    rev = dict(reversed(list(data.items())))
    rev["model"] = dict(reversed(list(rev["model"].items())))
    p = tmp_path / "rev.yaml"
    p.write_text(yaml.safe_dump(rev, sort_keys=False))
    assert load_config(p).digest() == load_config(SMOKE).digest()
    assert load_config(SMOKE, threads=4, out="elsewhere").digest() == load_config(SMOKE).digest()
    assert load_config(SMOKE, seed=99).digest() != load_config(SMOKE).digest()


def test_paths_override_applies_everywhere():
    cfg = load_config(shipped_config("acceptance.yaml"), paths=5)
    assert cfg.moment_plan().paths == 5
    assert all(cfg.plan(e).paths == 5 for e in cfg.experiments("spatial"))


def test_lemma_tests_default_config(tmp_path):
    assert main(["run-lemma-tests", "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
    run = next(tmp_path.iterdir())
    lines = (run / "lemmas.csv").read_text().splitlines()
    assert lines[0] == "lemma,params,defect,bound,passed"
    assert all(line.endswith(",True") for line in lines[1:])
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["status"] == "ok" and manifest["digest"].startswith(run.name)


def run_all(out, threads):
    codes = []
    for cmd in (["run-lemma-tests"], ["run-convergence"], ["run-meshing"], ["run-moments"]):
        codes.append(main(cmd + ["--config", str(SMOKE), "--out", str(out), "--threads", str(threads)]))
    (run,) = list(out.iterdir())
    return codes, run


def test_outputs_bitwise_reproducible_across_threads(tmp_path):
    codes1, run1 = run_all(tmp_path / "a", 1)
    codes2, run2 = run_all(tmp_path / "b", 3)
    assert codes1 == codes2
    f1, f2 = _files(run1), _files(run2)
    assert set(f1) == {"errors.csv", "rates.csv", "lemmas.csv", "meshing.csv", "moments.csv", "moment_rates.csv"}
    assert f1 == f2
    m1, m2 = (json.loads((r / "manifest.json").read_text()) for r in (run1, run2))
    m1.pop("timestamp"), m2.pop("timestamp")
    assert m1 == m2


def test_errors_csv_schema(tmp_path):
    assert main(["run-convergence", "--axis", "spatial", "--config", str(SMOKE), "--out", str(tmp_path)]) == 0
    (run,) = list(tmp_path.iterdir())
    header, *rows = (run / "errors.csv").read_text().splitlines()
    assert header == "experiment,eps,K_cut,N,M,tau,error,stderr,paths"
    assert len(rows) == 3 and all(r.startswith("spatial_smoke,") for r in rows)
    assert (run / "rates.csv").read_text().startswith("experiment,axis,slope,ci")

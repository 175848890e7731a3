import csv
import json
import os

import pytest

from sparsefactor import cli
from sparsefactor.expcli import ConfigError, cmd_conclab, cmd_geweke, cmd_rates, cmd_testfns, load_manifest, parse_config, parse_config_text
from sparsefactor.expcli.config import EPS_TAGS, eps_n
from sparsefactor.expcli.manifest import csv_text
from sparsefactor.expcli.runner import (
    FIT_COLUMNS,
    GEWEKE_COLUMNS,
    RATES_COLUMNS,
    RATES_FIT_COLUMNS,
    RATES_SUMMARY_COLUMNS,
    TREND_COLUMNS,
    plan_rates,
    select,
)

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, os.pardir, "configs")


def _cfg(**raw):
    return parse_config_text(json.dumps(raw))


def _tiny_rates(tmp_path, **rates):
    base = {"regimes": ["ps"], "n": [30], "p": [8], "k": 1, "s": 2, "replicates": 2, "m_grid": [1.0],
            "chain": {"iterations": 40, "burnin": 20}}
    base.update(rates)
    return _cfg(kind="rates-operator", seed=3, out_dir=str(tmp_path), rates=base)


def _tiny_testfns():
    return _cfg(kind="testfns", seed=4, testfns={"p": 20, "k": 2, "s": 3, "n": [50, 100, 200], "replicates": 100})


def _tiny_conclab():
    return _cfg(kind="conclab", seed=5, conclab={
        "tasks": ["quadform", "ftau", "de-smallball", "frob-prior-conc", "euler"],
        "quadform_replicates": 2000, "de_replicates": 2000, "frob_replicates": 2000,
    })


def _tiny_geweke():
    return _cfg(kind="geweke", seed=6, geweke={"regimes": ["p0", "ps"], "p": 2, "k": 1, "n": 3, "iterations": 200})


def _header(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return tuple(next(csv.reader(fh)))


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def _bytes(path):
    with open(path, "rb") as fh:
        return fh.read()


# ---------------------------------------------------------------- config parsing


def test_minimal_config_gets_defaults():
    cfg = _cfg(kind="rates-operator")
    assert cfg.seed == 0 and cfg.out_dir == "results"
    assert cfg.rates.n == [100, 200, 400, 800] and cfg.rates.p == [200] and cfg.rates.k == 3
    assert cfg.rates.replicates == 10 and cfg.rates.eps_tag == "operator"
    assert cfg.rates.chain.iterations == 4000 and cfg.rates.chain.burnin == 1000


def test_negative_n_names_field_path():
    with pytest.raises(ConfigError, match=r"rates\.n\[1\]"):
        _cfg(kind="rates-operator", rates={"n": [100, -5]})


def test_unknown_eps_tag_lists_allowed():
    with pytest.raises(ConfigError) as exc:
        _cfg(kind="rates-operator", rates={"eps_tag": "spectral"})
    for tag in EPS_TAGS:
        assert tag in str(exc.value)
    with pytest.raises(ConfigError, match="allowed"):
        eps_n("spectral", 100, 10)


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match=r"rates\.chains"):
        _cfg(kind="rates-operator", rates={"chains": {}})
    with pytest.raises(ConfigError, match="bogus"):
        _cfg(kind="conclab", bogus=1)


@pytest.mark.parametrize("raw,match", [
    ({"kind": "rates"}, "kind"),
    ({"kind": "rates-operator", "seed": -1}, "seed"),
    ({"kind": "rates-operator", "rates": {"n": []}}, r"rates\.n"),
    ({"kind": "rates-operator", "rates": {"k": 1.5}}, r"rates\.k"),
    ({"kind": "rates-operator", "rates": {"chain": {"iterations": 10, "burnin": 10}}}, r"rates\.chain"),
    ({"kind": "testfns", "testfns": {"replicates": 50}}, r"testfns\.replicates"),
    ({"kind": "conclab", "conclab": {"tasks": ["nope"]}}, r"conclab\.tasks"),
    ({"kind": "geweke", "geweke": {"regimes": ["horseshoe"]}}, r"geweke\.regimes"),
])
def test_schema_violations(raw, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(json.dumps(raw))


def test_json_syntax_error_reports_line(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{\n  "kind": "conclab",\n  "seed": ,\n}\n')
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(str(path))
    with pytest.raises(ConfigError, match="not found"):
        parse_config(str(tmp_path / "missing.json"))


def test_shipped_configs_validate():
    names = sorted(f for f in os.listdir(CONFIGS) if f.endswith(".json"))
    assert names
    for name in names:
        parse_config(os.path.join(CONFIGS, name))


def test_eps_formulas():
    log200, log100 = 5.298317366548036, 4.605170185988092
    assert eps_n("operator", 100, 200) == pytest.approx((log200**5 / 100) ** 0.5, rel=1e-12)
    assert eps_n("frobenius", 100, 2) == pytest.approx((2**9 * log100**3 / 100) ** 0.5, rel=1e-12)


# ---------------------------------------------------------------- outputs


def test_rates_headers_manifest_and_determinism(tmp_path):
    cfg = _tiny_rates(tmp_path / "a")
    res = cmd_rates(cfg, str(tmp_path / "a"))
    again = cmd_rates(cfg, str(tmp_path / "b"))
    assert res.ok and again.ok
    for name, cols in (("rates_long.csv", RATES_COLUMNS), ("rates_summary.csv", RATES_SUMMARY_COLUMNS), ("rates_fit.csv", RATES_FIT_COLUMNS)):
        assert _header(tmp_path / "a" / name) == cols
        assert _bytes(tmp_path / "a" / name) == _bytes(tmp_path / "b" / name)
    man = load_manifest(tmp_path / "a" / "manifest.json", drop_timestamps=True)
    assert all(t["status"] == "done" for t in man["tasks"].values())
    assert len(man["tasks"]) == 2
    assert sorted(man["outputs"]) == sorted(res.outputs)
    # no orphans: every file in the directory is the manifest or a listed output
    assert set(os.listdir(tmp_path / "a")) == set(man["outputs"]) | {"manifest.json"}
    man_b = load_manifest(tmp_path / "b" / "manifest.json", drop_timestamps=True)
    man_b["config"]["out_dir"] = man["config"]["out_dir"]
    assert man == man_b


def test_degenerate_grid_one_row_per_replicate(tmp_path):
    cfg = _tiny_rates(tmp_path, replicates=3)
    cmd_rates(cfg, str(tmp_path))
    rows = _rows(tmp_path / "rates_long.csv")
    op = [r for r in rows if r["metric"] == "operator"]
    assert sorted(int(r["replicate"]) for r in op) == [0, 1, 2]
    summary = _rows(tmp_path / "rates_summary.csv")
    assert [r["replicates"] for r in summary if r["metric"] == "operator"] == ["3"]


def test_manifest_is_pending_before_tasks_run(tmp_path, monkeypatch):
    from sparsefactor.expcli import runner

    seen = []

    def spy(cfg, task):
        seen.append(load_manifest(tmp_path / "manifest.json")["tasks"][task.task_id]["status"])
        return {"rows": []}

    monkeypatch.setattr(runner, "run_geweke_task", spy)
    cfg = _tiny_geweke()
    runner.cmd_geweke(cfg, str(tmp_path))
    assert seen == ["pending"] * 3
    man = load_manifest(tmp_path / "manifest.json")
    assert all(t["status"] == "done" for t in man["tasks"].values())
    assert man["started"] and man["finished"]


def test_failed_cell_is_recorded_and_others_proceed(tmp_path, monkeypatch):
    from sparsefactor.expcli import runner

    real = runner.run_rates_task

    def flaky(cfg, task):
        if task.args["rep"] == 1:
            raise RuntimeError("boom")
        return real(cfg, task)

    monkeypatch.setattr(runner, "run_rates_task", flaky)
    cfg = _tiny_rates(tmp_path)
    res = runner.cmd_rates(cfg, str(tmp_path))
    assert not res.ok and len(res.failed) == 1 and res.failed[0].endswith("rep=1")
    man = load_manifest(tmp_path / "manifest.json")
    assert "boom" in man["tasks"][res.failed[0]]["error"]
    assert {r["replicate"] for r in _rows(tmp_path / "rates_long.csv")} == {"0"}


def test_testfns_outputs(tmp_path):
    cfg = _tiny_testfns()
    res = cmd_testfns(cfg, str(tmp_path / "a"))
    cmd_testfns(cfg, str(tmp_path / "b"))
    assert res.ok
    assert _header(tmp_path / "a" / "testfns.csv") == ("n", "p", "k", "j", "regime", "type1", "type1_se", "type2", "type2_se", "seed")
    assert _header(tmp_path / "a" / "testfns_trend.csv") == TREND_COLUMNS
    assert len(_rows(tmp_path / "a" / "testfns.csv")) == 6
    for name in res.outputs:
        assert _bytes(tmp_path / "a" / name) == _bytes(tmp_path / "b" / name)


def test_conclab_outputs(tmp_path):
    cfg = _tiny_conclab()
    res = cmd_conclab(cfg, str(tmp_path / "a"))
    cmd_conclab(cfg, str(tmp_path / "b"))
    assert res.ok
    assert _header(tmp_path / "a" / "conclab.csv") == ("lemma", "p", "s", "epsilon_or_t", "estimate", "ci_lo", "ci_hi", "bound", "seed")
    assert _header(tmp_path / "a" / "conclab_fits.csv") == FIT_COLUMNS
    for name in res.outputs:
        assert _bytes(tmp_path / "a" / name) == _bytes(tmp_path / "b" / name)


def test_geweke_outputs_and_cell_filter(tmp_path):
    cfg = _tiny_geweke()
    res = cmd_geweke(cfg, str(tmp_path), cell_filter="geweke/regime=p0/*")
    assert res.ok
    assert _header(tmp_path / "geweke.csv") == GEWEKE_COLUMNS
    rows = _rows(tmp_path / "geweke.csv")
    assert {r["regime"] for r in rows} == {"p0"} and len(rows) == 8


def test_workers_do_not_change_outputs(tmp_path):
    cfg = _tiny_geweke()
    cmd_geweke(cfg, str(tmp_path / "serial"))
    cmd_geweke(cfg, str(tmp_path / "pool"), workers=2)
    assert _bytes(tmp_path / "serial" / "geweke.csv") == _bytes(tmp_path / "pool" / "geweke.csv")


def test_cell_filter_glob():
    cfg = _cfg(kind="rates-operator", rates={"regimes": ["ps", "pl1"], "n": [100, 200], "replicates": 2})
    tasks = plan_rates(cfg)
    assert len(tasks) == 8
    assert len(select(tasks, "rates/regime=pl1/n=200/*")) == 2
    assert select(tasks, None) == tasks


def test_csv_text_is_rfc4180():
    text = csv_text(("a", "b"), [{"a": 'x,"y"', "b": float("nan")}, {"a": 1, "b": 0.1}])
    assert text == 'a,b\r\n"x,""y""",nan\r\n1,0.1\r\n'


# ---------------------------------------------------------------- command line


def _write(tmp_path, raw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_cli_validate_config(tmp_path, capsys):
    assert cli.main(["validate-config", "--config", _write(tmp_path, {"kind": "conclab"})]) == 0
    assert "ok" in capsys.readouterr().out
    assert cli.main(["validate-config", "--config", _write(tmp_path, {"kind": "conclab", "x": 1})]) == 1


def test_cli_kind_mismatch_is_config_error(tmp_path):
    assert cli.main(["rates", "--config", _write(tmp_path, {"kind": "conclab"})]) == 1
    assert cli.main(["geweke", "--config", _write(tmp_path, {"kind": "geweke"}), "--workers", "0"]) == 1
    assert cli.main(["geweke", "--config", _write(tmp_path, {"kind": "geweke"}), "--seed", "-3"]) == 1


def test_cli_success_and_overrides(tmp_path, capsys):
    raw = {"kind": "geweke", "out_dir": "ignored", "geweke": {"regimes": ["p0"], "p": 2, "k": 1, "n": 3, "iterations": 100}}
    out = tmp_path / "run"
    assert cli.main(["geweke", "--config", _write(tmp_path, raw), "--seed", "17", "--out", str(out)]) == 0
    assert str(out / "geweke.csv") in capsys.readouterr().out
    man = load_manifest(out / "manifest.json")
    assert man["seed"] == 17 and man["config"]["out_dir"] == str(out)
    assert {r["seed"] for r in _rows(out / "geweke.csv")} == {"17"}


def test_cli_runtime_failure_exit_code(tmp_path):
    # an unreachable deviation bound makes every truth draw fail
    raw = {"kind": "rates-operator", "rates": {
        "regimes": ["ps"], "n": [20], "p": [30], "k": 2, "s": 3, "replicates": 1,
        "chain": {"iterations": 10, "burnin": 5}, "truth": {"a3_constant": 1e-6, "max_retries": 1},
    }}
    out = tmp_path / "run"
    assert cli.main(["rates", "--config", _write(tmp_path, raw), "--out", str(out)]) == 2
    man = load_manifest(out / "manifest.json")
    assert [t["status"] for t in man["tasks"].values()] == ["failed"]
    assert (out / "rates_long.csv").exists()

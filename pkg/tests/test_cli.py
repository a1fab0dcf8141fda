import hashlib
import json
from pathlib import Path

import jsonschema
import pytest

from flowcast.cli import main

GRID_SCHEMA = {
    "type": "array",
    "items": {
        "type": "object",
        "properties": {
            "pair": {
                "type": "array",
                "items": {"enum": ["BTC", "ETH", "USDT"]},
                "minItems": 2, "maxItems": 2,
            },
            "target": {"enum": ["return", "volatility"]},
            "horizon_hours": {"type": "number"},
            "model": {"enum": ["single", "double"]},
            "beta1": {"type": ["number", "null"]},
            "stars": {"enum": ["", "*", "**", "***"]},
            "sign": {"enum": ["positive", "negative", "insignificant"]},
            "error": {"type": "string"},
        },
        "required": ["pair", "target", "horizon_hours", "model", "beta1",
                     "stars", "sign"],
        "additionalProperties": False,
    },
}


def digest_dir(path: Path) -> dict:
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(path.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = main(["synth", "--seed", "42", "--hours", "400", "--out", str(out)])
    assert code == 0
    return out


def test_synth_writes_dataset(dataset):
    names = {p.name for p in dataset.iterdir()}
    assert names == {"flows.csv", "bars_eth.csv", "bars_btc.csv", "options.csv"}


def test_synth_is_deterministic(dataset, tmp_path):
    again = tmp_path / "again"
    assert main(["synth", "--seed", "42", "--hours", "400", "--out", str(again)]) == 0
    assert digest_dir(dataset) == digest_dir(again)
    other = tmp_path / "other"
    assert main(["synth", "--seed", "43", "--hours", "400", "--out", str(other)]) == 0
    assert digest_dir(dataset) != digest_dir(other)


def test_ingest_check(dataset, capsys):
    code = main(["ingest-check", "--flows", str(dataset / "flows.csv"),
                 "--bars", str(dataset / "bars_eth.csv"),
                 "--options", str(dataset / "options.csv")])
    out = capsys.readouterr().out
    assert code == 0
    assert "flows ETH: 400 rows" in out
    assert "bars: 4800 rows, 0 gap(s)" in out
    assert "options:" in out


def test_ingest_check_requires_input():
    assert main(["ingest-check"]) == 2


def test_regress_full_grid(dataset, tmp_path):
    out = tmp_path / "grid"
    code = main(["regress", "--flows", str(dataset / "flows.csv"),
                 "--bars-eth", str(dataset / "bars_eth.csv"),
                 "--bars-btc", str(dataset / "bars_btc.csv"),
                 "--out", str(out)])
    assert code == 0
    cells = json.loads((out / "grid.json").read_text())
    assert len(cells) == 80
    jsonschema.validate(cells, GRID_SCHEMA)
    tsv = (out / "grid.tsv").read_text()
    assert len(tsv.splitlines()) == 11


def test_regress_daily_weekly_grid(dataset, tmp_path):
    out = tmp_path / "gridw"
    code = main(["regress", "--flows", str(dataset / "flows.csv"),
                 "--bars-eth", str(dataset / "bars_eth.csv"),
                 "--bars-btc", str(dataset / "bars_btc.csv"),
                 "--daily-weekly", "--out", str(out)])
    assert code == 0
    cells = json.loads((out / "grid_daily_weekly.json").read_text())
    assert len(cells) == 16  # 4 pairs x volatility x {24h, 168h} x 2 models
    assert all(c["target"] == "volatility" for c in cells)
    # 400 hours cover only 16 days, so these cells are marked, not fatal
    assert all("error" in c for c in cells)


def test_regress_subset_horizons(dataset, tmp_path):
    out = tmp_path / "grid16"
    code = main(["regress", "--flows", str(dataset / "flows.csv"),
                 "--bars-eth", str(dataset / "bars_eth.csv"),
                 "--bars-btc", str(dataset / "bars_btc.csv"),
                 "--horizons", "1,6", "--out", str(out)])
    assert code == 0
    assert len(json.loads((out / "grid.json").read_text())) == 32


def test_regress_missing_bars_path(dataset, tmp_path, capsys):
    missing = tmp_path / "nope" / "bars.csv"
    code = main(["regress", "--flows", str(dataset / "flows.csv"),
                 "--bars-eth", str(missing),
                 "--out", str(tmp_path / "g")])
    assert code == 2
    err = capsys.readouterr().err
    assert "bars.csv" in err


def test_regress_requires_bars_for_pairs(dataset, tmp_path, capsys):
    code = main(["regress", "--flows", str(dataset / "flows.csv"),
                 "--bars-eth", str(dataset / "bars_eth.csv"),
                 "--out", str(tmp_path / "g")])
    assert code == 2
    assert "BTC" in capsys.readouterr().err


def test_regress_is_idempotent(dataset, tmp_path):
    out = tmp_path / "grid_rerun"
    args = ["regress", "--flows", str(dataset / "flows.csv"),
            "--bars-eth", str(dataset / "bars_eth.csv"),
            "--bars-btc", str(dataset / "bars_btc.csv"),
            "--pairs", "USDT:ETH,ETH:ETH", "--out", str(out)]
    assert main(args) == 0
    first = digest_dir(out)
    assert main(args) == 0
    assert digest_dir(out) == first


def test_report_rerenders_grid(dataset, tmp_path):
    grid_dir = tmp_path / "grid"
    assert main(["regress", "--flows", str(dataset / "flows.csv"),
                 "--bars-eth", str(dataset / "bars_eth.csv"),
                 "--bars-btc", str(dataset / "bars_btc.csv"),
                 "--out", str(grid_dir)]) == 0
    render = tmp_path / "render"
    assert main(["report", "--grid", str(grid_dir / "grid.json"),
                 "--out", str(render)]) == 0
    assert (render / "grid.tsv").read_bytes() == (grid_dir / "grid.tsv").read_bytes()


def test_events_command(dataset, tmp_path, capsys):
    out = tmp_path / "events"
    code = main(["events", "--flows", str(dataset / "flows.csv"),
                 "--asset", "ETH", "--k", "10", "--out", str(out)])
    assert code == 0
    lines = (out / "events.csv").read_text().strip().split("\n")
    assert len(lines) == 11  # header + 10 hits
    assert "threshold percentile" in capsys.readouterr().out


def test_events_with_windows(dataset, tmp_path):
    out = tmp_path / "eventsw"
    code = main(["events", "--flows", str(dataset / "flows.csv"),
                 "--asset", "ETH", "--k", "3",
                 "--bars", str(dataset / "bars_eth.csv"),
                 "--window-pre-hours", "2", "--window-post-hours", "2",
                 "--out", str(out)])
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert "events.csv" in names
    assert any(n.startswith("window_") and n.endswith("_flows.csv") for n in names)


def test_backtest_command(dataset, tmp_path):
    out = tmp_path / "bt"
    code = main(["backtest", "--flows", str(dataset / "flows.csv"),
                 "--options", str(dataset / "options.csv"),
                 "--asset", "ETH", "--pct", "0.10", "--out", str(out)])
    assert code == 0
    lines = (out / "report.tsv").read_text().strip().split("\n")
    header = lines[0].split("\t")
    assert header == ["bucket", "win_rate", "total_trades", "wtl",
                      "r_avg_net", "r_total_net"]
    rows = {ln.split("\t")[0]: ln.split("\t") for ln in lines[1:]}
    top = rows["top10%,original"]
    bottom = rows["bottom10%,original"]
    assert float(top[1]) > float(bottom[1])  # planted separation


def test_backtest_is_idempotent(dataset, tmp_path):
    out = tmp_path / "bt_rerun"
    args = ["backtest", "--flows", str(dataset / "flows.csv"),
            "--options", str(dataset / "options.csv"), "--out", str(out)]
    assert main(args) == 0
    first = digest_dir(out)
    assert main(args) == 0
    assert digest_dir(out) == first


def test_commands_do_not_mutate_inputs(dataset, tmp_path):
    before = digest_dir(dataset)
    main(["regress", "--flows", str(dataset / "flows.csv"),
          "--bars-eth", str(dataset / "bars_eth.csv"),
          "--pairs", "ETH:ETH", "--out", str(tmp_path / "g2")])
    main(["events", "--flows", str(dataset / "flows.csv"),
          "--out", str(tmp_path / "e2")])
    assert digest_dir(dataset) == before


def test_config_file_supplies_defaults(dataset, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"events.flows = {dataset / 'flows.csv'}\n"
                   "events.k = 4\n"
                   "# comment line\n")
    out = tmp_path / "events_cfg"
    code = main(["--config", str(cfg), "events", "--out", str(out)])
    assert code == 0
    assert len((out / "events.csv").read_text().strip().split("\n")) == 5
    # explicit flag beats the config value
    out2 = tmp_path / "events_cfg2"
    code = main(["--config", str(cfg), "events", "--k", "2", "--out", str(out2)])
    assert code == 0
    assert len((out2 / "events.csv").read_text().strip().split("\n")) == 3


def test_validation_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("timestamp,asset,inflow_usd,outflow_usd\n"
                   "2022-01-01T00:00:00Z,ETH,-5,0\n")
    code = main(["events", "--flows", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2

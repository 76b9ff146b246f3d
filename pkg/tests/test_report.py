import csv
import io
import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subslot_arb.cli import main
from subslot_arb.config import ConfigError, parse_config
from subslot_arb.report import (
    DEFAULT_WEIGHTS,
    HEADER,
    DeltaReport,
    MatrixConfig,
    MetricDeltas,
    WeightVector,
    aggregate_weighted,
    fmt_pct,
    matrix_keys,
    percent_change,
    raw_csv,
    render_tables,
    run_matrix,
)
from subslot_arb.sim import AgentMetrics, RunMetrics

from pathlib import Path

DATA = Path(__file__).parent / "data"


def txn_only(*xs):
    return [MetricDeltas(0.0, 0.0, 0.0, x) for x in xs]


def test_weighted_transaction_examples():
    # 0.037*a + 0.331*b + 0.632*c, evaluated by hand
    assert aggregate_weighted(txn_only(294, 308, 420)).txns == pytest.approx(378.266, abs=1e-9)
    assert aggregate_weighted(txn_only(663, 345, 432)).txns == pytest.approx(411.750, abs=1e-9)
    assert aggregate_weighted(txn_only(100, 100, 100)).txns == pytest.approx(100.0, abs=1e-12)


def test_volume_weights_apply_to_everything_but_txns():
    d = [MetricDeltas(1.0, 10.0, 100.0, 0.0), MetricDeltas(2.0, 20.0, 200.0, 0.0), MetricDeltas(3.0, 30.0, 300.0, 0.0)]
    out = aggregate_weighted(d)
    assert out.pnl == pytest.approx(0.286 + 2 * 0.503 + 3 * 0.211)
    assert out.eth_volume == pytest.approx(10 * out.pnl)
    assert out.usdc_volume == pytest.approx(100 * out.pnl)


@pytest.mark.parametrize("txn", [(0.5, 0.5, 0.1), (0.5, 0.5), (1.2, -0.1, -0.1)])
def test_bad_weights_rejected(txn):
    with pytest.raises(ValueError):
        WeightVector(txn_weights=txn)


def test_wrong_pool_count_rejected():
    with pytest.raises(ValueError):
        aggregate_weighted(txn_only(1, 2))


finite = st.floats(-1e4, 1e4)


@settings(max_examples=200, deadline=None)
@given(st.lists(finite, min_size=3, max_size=3), st.lists(finite, min_size=3, max_size=3), finite)
def test_aggregation_is_linear(a, b, c):
    da, db = txn_only(*a), txn_only(*b)
    mixed = txn_only(*(x + c * y for x, y in zip(a, b)))
    lhs = aggregate_weighted(mixed).txns
    rhs = aggregate_weighted(da).txns + c * aggregate_weighted(db).txns
    assert lhs == pytest.approx(rhs, abs=1e-6 * (1 + abs(lhs)))


@settings(max_examples=100, deadline=None)
@given(st.permutations([0, 1, 2]), st.lists(finite, min_size=3, max_size=3))
def test_aggregation_follows_its_tiers_when_permuted(perm, vals):
    w = DEFAULT_WEIGHTS
    permuted = WeightVector(tuple(w.txn_weights[i] for i in perm), tuple(w.volume_weights[i] for i in perm),
                            tuple(w.fees[i] for i in perm))
    base = aggregate_weighted(txn_only(*vals)).txns
    moved = aggregate_weighted(txn_only(*(vals[i] for i in perm)), permuted).txns
    assert moved == pytest.approx(base, abs=1e-9 * (1 + abs(base)))


def test_percent_change():
    assert percent_change(3.0, 1.0) == 200.0
    assert percent_change(0.5, 1.0) == -50.0
    assert math.isnan(percent_change(1.0, 0.0))
    assert fmt_pct(112.6) == "+113%" and fmt_pct(-4.2) == "-4%" and fmt_pct(math.nan) == "n/a"


def test_empty_report_cannot_render():
    with pytest.raises(ValueError):
        render_tables(DeltaReport(DEFAULT_WEIGHTS))


SMALL = MatrixConfig(n_slots=40, seeds=(0, 1))


@pytest.fixture(scope="module")
def small_report():
    return run_matrix(SMALL)


def test_matrix_size():
    assert len(matrix_keys(SMALL)) == 2 * 48
    assert len(matrix_keys(SMALL, robustness=True)) == 2 * (48 + 8 * 3 * 2)


def test_report_tables(small_report):
    text, table_csv = render_tables(small_report)
    assert text.count("pool: 12 s -> 1 s") == 6
    assert not small_report.robustness and "sensitivity" not in text
    assert "\t" not in text and "Configuration" in text
    rows = list(csv.reader(io.StringIO(table_csv)))
    assert tuple(rows[0][3:]) == HEADER
    assert sum(r[0] == "pool" for r in rows) == 24
    assert sum(r[0] == "combined" for r in rows) == 8
    for r in rows[1:]:
        for cell in r[4:]:
            assert cell == "n/a" or (cell.endswith("%") and cell[0] in "+-")


def test_report_is_deterministic(small_report):
    again = run_matrix(SMALL)
    assert render_tables(again) == render_tables(small_report)
    assert raw_csv(again) == raw_csv(small_report)


def test_raw_rows_round_trip_floats(small_report):
    rows = list(csv.DictReader(io.StringIO(raw_csv(small_report))))
    assert len(rows) == 96
    assert {float(r["pnl"]) for r in rows} == {r["pnl"] for r in small_report.raw}


def test_parallel_matches_serial(small_report):
    from dataclasses import replace
    par = run_matrix(replace(SMALL, workers=2))
    assert render_tables(par) == render_tables(small_report)


def test_robustness_table_appears():
    rep = run_matrix(MatrixConfig(n_slots=30, agent_models=("risk_averse",)), robustness=True)
    assert len(rep.robustness) == 9
    text, _ = render_tables(rep)
    assert "sensitivity to alpha and lambda" in text


def test_seed_sums_not_ratio_means():
    slow = [RunMetrics(agent1=AgentMetrics(txn_count=1)), RunMetrics(agent1=AgentMetrics(txn_count=9))]
    fast = [RunMetrics(agent1=AgentMetrics(txn_count=2)), RunMetrics(agent1=AgentMetrics(txn_count=10))]
    from subslot_arb.report import deltas_between, sum_metrics
    assert deltas_between(sum_metrics(fast), sum_metrics(slow)).txns == pytest.approx(20.0)


CFG = """
[market]
sigma = 2e-4
[agent]
alpha = 0.5
[matrix]
seeds = 3
seed_start = 10
n_slots = 80
fee_tiers = 0.003, 0.0005
agent_models = simple
[weights]
txn = 0.25, 0.75
volume = 0.5, 0.5
[output]
dir = results
event_logs = yes
"""


def test_parse_config(tmp_path):
    mc = parse_config(CFG, tmp_path)
    assert mc.market.sigma == 2e-4 and mc.params.alpha == 0.5
    assert mc.seeds == (10, 11, 12) and mc.n_slots == 80
    assert mc.fee_tiers == (0.003, 0.0005) and mc.agent_models == ("simple",)
    assert mc.weights.txn_weights == (0.25, 0.75)
    assert mc.out_dir == str(tmp_path / "results") and mc.write_event_logs


@pytest.mark.parametrize("text", [
    "[bogus]\nx = 1\n",
    "[market]\nsigmaa = 1\n",
    "[market]\nsigma = fast\n",
    "[matrix]\nagent_models = greedy\n",
    "[matrix]\nspeed = 2\n",
    "[weights]\ntxn = 0.5, 0.5, 0.5\n",
    "[agent]\nalpha = 1.5\n",
    "[matrix]\nfee_tiers = 0.003, 0.0005\n",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_cli_simulate(tmp_path, capsys):
    cfg = tmp_path / "run.ini"
    cfg.write_text("[matrix]\nn_slots = 30\n[output]\ndir = out\nevent_logs = true\n")
    assert main(["simulate", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "tables.txt").read_text() == capsys.readouterr().out
    assert (out / "tables.csv").exists() and (out / "runs.csv").exists()
    assert len(list((out / "events").glob("*.ndjson"))) == 48


def test_cli_classify_and_calibrate(tmp_path, capsys):
    from subslot_arb.market_data import write_ticks
    from subslot_arb.price_engine import synth_cex

    swaps = tmp_path / "swaps.csv"
    swaps.write_text("".join(line.rsplit(",", 1)[0] + "\n"
                             for line in (DATA / "swaps_corpus.csv").read_text().splitlines()))
    assert main(["classify", "--swaps", str(swaps), "--ticks", str(DATA / "ticks3.csv"),
                 "--out", str(tmp_path / "cls")]) == 0
    summary = json.loads((tmp_path / "cls" / "summary.json").read_text())
    assert summary["arbitrage"] + summary["noise"] + summary["rejected"] == 12
    assert (tmp_path / "cls" / "noise_distribution.json").exists()

    write_ticks(tmp_path / "t.csv", synth_cex(0, 2000, 1e-4, 2e-6, 3000.0))
    assert main(["calibrate", "--ticks", str(tmp_path / "t.csv"), "--out", str(tmp_path / "cal.json")]) == 0
    assert json.loads((tmp_path / "cal.json").read_text())["sigma"] > 0


def test_cli_reports_errors(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[nope]\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert capsys.readouterr().err.startswith("error:")
    assert main(["calibrate", "--ticks", str(tmp_path / "missing.csv"), "--out", str(tmp_path / "c.json")]) == 2

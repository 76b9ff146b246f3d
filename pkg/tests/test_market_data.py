import csv
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subslot_arb.market_data import (
    ARBITRAGE,
    NOISE,
    CalibrationConstants,
    DataError,
    DexSeries,
    NoiseDistribution,
    SwapEvent,
    TickSeries,
    calibrate,
    classify_swaps,
    estimate_noise_distribution,
    load_dex_prices,
    load_swaps,
    load_ticks,
    round_bp,
    write_dex_prices,
    write_labeled_swaps,
    write_ticks,
)
from subslot_arb.price_engine import synth_cex, synth_dex_reference

DATA = Path(__file__).parent / "data"


def flat_ticks(mid=3000.0, n=1):
    ts = np.arange(n, dtype=np.int64) * 1000
    return TickSeries(ts, np.full(n, mid), np.full(n, mid))


def read_corpus():
    swaps, expected = [], []
    with open(DATA / "swaps_corpus.csv") as fh:
        for row in csv.DictReader(fh):
            swaps.append(SwapEvent(int(row["block_number"]), int(row["index_in_block"]),
                                   float(row["pre_price"]), float(row["post_price"]),
                                   float(row["base_delta"]), float(row["quote_delta"]), float(row["pool_fee"])))
            expected.append(row["expected"])
    return swaps, expected


def brute_force_label(s, ref):
    conds = [
        s.index_in_block == 0,
        abs(s.pre_price - ref) / ref > s.pool_fee,
        abs(s.post_price - ref) < abs(s.pre_price - ref),
        abs(s.post_price - ref) / ref >= s.pool_fee * (1 - 1e-12),
    ]
    return ARBITRAGE if all(conds) else NOISE


def test_corpus_labels_match_hand_labels_and_brute_force():
    swaps, expected = read_corpus()
    result = classify_swaps(swaps, flat_ticks())
    labels = [lab for _, lab in result.labeled]
    assert labels == expected
    assert labels == [brute_force_label(s, 3000.0) for s in swaps]
    assert not result.rejected


def test_classification_is_order_independent(rng):
    swaps, expected = read_corpus()
    shuffled = [swaps[i] for i in rng.permutation(len(swaps))]
    a = classify_swaps(swaps, flat_ticks())
    b = classify_swaps(shuffled, flat_ticks())
    assert a.labeled == b.labeled


def test_arbitrage_implies_first_in_block():
    swaps, _ = read_corpus()
    for s, lab in classify_swaps(swaps, flat_ticks()).labeled:
        if lab == ARBITRAGE:
            assert s.index_in_block == 0


def test_missing_quote_is_rejected_not_dropped():
    swaps, _ = read_corpus()
    ticks = TickSeries(np.array([105_500]), np.array([3000.0]), np.array([3000.0]))
    result = classify_swaps(swaps, ticks, block_times={s.block_number: 1000 * s.block_number for s in swaps})
    assert len(result.labeled) + len(result.rejected) == len(swaps)
    assert [s.block_number for s, _ in result.rejected] == list(range(100, 106))
    assert "no CEX quote" in result.rejected[0][1]


def test_reference_is_last_quote_at_or_before_block():
    ticks = TickSeries(np.array([0, 12_000]), np.array([3000.0, 2950.0]), np.array([3000.0, 2950.0]))
    s = SwapEvent(1, 0, 2988.0, 2991.0, 1.0, -2990.0, 0.003, block_timestamp_ms=11_999)
    assert classify_swaps([s], ticks).labeled[0][1] == ARBITRAGE
    s = SwapEvent(1, 0, 2988.0, 2991.0, 1.0, -2990.0, 0.003, block_timestamp_ms=12_000)
    assert classify_swaps([s], ticks).labeled[0][1] == NOISE


def test_noise_counts_include_empty_blocks():
    swaps = [
        SwapEvent(1, 0, 3000.0, 3000.3, -1, 1, 0.003),
        SwapEvent(1, 1, 3000.0, 3000.3, -1, 1, 0.003),
        SwapEvent(2, 0, 3000.0, 3000.3, -1, 1, 0.003),
        SwapEvent(2, 1, 3000.0, 3000.3, -1, 1, 0.003),
    ]
    labeled = [(s, NOISE) for s in swaps] + [(SwapEvent(0, 0, 2988.0, 2991.0, 1, -1, 0.003), ARBITRAGE)]
    dist = estimate_noise_distribution(labeled)
    assert dist.count_pmf == pytest.approx({0: 1 / 3, 2: 2 / 3})


def test_impacts_round_half_away_from_zero():
    swaps = [SwapEvent(0, 0, 1000.0, 1000.0 * (1 + 4.4e-4), -1, 1, 0.003),
             SwapEvent(0, 1, 1000.0, 1000.0 * (1 - 3.6e-4), 1, -1, 0.003)]
    dist = estimate_noise_distribution([(s, NOISE) for s in swaps])
    assert dist.impact_pmf == pytest.approx({4: 0.5, -4: 0.5})
    assert round_bp(2.5) == 3 and round_bp(-2.5) == -3 and round_bp(-0.4) == 0


def test_outlier_impacts_excluded():
    swaps = [SwapEvent(0, 0, 1000.0, 1001.0, -1, 1, 0.003), SwapEvent(0, 1, 1000.0, 1003.5, -1, 1, 0.003)]
    dist = estimate_noise_distribution([(s, NOISE) for s in swaps])
    assert dist.impact_pmf == pytest.approx({10: 1.0})


def test_no_noise_gives_empty_marker():
    dist = estimate_noise_distribution([(SwapEvent(0, 0, 2988.0, 2991.0, 1, -1, 0.003), ARBITRAGE)])
    assert dist.is_empty
    with pytest.raises(DataError):
        estimate_noise_distribution([])


def test_noise_distribution_json_round_trip(tmp_path):
    dist = NoiseDistribution({0: 0.5, 1: 0.25, 3: 0.25}, {-2: 0.5, 7: 0.5})
    dist.save(tmp_path / "d.json")
    assert NoiseDistribution.load(tmp_path / "d.json") == dist
    with pytest.raises(DataError):
        NoiseDistribution({0: 0.5}, {})
    with pytest.raises(DataError):
        NoiseDistribution({0: 1.0}, {31: 1.0})


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 20), st.floats(-40, 40)), min_size=1, max_size=60))
def test_estimated_pmfs_sum_to_one(trades):
    labeled = [(SwapEvent(b, i, 1000.0, 1000.0 * (1 + bp * 1e-4), -1, 1, 0.003), NOISE) for i, (b, bp) in enumerate(trades)]
    dist = estimate_noise_distribution(labeled)
    assert abs(math.fsum(dist.count_pmf.values()) - 1) <= 1e-12
    if not dist.is_empty:
        assert abs(math.fsum(dist.impact_pmf.values()) - 1) <= 1e-12
        assert all(abs(k) <= 30 for k in dist.impact_pmf)


def test_calibrate_degenerate_series():
    cal = calibrate(flat_ticks(3000.0, 10))
    assert cal.sigma == 0 and cal.beta_halfspread == 0
    ticks = TickSeries(np.arange(10) * 1000, np.full(10, 2997.0), np.full(10, 3003.0))
    assert calibrate(ticks).beta_halfspread == pytest.approx(0.001, rel=1e-12)
    with pytest.raises(DataError):
        calibrate(flat_ticks(3000.0, 1))


def test_calibrate_recovers_generator_parameters():
    ticks = synth_cex(3, 100_001, 2e-4, 5e-5, 3000.0)
    cal = calibrate(ticks)
    assert cal.sigma == pytest.approx(2e-4, rel=0.05)
    assert cal.beta_halfspread == pytest.approx(5e-5, rel=0.05)


def test_calibrate_basis_moments_match_direct_computation():
    ticks = synth_cex(4, 12 * 500 + 1, 1e-4, 0.0, 3000.0)
    dex = synth_dex_reference(4, ticks)
    cal = calibrate(ticks, dex)
    eta = dex.price[::12] - ticks.mid[::12]
    eta = eta - eta.mean()
    rho = float(np.sum(eta[1:] * eta[:-1]) / np.sum(eta * eta))
    assert cal.basis_std == pytest.approx(float(np.sqrt(np.mean(eta ** 2))), rel=1e-12)
    assert cal.basis_persistence == pytest.approx(rho, rel=1e-12)
    assert 0 < cal.basis_persistence < 1


def test_calibration_file_round_trip(tmp_path):
    cal = CalibrationConstants(1e-4, 2e-6, 1.5, 0.8)
    cal.save(tmp_path / "c.json")
    assert CalibrationConstants.load(tmp_path / "c.json") == cal
    with pytest.raises(DataError):
        CalibrationConstants(1e-4, 2e-6, 1.5, 1.0)


def test_to_grid_carries_last_observation_forward():
    ticks = TickSeries(np.array([0, 2500]), np.array([1.0, 2.0]), np.array([1.0, 2.0]))
    grid = ticks.to_grid(1000)
    assert list(grid.timestamp_ms) == [0, 1000, 2000]
    assert list(grid.bid) == [1.0, 1.0, 1.0]
    grid = ticks.to_grid(1000, end_ms=3000)
    assert list(grid.bid) == [1.0, 1.0, 1.0, 2.0]


def test_load_ticks_round_trip(tmp_path):
    ticks = load_ticks(DATA / "ticks3.csv")
    assert list(ticks.timestamp_ms) == [1000, 2000, 3000]
    assert list(ticks.bid) == [2999.5, 2999.0, 3000.25]
    assert list(ticks.ask) == [3000.5, 3001.0, 3000.75]
    write_ticks(tmp_path / "t.csv", ticks)
    again = load_ticks(tmp_path / "t.csv")
    assert np.array_equal(again.bid, ticks.bid) and np.array_equal(again.timestamp_ms, ticks.timestamp_ms)


def test_header_only_file_is_empty(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp_ms,bid,ask\n")
    assert len(load_ticks(p)) == 0


def test_loader_errors_name_line_and_field(tmp_path):
    p = tmp_path / "t.csv"
    p.write_text("timestamp_ms,bid,ask\n1000,3000,3001\n2000,3002,3001\n")
    with pytest.raises(DataError, match="line 3"):
        load_ticks(p)
    p.write_text("timestamp_ms,bid,ask\n1000,3000,abc\n")
    with pytest.raises(DataError, match=r"line 2.*ask"):
        load_ticks(p)
    p.write_text("timestamp_ms,bid,ask\n2000,3000,3001\n1000,3000,3001\n")
    with pytest.raises(DataError, match="line 3"):
        load_ticks(p)
    p.write_text("time,bid,ask\n")
    with pytest.raises(DataError, match="header"):
        load_ticks(p)


def test_load_swaps_and_labeled_export(tmp_path):
    swaps, expected = read_corpus()
    p = tmp_path / "s.csv"
    with open(p, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["block_number", "index_in_block", "pre_price", "post_price", "base_delta", "quote_delta", "pool_fee"])
        for s in swaps:
            w.writerow([s.block_number, s.index_in_block, s.pre_price, s.post_price, s.base_delta, s.quote_delta, s.pool_fee])
    loaded = load_swaps(p)
    assert loaded == swaps
    out = tmp_path / "labeled.csv"
    write_labeled_swaps(out, classify_swaps(loaded, flat_ticks()))
    with open(out) as fh:
        assert [r["label"] for r in csv.DictReader(fh)] == expected


def test_swap_invariants():
    with pytest.raises(DataError):
        SwapEvent(0, 0, 3000.0, 3001.0, 1.0, 1.0, 0.003)
    with pytest.raises(DataError):
        SwapEvent(0, 0, -1.0, 3001.0, 1.0, -1.0, 0.003)


def test_dex_series_round_trip(tmp_path):
    dex = DexSeries(np.array([0, 1000, 2000]), np.array([1.0, 2.0, 3.0]))
    write_dex_prices(tmp_path / "d.csv", dex)
    again = load_dex_prices(tmp_path / "d.csv")
    assert np.array_equal(again.price, dex.price)
    assert list(again.values_at(np.array([500, 1000, 2500]))) == [1.0, 2.0, 3.0]

import csv
import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from vvma.costmodel import (ClockParams, MatmulShape, aggregate, bundled_shapes_path,
                            clocks_baseline, clocks_vvma, flops, load_shapes, params_baseline,
                            params_vvma, parse_shapes, report_csv, shape_report)

CP = ClockParams(k=32, t=1)
SQ = MatmulShape(1024, 1024)


class TestClocks:
    def test_baseline_1024(self):
        assert clocks_baseline(SQ, CP) == 1024 * 97 == 99_328

    def test_vvma_1024(self):
        assert clocks_vvma(SQ, CP) == 96 + 1024 == 1_120

    def test_speedup_1024(self):
        assert shape_report(SQ, CP).speedup == pytest.approx(88.686, abs=1e-3)

    @pytest.mark.parametrize("k", [1, 4, 32])
    def test_single_block(self, k):
        s, cp = MatmulShape(k, k), ClockParams(k, 1)
        assert clocks_baseline(s, cp) == clocks_vvma(s, cp) == 3 * k + 1

    def test_baseline_amortizes_to_blocks(self):
        for t in (10**3, 10**6):
            per_vec = clocks_baseline(SQ, ClockParams(32, t)) / t
            assert per_vec == pytest.approx(1024 * (1 + 96 / t))
        assert clocks_baseline(SQ, ClockParams(32, 10**9)) / 10**9 == pytest.approx(1024, rel=1e-6)

    def test_non_divisible_uses_ceiling_blocks(self):
        s = MatmulShape(33, 65)
        assert s.blocks(32) == 2 * 3
        assert clocks_baseline(s, CP) == 6 * 97

    def test_dense_shape_costs_baseline(self):
        s = MatmulShape(7709, 512, vvma=False)
        assert clocks_vvma(s, CP) == clocks_baseline(s, CP)
        assert flops(s, CP, "vvma") == flops(s, CP, "baseline")
        assert params_vvma(s, 32) == params_baseline(s)

    @settings(max_examples=100, deadline=None)
    @given(m=st.integers(1, 3000), n=st.integers(1, 3000), k=st.integers(1, 128),
           t=st.integers(1, 64), rep=st.integers(1, 30))
    def test_vvma_never_slower(self, m, n, k, t, rep):
        s, cp = MatmulShape(m, n, rep), ClockParams(k, t)
        assert clocks_vvma(s, cp) <= clocks_baseline(s, cp)

    def test_invalid(self):
        with pytest.raises(ValueError):
            ClockParams(0, 1)
        with pytest.raises(ValueError):
            ClockParams(4, 0)
        with pytest.raises(ValueError):
            MatmulShape(0, 4)


class TestFlops:
    def test_baseline(self):
        assert flops(SQ, CP, "baseline") == 2_097_152

    def test_vvma(self):
        assert flops(SQ, CP, "vvma") == 2_097_152 + 32_768 == 2_129_920

    def test_repeats_linear(self):
        s = MatmulShape(1024, 1024, repeats=25)
        assert flops(s, CP, "baseline") == 25 * 2_097_152
        assert flops(s, CP, "vvma") == 25 * 2_129_920
        assert clocks_baseline(s, CP) == 25 * 99_328

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            flops(SQ, CP, "turbo")


class TestParams:
    def test_counts(self):
        assert params_baseline(SQ) == 1024 * 1024
        assert params_vvma(SQ, 32) == 1024 + 1024 * 32


class TestAggregate:
    def test_singleton(self):
        assert aggregate([SQ], CP) == shape_report(SQ, CP)

    def test_additive(self):
        one, two = shape_report(SQ, CP), aggregate([SQ, SQ], CP)
        assert two.clocks_baseline == 2 * one.clocks_baseline
        assert two.clocks_vvma == 2 * one.clocks_vvma
        assert two.flops_vvma == 2 * one.flops_vvma
        assert two.params_vvma == 2 * one.params_vvma

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate([], CP)

    def test_four_layer_lstm_all_shared(self):
        # 4 layers, gates 2n x n, 25 steps, every matrix in shared form: the
        # closed forms give far more than the 3-5x band because nothing stays
        # dense; the band needs a dense share as in the bundled file
        n = 512
        model = [MatmulShape(2 * n, n, 25) for _ in range(4)]
        rep = aggregate(model, CP)
        assert rep.clocks_baseline == 4 * 25 * 512 * 97
        assert rep.clocks_vvma == 4 * (96 + 25 * 512)
        assert rep.speedup == pytest.approx(96.278, abs=1e-3)

    def test_bundled_band(self):
        model = load_shapes(bundled_shapes_path())
        rep = aggregate(model, CP)
        assert 3 <= rep.speedup <= 5
        assert rep.clocks_baseline == 31_699_600 and rep.clocks_vvma == 9_583_024


class TestParsing:
    def test_parse(self):
        doc = [{"name": "a", "m": 4, "n": 8, "repeats": 3}, {"m": 2, "n": 2, "vvma": False}]
        a, b = parse_shapes(doc)
        assert a == MatmulShape(4, 8, 3, "a")
        assert b.repeats == 1 and b.name == "shape1" and not b.vvma

    @pytest.mark.parametrize("doc", [
        {"m": 1},
        [{"m": 4}],
        [{"m": 4, "n": "8"}],
        [{"m": 4, "n": 8, "repeats": 0}],
        [{"m": 4, "n": 8, "vvma": "yes"}],
        [3],
        [{"m": True, "n": 2}],
    ])
    def test_malformed(self, doc):
        with pytest.raises(ValueError):
            parse_shapes(doc)

    def test_invalid_json_file(self, tmp_path):
        f = tmp_path / "bad.json"
        f.write_text("{not json")
        with pytest.raises(ValueError):
            load_shapes(f)

    def test_report_csv(self):
        model = [MatmulShape(64, 64, 2, "x"), MatmulShape(32, 96, 1, "y")]
        rows = list(csv.DictReader(io.StringIO(report_csv(model, CP))))
        assert [r["name"] for r in rows] == ["x", "y", "TOTAL"]
        tot = aggregate(model, CP)
        assert int(rows[-1]["clocks_baseline"]) == tot.clocks_baseline
        assert int(rows[0]["clocks_vvma"]) == 96 + 2 * 4

    def test_report_dict(self):
        d = shape_report(SQ, CP).to_dict()
        assert d["clocks_baseline"] == 99_328 and d["speedup"] == pytest.approx(99_328 / 1_120)
        json.dumps(d)

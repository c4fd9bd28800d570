import csv

import numpy as np
import pytest

from csilab.codebook import CodebookSet, generate_rvq
from csilab.config import Mode, parse_config
from csilab.errors import InvalidInputError, UnknownEnvironmentError
from csilab.lab import (REPORT_COLUMNS, EvalReport, emit_report, evaluate, pipelines_for, read_report,
                        select_codebook, signaling_bytes)
from csilab.sysval import SimilarityStats, SumRatePoint


def _report(bits, framework="SSLCF", mode="SS", pipeline="conventional", snrs=(0.0, 20.0)):
    r = EvalReport(framework, mode, 1, pipeline, "rvq", "rvq", bits,
                   SimilarityStats(0.1 + bits / 100, 0.2, 1 / 3, 10), config_digest="d", seed=4)
    r.sumrate = [SumRatePoint(s, 2.0 + s / 7, 50) for s in snrs]
    r.sumrate_median = [1.0 + s for s in snrs]
    r.sumrate_p5 = [0.1 * s for s in snrs]
    return r


class TestSelect:
    def test_lookup(self):
        a, b = generate_rvq(3, 4, 0), generate_rvq(3, 4, 1)
        assert select_codebook(CodebookSet({1: a, 2: b}), 2) is b
        assert select_codebook(CodebookSet({5: a}), 5) is a

    def test_unknown(self):
        with pytest.raises(UnknownEnvironmentError):
            select_codebook(CodebookSet({1: generate_rvq(3, 4, 0)}), 3)
        with pytest.raises(KeyError):
            select_codebook(CodebookSet({1: generate_rvq(3, 4, 0)}), 3)


def test_signaling_bytes():
    assert signaling_bytes(8, 32) == 256 * 32 * 8


class TestReport:
    def test_single_report(self, tmp_path):
        path = emit_report([_report(4)], tmp_path / "r.csv")
        lines = path.read_text().splitlines()
        meta = [ln for ln in lines if ln.startswith("#")]
        body = [ln for ln in lines if not ln.startswith("#")]
        assert any("config_digest: d" in ln for ln in meta)
        assert body[0] == ",".join(REPORT_COLUMNS)
        assert len(body) == 1 + 1 + 2  # header, cosine row, two SNR rows

    def test_sorted_and_exact(self, tmp_path):
        reps = [_report(8, snrs=(20.0, 0.0)), _report(4, mode="DS"), _report(4)]
        path = emit_report(reps, tmp_path / "r.csv")
        rows = read_report(path)
        keys = [(r["framework"], r["mode"], r["bits"], r["snr_db"] is not None, r["snr_db"] or 0) for r in rows]
        assert keys == sorted(keys)
        cos = [r for r in rows if r["metric"] == "cosine" and r["bits"] == 8][0]
        assert cos["mean"] == 0.1 + 8 / 100 and cos["p5"] == 1 / 3
        sr = [r for r in rows if r["metric"] == "sum_rate" and r["bits"] == 8 and r["snr_db"] == 20.0][0]
        assert sr["mean"] == 2.0 + 20.0 / 7

    def test_generic_reader(self, tmp_path):
        path = emit_report([_report(4)], tmp_path / "r.csv")
        with open(path) as fh:
            rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
        assert float(rows[0]["mean"]) == 0.1 + 4 / 100

    def test_empty_and_overwrite(self, tmp_path):
        with pytest.raises(InvalidInputError):
            emit_report([], tmp_path / "r.csv")
        emit_report([_report(4)], tmp_path / "r.csv")
        with pytest.raises(FileExistsError):
            emit_report([_report(4)], tmp_path / "r.csv")


class TestPipelines:
    def test_ss_and_ds_pairs(self):
        rvq, enh, orc = generate_rvq(3, 4, 0), generate_rvq(3, 4, 1), generate_rvq(3, 4, 2)
        ss = {p.name: p for p in pipelines_for(Mode.SS, rvq, enh, orc, perfect=True)}
        assert ss["enhanced-ss"].ue is rvq and ss["enhanced-ss"].bs is enh
        assert ss["oracle-ss"].ue is rvq and ss["perfect-csi"].ue is None
        ds = {p.name: p for p in pipelines_for(Mode.DS, rvq, enh, orc)}
        assert ds["enhanced-ds"].ue is enh and ds["enhanced-ds"].bs is enh
        assert ds["oracle-ds"].ue is orc and "perfect-csi" not in ds

    def test_evaluate(self, small_scenario):
        from csilab.chansim import generate_dataset
        cfg = parse_config("scenarios: [{geometry: {n_h: 4, n_v: 2}}]\neval: {drops: 20}\n")
        test = generate_dataset(small_scenario, 0, 0, 200).test
        rvq = generate_rvq(4, 16, 0)
        reps = evaluate(cfg, 1, 4, test, pipelines_for(Mode.SS, rvq, perfect=True))
        assert [r.pipeline for r in reps] == ["conventional", "perfect-csi"]
        assert reps[1].similarity is None and len(reps[1].sumrate) == 3
        assert reps[1].sumrate[2].rate > reps[0].sumrate[2].rate

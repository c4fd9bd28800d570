"""Experiment orchestration shared by the command line and the demo scripts."""

from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import sysval
from .chansim import ChannelDataset, generate_dataset, generate_multiscenario_dataset
from .codebook import Codebook, CodebookKind, CodebookSet, generate_rvq
from .config import ExperimentConfig, Framework, Mode, config_digest, derive_seed
from .errors import InvalidInputError, UnknownEnvironmentError
from .io import atomic_write
from .trainer import enhance_codebook, oracle_ds, oracle_ss, train_ds, train_ss

__all__ = [
    "EvalReport",
    "select_codebook",
    "signaling_bytes",
    "make_dataset",
    "make_rvq",
    "Pipeline",
    "pipelines_for",
    "evaluate",
    "REPORT_COLUMNS",
    "report_rows",
    "render_report",
    "emit_report",
    "read_report",
    "run_sweep",
    "build_mslcf_set",
    "mslcf_reports",
]

log = logging.getLogger("csilab")

REPORT_COLUMNS = ("framework", "mode", "env_id", "pipeline", "ue_codebook", "bs_codebook",
                  "bits", "metric", "snr_db", "mean", "median", "p5", "count")


def select_codebook(cbs: CodebookSet, env_id: int) -> Codebook:
    """Enhanced codebook of environment ``env_id``, used on both link ends."""
    if env_id not in cbs:
        raise UnknownEnvironmentError(f"no codebook for environment {env_id}; known: {list(cbs)}")
    return cbs[env_id]


def signaling_bytes(bits: int, n_c: int) -> int:
    """Bytes needed to ship a full single-precision codebook to the UE."""
    return 2**bits * n_c * 2 * 4


def make_dataset(cfg: ExperimentConfig, scenario, workers: int = 1) -> ChannelDataset:
    d = cfg.dataset
    if d.n_sites > 1:
        return generate_multiscenario_dataset(scenario, d.n_sites, d.n_train, d.n_val, d.n_test, workers)
    return generate_dataset(scenario, d.n_train, d.n_val, d.n_test, workers)


def make_rvq(cfg: ExperimentConfig, bits: int) -> Codebook:
    return generate_rvq(bits, cfg.scenarios[0].n_c, derive_seed(cfg.rvq_seed, bits))


@dataclass
class EvalReport:
    """Metrics of one feedback pipeline on one environment's test split."""

    framework: str
    mode: str
    env_id: int
    pipeline: str
    ue_codebook: str
    bs_codebook: str
    bits: int
    similarity: Optional[sysval.SimilarityStats] = None
    sumrate: list = field(default_factory=list)
    sumrate_p5: list = field(default_factory=list)
    sumrate_median: list = field(default_factory=list)
    config_digest: str = ""
    seed: int = 0


@dataclass(frozen=True)
class Pipeline:
    name: str
    ue: Optional[Codebook]
    bs: Optional[Codebook]
    ue_id: str
    bs_id: str


def pipelines_for(mode: Mode, rvq: Codebook, enhanced: Optional[Codebook] = None,
                  oracle: Optional[Codebook] = None, perfect: bool = False) -> list:
    """Feedback pipelines compared for one deployment mode.

    Single-side pipelines quantize with the conventional codebook and
    reconstruct with the enhanced one; dual-side pipelines use the enhanced
    codebook on both ends.
    """
    tag = mode.value.lower()
    out = [Pipeline("conventional", rvq, rvq, "rvq", "rvq")]
    for name, cb in ((f"oracle-{tag}", oracle), (f"enhanced-{tag}", enhanced)):
        if cb is None:
            continue
        ue = rvq if mode is Mode.SS else cb
        out.append(Pipeline(name, ue, cb, "rvq" if mode is Mode.SS else name, name))
    if perfect:
        out.append(Pipeline("perfect-csi", None, None, "-", "-"))
    return out


def evaluate(cfg: ExperimentConfig, env_id: int, bits: int, test, pipelines: Sequence[Pipeline],
             cosine: bool = True, sumrate: bool = True) -> list:
    """One :class:`EvalReport` per pipeline on ``test``."""
    digest = config_digest(cfg)
    ev = cfg.eval
    drop_seed = derive_seed(cfg.seed, 5, env_id, bits)
    reports = []
    for p in pipelines:
        rep = EvalReport(cfg.framework.value, cfg.mode.value, env_id, p.name, p.ue_id, p.bs_id, bits,
                         config_digest=digest, seed=cfg.seed)
        if cosine and p.ue is not None:
            rep.similarity = sysval.eval_cosine(test, p.ue, p.bs)
        if sumrate:
            rates = sysval.sumrate_per_drop(test, p.ue, p.bs, ev.users, ev.snr_db, ev.drops, drop_seed)
            ok = ~np.isnan(rates[:, 0])
            if not ok.any():
                raise sysval.EvaluationFailedError(f"{p.name}: every drop was singular")
            rep.sumrate = [sysval.SumRatePoint(float(s), float(np.mean(rates[ok, j])), int(ok.sum()),
                                               int((~ok).sum())) for j, s in enumerate(ev.snr_db)]
            rep.sumrate_median = [float(np.median(rates[ok, j])) for j in range(len(ev.snr_db))]
            rep.sumrate_p5 = [float(np.percentile(rates[ok, j], 5)) for j in range(len(ev.snr_db))]
        reports.append(rep)
    return reports


def _num(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def report_rows(reports: Sequence[EvalReport]) -> list:
    """Flatten reports into CSV rows ordered by (framework, mode, bits, SNR)."""
    rows = []
    for r in reports:
        base = [r.framework, r.mode, str(r.env_id), r.pipeline, r.ue_codebook, r.bs_codebook, str(r.bits)]
        if r.similarity is not None:
            s = r.similarity
            rows.append(((r.framework, r.mode, r.bits, 0, 0.0),
                         base + ["cosine", "", _num(s.mean), _num(s.median), _num(s.p5), str(s.count)]))
        for j, pt in enumerate(r.sumrate):
            rows.append(((r.framework, r.mode, r.bits, 1, pt.snr_db),
                         base + ["sum_rate", _num(pt.snr_db), _num(pt.rate), _num(r.sumrate_median[j]),
                                 _num(r.sumrate_p5[j]), str(pt.drops_averaged)]))
    rows.sort(key=lambda kv: kv[0])
    return [row for _, row in rows]


def render_report(reports: Sequence[EvalReport], meta: Optional[dict] = None) -> str:
    """CSV text: ``#``-prefixed metadata lines, the header row, then sorted rows."""
    if not reports:
        raise InvalidInputError("nothing to report")
    buf = _io.StringIO()
    header = {"generator": "csilab", "config_digest": reports[0].config_digest, "seed": reports[0].seed}
    header.update(meta or {})
    for k, v in header.items():
        buf.write(f"# {k}: {v}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(REPORT_COLUMNS)
    writer.writerows(report_rows(reports))
    return buf.getvalue()


def emit_report(reports: Sequence[EvalReport], path, overwrite: bool = False, meta: Optional[dict] = None):
    """Write :func:`render_report` output atomically to ``path``."""
    return atomic_write(path, render_report(reports, meta).encode("utf-8"), overwrite)


def read_report(path) -> list:
    """Rows of a report CSV as dicts (numeric columns converted)."""
    lines = [ln for ln in Path(path).read_text().splitlines() if not ln.startswith("#")]
    out = []
    for row in csv.DictReader(lines):
        for key in ("mean", "median", "p5"):
            row[key] = float(row[key])
        for key in ("bits", "count", "env_id"):
            row[key] = int(row[key])
        row["snr_db"] = float(row["snr_db"]) if row["snr_db"] else None
        out.append(row)
    return out


# ------------------------------------------------------------ whole studies

def _enhance_for_mode(cfg: ExperimentConfig, ds: ChannelDataset, rvq: Codebook, env_id: int, bits: int):
    rcfg, tcfg = cfg.refiner, cfg.training
    if cfg.mode is Mode.SS:
        params, _ = train_ss(ds.train, rvq, rcfg, tcfg, log=log.debug)
        return enhance_codebook(params, rvq, rcfg, CodebookKind.ENHANCED_SS,
                                f"{rvq.provenance} | train-ss env={env_id}")
    cb, _ = train_ds(ds.train, ds.val, rvq, rcfg, tcfg, log=log.debug)
    return cb


def run_sweep(cfg: ExperimentConfig, neural: bool = True, workers: int = 1) -> list:
    """Every scenario x bit count: conventional, oracle and (optionally) trained pipelines."""
    reports = []
    for sc in cfg.scenarios:
        ds = make_dataset(cfg, sc, workers)
        for bits in cfg.bits:
            rvq = make_rvq(cfg, bits)
            if cfg.mode is Mode.SS:
                oracle = oracle_ss(ds.train, rvq)
            else:
                oracle = oracle_ds(ds.train, rvq, cfg.oracle.max_iters)
            enhanced = _enhance_for_mode(cfg, ds, rvq, sc.env_id, bits) if neural else None
            log.info("sweep env %d B=%d done", sc.env_id, bits)
            reports += evaluate(cfg, sc.env_id, bits, ds.test,
                                pipelines_for(cfg.mode, rvq, enhanced, oracle, perfect=True))
    return reports


def build_mslcf_set(cfg: ExperimentConfig, datasets: dict, bits: int) -> CodebookSet:
    """One dual-side trained codebook per environment, starting from a shared RVQ codebook."""
    if cfg.framework is not Framework.MSLCF:
        raise InvalidInputError("MSLCF codebook sets need framework MSLCF")
    rvq = make_rvq(cfg, bits)
    books = {}
    for sc in cfg.scenarios:
        ds = datasets[sc.env_id]
        cb, _ = train_ds(ds.train, ds.val, rvq, cfg.refiner, cfg.training, log=log.debug)
        books[sc.env_id] = cb.replace(provenance=f"{cb.provenance} | mslcf env={sc.env_id}")
    return CodebookSet(books)


def mslcf_reports(cfg: ExperimentConfig, cbs: CodebookSet, datasets: dict, bits: int) -> list:
    """Cosine similarity of every (test environment, selected codebook) combination."""
    digest = config_digest(cfg)
    reports = []
    for env in cbs:
        test = datasets[env].test
        for chosen in cbs:
            cb = select_codebook(cbs, chosen)
            name = "mslcf-matched" if chosen == env else "mslcf-mismatched"
            rep = EvalReport(cfg.framework.value, cfg.mode.value, env, name, f"env{chosen}", f"env{chosen}",
                             bits, sysval.eval_cosine(test, cb, cb), config_digest=digest, seed=cfg.seed)
            reports.append(rep)
    return reports

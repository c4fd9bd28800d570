"""Command-line entry point: ``csilab <command> --config FILE [--out DIR] ...``.

Artifacts land under the output directory::

    data/env{E}_{split}.csid, data/env{E}.yaml       gen-data
    codebooks/rvq_B{b}.csic                          gen-codebook
    codebooks/oracle-ss_env{E}_B{b}.csic             oracle-ss
    codebooks/oracle-ds_env{E}_B{b}.csic             oracle-ds
    checkpoints/ss_env{E}_B{b}.csip                  train-ss
    codebooks/enhanced-ss_env{E}_B{b}.csic           enhance
    codebooks/enhanced-ds_env{E}_B{b}.csic           train-ds
    codebooks/mslcf_B{b}.csis                        mslcf-build
    reports/*.csv, reports/*.yaml                    eval-*, sweep, mslcf-eval, training runs
    {command}.manifest.json                          every command

A command computes everything in memory first and writes its outputs only
after it has succeeded, so a failed run leaves no partial artifacts.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import platform
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np
import scipy
import yaml

from . import io as cio
from . import lab
from .chansim import SPLITS
from .codebook import CodebookKind, CodebookSet
from .config import ExperimentConfig, Framework, Mode, config_digest, config_to_dict, parse_config
from .errors import CsilabError
from .trainer import enhance_codebook, oracle_ds, oracle_ss, train_ds, train_ss

__all__ = ["run_command", "main", "COMMANDS", "load_config_file"]

from . import __version__

log = logging.getLogger("csilab")


def load_config_file(path, seed: Optional[int] = None) -> ExperimentConfig:
    """Read a YAML config, or the config embedded in a JSON run manifest."""
    text = Path(path).read_text(encoding="utf-8")
    if str(path).endswith(".json"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise CsilabError(f"{path}: not a valid manifest: {exc}") from None
        if not isinstance(doc, dict) or "config" not in doc:
            raise CsilabError(f"{path}: manifest has no 'config' section")
        text = yaml.safe_dump(doc["config"], sort_keys=False)
    return parse_config(text, seed=seed)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class Run:
    """State of one command invocation: config, staged outputs and read inputs."""

    def __init__(self, command: str, cfg: ExperimentConfig, out: Path, overwrite: bool, threads: int):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.overwrite = overwrite
        self.threads = threads
        self.pending: dict[str, bytes] = {}
        self.inputs: dict[str, str] = {}

    # -- inputs
    def _read(self, rel: str, hint: str) -> bytes:
        path = self.out / rel
        if not path.exists():
            raise CsilabError(f"missing input {path}; run `{hint}` first")
        data = path.read_bytes()
        self.inputs[rel] = _sha256(data)
        return data

    def dataset(self, env: int):
        stem = f"data/env{env}"
        for name in SPLITS:
            self._read(f"{stem}_{name}.csid", "gen-data")
        self._read(f"{stem}.yaml", "gen-data")
        ds = cio.load_dataset(self.out / "data", f"env{env}")
        if ds.scenario != self.cfg.scenario(env):
            raise CsilabError(f"data for environment {env} was generated from a different scenario; "
                              "rerun gen-data with --overwrite")
        return ds

    def codebook(self, rel: str, hint: str):
        return cio.decode_codebook(self._read(rel, hint))

    def optional_codebook(self, rel: str, hint: str):
        return self.codebook(rel, hint) if (self.out / rel).exists() else None

    # -- outputs
    def stage(self, rel: str, data: bytes):
        self.pending[rel] = data

    def stage_yaml(self, rel: str, obj):
        self.stage(rel, yaml.safe_dump(obj, sort_keys=False).encode("utf-8"))

    def stage_report(self, rel: str, reports):
        text = lab.render_report(reports, {"command": self.command})
        self.stage(rel, text.encode("utf-8"))

    def manifest(self) -> dict:
        cfg = self.cfg
        n_c = cfg.scenarios[0].n_c
        return {
            "command": self.command,
            "config_digest": config_digest(cfg),
            "seeds": {
                "master": cfg.seed,
                "rvq": cfg.rvq_seed,
                "scenarios": {str(sc.env_id): sc.seed for sc in cfg.scenarios},
                "refiner": cfg.refiner.seed,
                "training": cfg.training.seed,
            },
            "versions": {"csilab": __version__, "python": platform.python_version(),
                         "numpy": np.__version__, "scipy": scipy.__version__},
            "inputs": dict(sorted(self.inputs.items())),
            "outputs": {rel: _sha256(data) for rel, data in sorted(self.pending.items())},
            "signaling_bytes": {str(b): lab.signaling_bytes(b, n_c) for b in cfg.bits},
            "config": config_to_dict(cfg),
        }

    def commit(self) -> list:
        rel_manifest = f"{self.command}.manifest.json"
        manifest = json.dumps(self.manifest(), indent=2, sort_keys=False).encode("utf-8") + b"\n"
        targets = [*self.pending, rel_manifest]
        if not self.overwrite:
            clash = [t for t in targets if (self.out / t).exists()]
            if clash:
                raise FileExistsError(f"{self.out / clash[0]} exists; pass --overwrite to replace it")
        written = []
        for rel, data in self.pending.items():
            written.append(cio.atomic_write(self.out / rel, data, overwrite=True))
        written.append(cio.atomic_write(self.out / rel_manifest, manifest, overwrite=True))
        return written


# ----------------------------------------------------------------- commands

def _envs(cfg):
    return [sc.env_id for sc in cfg.scenarios]


def _rvq_rel(b):
    return f"codebooks/rvq_B{b}.csic"


def cmd_gen_data(run: Run):
    for sc in run.cfg.scenarios:
        ds = lab.make_dataset(run.cfg, sc, run.threads)
        stem = f"data/env{sc.env_id}"
        for name in SPLITS:
            run.stage(f"{stem}_{name}.csid", cio.encode_split(ds.split(name), name))
        sidecar = {"scenario": cio._plain(sc.to_dict()), "n_sites": ds.n_sites, "counts": ds.counts}
        run.stage_yaml(f"{stem}.yaml", sidecar)
        log.info("env %d: %s", sc.env_id, ds.counts)


def cmd_gen_codebook(run: Run):
    for b in run.cfg.bits:
        run.stage(_rvq_rel(b), cio.encode_codebook(lab.make_rvq(run.cfg, b)))


def _oracle(run: Run, kind: str):
    for env in _envs(run.cfg):
        ds = run.dataset(env)
        for b in run.cfg.bits:
            rvq = run.codebook(_rvq_rel(b), "gen-codebook")
            if kind == "ss":
                cb = oracle_ss(ds.train, rvq)
            else:
                cb, trace = oracle_ds(ds.train, rvq, run.cfg.oracle.max_iters, return_trace=True)
                run.stage_yaml(f"reports/oracle-ds_env{env}_B{b}.yaml",
                               {"objective": trace.objective, "objective_sq": trace.objective_sq,
                                "changed": trace.changed})
            run.stage(f"codebooks/oracle-{kind}_env{env}_B{b}.csic", cio.encode_codebook(cb))


def cmd_oracle_ss(run: Run):
    _oracle(run, "ss")


def cmd_oracle_ds(run: Run):
    _oracle(run, "ds")


def cmd_train_ss(run: Run):
    cfg = run.cfg
    for env in _envs(cfg):
        ds = run.dataset(env)
        for b in cfg.bits:
            rvq = run.codebook(_rvq_rel(b), "gen-codebook")
            params, report = train_ss(ds.train, rvq, cfg.refiner, cfg.training, log=log.debug)
            log.info("train-ss env %d B=%d: final loss %.6f (%.1fs)", env, b, report.epoch_loss[-1],
                     report.wall_clock)
            report.codebook_id = f"ss_env{env}_B{b}"
            run.stage(f"checkpoints/ss_env{env}_B{b}.csip", cio.encode_checkpoint(params, cfg.refiner))
            run.stage_yaml(f"reports/train-ss_env{env}_B{b}.yaml", report.to_dict(timing=False))


def cmd_enhance(run: Run):
    for env in _envs(run.cfg):
        for b in run.cfg.bits:
            rvq = run.codebook(_rvq_rel(b), "gen-codebook")
            rel = f"checkpoints/ss_env{env}_B{b}.csip"
            params, rcfg = cio.decode_checkpoint(run._read(rel, "train-ss"))
            cb = enhance_codebook(params, rvq, rcfg, CodebookKind.ENHANCED_SS,
                                  f"{rvq.provenance} | train-ss env={env}")
            run.stage(f"codebooks/enhanced-ss_env{env}_B{b}.csic", cio.encode_codebook(cb))


def cmd_train_ds(run: Run):
    cfg = run.cfg
    for env in _envs(cfg):
        ds = run.dataset(env)
        for b in cfg.bits:
            rvq = run.codebook(_rvq_rel(b), "gen-codebook")
            cb, report = train_ds(ds.train, ds.val, rvq, cfg.refiner, cfg.training, log=log.debug)
            log.info("train-ds env %d B=%d: %d gates, %d accepted (%.1fs)", env, b, len(report.gate_epochs),
                     sum(report.gate_accepted), report.wall_clock)
            report.codebook_id = f"enhanced-ds_env{env}_B{b}"
            run.stage(f"codebooks/enhanced-ds_env{env}_B{b}.csic", cio.encode_codebook(cb))
            run.stage_yaml(f"reports/train-ds_env{env}_B{b}.yaml", report.to_dict(timing=False))


def _stored_pipelines(run: Run, env: int, b: int, perfect: bool):
    mode = run.cfg.mode
    tag = mode.value.lower()
    rvq = run.codebook(_rvq_rel(b), "gen-codebook")
    oracle = run.optional_codebook(f"codebooks/oracle-{tag}_env{env}_B{b}.csic", f"oracle-{tag}")
    hint = "enhance" if mode is Mode.SS else "train-ds"
    enhanced = run.optional_codebook(f"codebooks/enhanced-{tag}_env{env}_B{b}.csic", hint)
    return lab.pipelines_for(mode, rvq, enhanced, oracle, perfect=perfect)


def _eval(run: Run, cosine: bool):
    reports = []
    for env in _envs(run.cfg):
        ds = run.dataset(env)
        for b in run.cfg.bits:
            pipes = _stored_pipelines(run, env, b, perfect=not cosine)
            reports += lab.evaluate(run.cfg, env, b, ds.test, pipes, cosine=cosine, sumrate=not cosine)
    run.stage_report("reports/cosine.csv" if cosine else "reports/sumrate.csv", reports)


def cmd_eval_cosine(run: Run):
    _eval(run, True)


def cmd_eval_sumrate(run: Run):
    _eval(run, False)


def cmd_sweep(run: Run):
    run.stage_report("reports/sweep.csv", lab.run_sweep(run.cfg, neural=True, workers=run.threads))


def _require_mslcf(cfg: ExperimentConfig):
    if cfg.framework is not Framework.MSLCF:
        raise CsilabError("this command needs `framework: MSLCF` in the config")


def cmd_mslcf_build(run: Run):
    cfg = run.cfg
    _require_mslcf(cfg)
    datasets = {env: run.dataset(env) for env in _envs(cfg)}
    for b in cfg.bits:
        rvq = run.codebook(_rvq_rel(b), "gen-codebook")
        books = {}
        for env in _envs(cfg):
            ds = datasets[env]
            cb, report = train_ds(ds.train, ds.val, rvq, cfg.refiner, cfg.training, log=log.debug)
            report.codebook_id = f"mslcf_B{b}/env{env}"
            books[env] = cb.replace(provenance=f"{cb.provenance} | mslcf env={env}")
            run.stage_yaml(f"reports/mslcf-build_env{env}_B{b}.yaml", report.to_dict(timing=False))
        run.stage(f"codebooks/mslcf_B{b}.csis", cio.encode_codebook_set(CodebookSet(books)))


def cmd_mslcf_eval(run: Run):
    cfg = run.cfg
    _require_mslcf(cfg)
    datasets = {env: run.dataset(env) for env in _envs(cfg)}
    reports = []
    for b in cfg.bits:
        cbs = cio.decode_codebook_set(run._read(f"codebooks/mslcf_B{b}.csis", "mslcf-build"))
        reports += lab.mslcf_reports(cfg, cbs, datasets, b)
    run.stage_report("reports/mslcf.csv", reports)


COMMANDS = {
    "gen-data": (cmd_gen_data, "generate train/val/test channel datasets for every scenario"),
    "gen-codebook": (cmd_gen_codebook, "draw the conventional RVQ codebook for every bit count"),
    "train-ss": (cmd_train_ss, "train the single-side refiner and save checkpoints"),
    "train-ds": (cmd_train_ds, "dual-side training with gated codebook updates"),
    "oracle-ss": (cmd_oracle_ss, "eigen-centroid single-side oracle codebooks"),
    "oracle-ds": (cmd_oracle_ds, "generalized Lloyd dual-side oracle codebooks"),
    "enhance": (cmd_enhance, "apply single-side checkpoints to the RVQ codebook"),
    "eval-cosine": (cmd_eval_cosine, "cosine similarity of every stored pipeline"),
    "eval-sumrate": (cmd_eval_sumrate, "ZF sum rate of every stored pipeline and perfect CSI"),
    "sweep": (cmd_sweep, "full in-memory study over the bits and SNR lists"),
    "mslcf-build": (cmd_mslcf_build, "train one dual-side codebook per scenario into a codebook set"),
    "mslcf-eval": (cmd_mslcf_eval, "matched vs. mismatched environment selection"),
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csilab", description="CSI feedback codebook enhancement lab")
    p.add_argument("--version", action="version", version=f"csilab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True, metavar="PATH",
                        help="YAML experiment config, or a *.manifest.json to rerun")
        sp.add_argument("--seed", type=int, metavar="N", help="override the master seed")
        sp.add_argument("--out", metavar="DIR", help="output directory (default: config output_dir)")
        sp.add_argument("--overwrite", action="store_true", help="replace existing outputs")
        sp.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker threads; changes speed only, never results")
        sp.add_argument("-v", "--verbose", action="count", default=0)
    return p


def run_command(argv=None) -> int:
    """Run one subcommand; returns the process exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="csilab: %(message)s", stream=sys.stderr, force=True)
    try:
        if args.threads < 1:
            raise CsilabError("--threads must be >= 1")
        cfg = load_config_file(args.config, seed=args.seed)
        out = Path(args.out if args.out is not None else cfg.output_dir)
        cfg = dataclasses.replace(cfg, output_dir=str(out))
        run = Run(args.command, cfg, out, args.overwrite, args.threads)
        t0 = time.perf_counter()
        COMMANDS[args.command][0](run)
        written = run.commit()
        log.info("%s: wrote %d files in %.1fs", args.command, len(written), time.perf_counter() - t0)
    except (CsilabError, OSError, ValueError, ArithmeticError, KeyError) as exc:
        print(f"csilab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()

"""Command-line experiment runner.

Every command writes plain data files (CSV/JSON) into ``--out``. Each
file starts with (CSV) or contains (JSON) the full scenario and
training configuration plus the master seed, so a rerun with the same
flags reproduces it byte for byte.

Exit codes: 0 ok, 1 bad config or usage, 2 numerical failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .beamform import BeamWeights, Method, beam_gain, beam_pattern_grid, sinr
from .errors import ConfigError, NumericalError
from .mamba import MambaBF, ModelConfig, load_checkpoint
from .scenario import ScenarioConfig
from .training import (
    BASELINES,
    TEST_STREAM,
    TRAIN_STREAM,
    TrainConfig,
    baseline_weights,
    build_dataset,
    evaluate,
    infer_weights,
    make_sample,
    sample_seed,
    train,
)

log = logging.getLogger("ngso_bf")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3
GRADCHECK_TOL = 1e-4

METHOD_FLAGS = {
    "mrc": Method.MRC,
    "zf": Method.ZF,
    "smi": Method.SMI,
    "mvdr": Method.MVDR,
    "mamba": Method.MAMBA,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _fmt(x) -> str:
    # repr round-trips doubles exactly and never depends on locale
    return repr(float(x))


def _db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


class Run:
    """Resolved configuration of one invocation."""

    def __init__(self, args):
        self.command = args.command
        scenario = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
        training = TrainConfig.load(args.train_config) if args.train_config else TrainConfig()
        seed = scenario.seed if args.seed is None else args.seed
        if seed < 0:
            raise ConfigError("seed must be non-negative")
        scenario = replace(scenario, seed=seed)
        scenario.validate()
        overrides = {"seed": seed}
        if getattr(args, "csi", None):
            overrides["csi_mode"] = args.csi
        if args.snapshots is not None:
            overrides["snapshots"] = args.snapshots
        overrides["error_variance"] = scenario.csi_error_variance
        training = replace(training, **overrides)
        training.validate()
        self.scenario, self.training, self.seed = scenario, training, seed
        self.out = Path(args.out)

    def header(self) -> dict:
        return {
            "tool": f"ngso-bf {__version__}",
            "command": self.command,
            "seed": self.seed,
            "scenario_config": self.scenario.to_dict(),
            "train_config": self.training.to_dict(),
        }

    def prepare_out(self) -> None:
        self.out.mkdir(parents=True, exist_ok=True)

    def write_csv(self, name: str, columns: list[str], rows, extra: dict | None = None) -> Path:
        buf = io.StringIO()
        meta = self.header() | (extra or {})
        for key in sorted(meta):
            buf.write(f"# {key}: {json.dumps(meta[key], sort_keys=True)}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        w.writerows(rows)
        path = self.out / name
        path.write_text(buf.getvalue())
        return path

    def write_json(self, name: str, doc: dict) -> Path:
        path = self.out / name
        path.write_text(json.dumps({"header": self.header()} | doc, indent=1, sort_keys=True) + "\n")
        return path

    def model_config(self) -> ModelConfig:
        m = self.scenario.mx * self.scenario.my
        return ModelConfig(num_elements=m, num_snapshots=self.training.snapshots)


def _methods(flag: str, have_model: bool) -> list[Method]:
    if flag == "all":
        return list(BASELINES) + ([Method.MAMBA] if have_model else [])
    return [METHOD_FLAGS[flag]]


def _load_model(path, run: Run) -> MambaBF:
    model = load_checkpoint(path)
    cfg = model.config
    if cfg.num_elements != run.scenario.mx * run.scenario.my or cfg.num_snapshots != run.training.snapshots:
        raise ConfigError(
            f"checkpoint expects M={cfg.num_elements}, L={cfg.num_snapshots}; "
            f"run has M={run.scenario.mx * run.scenario.my}, L={run.training.snapshots}"
        )
    return model


def _doa_text(doas) -> str:
    return ";".join(f"{_fmt(a)}:{_fmt(e)}" for a, e in doas)


# commands


def cmd_gen_data(run: Run, args) -> None:
    cfg = run.training
    variance = cfg.error_variance if cfg.csi_mode == "imperfect" else None
    rows = []
    splits = {}
    for split, stream, count in (("train", TRAIN_STREAM, cfg.n_train), ("test", TEST_STREAM, cfg.n_test)):
        seeds = [sample_seed(run.seed, stream, i) for i in range(count)]
        splits[split] = {"stream": stream, "count": count, "seeds": seeds}
        for i, s in enumerate(seeds):
            sample = make_sample(run.scenario, s, 1, variance)
            sc = sample.scenario
            rows.append(
                [
                    split,
                    i,
                    s,
                    _fmt(_db(sinr(sc.v_d, sample.true_h_d, sample.true_h_int, sample.noise_w))),
                    _doa_text([(c.doa.azimuth_deg, c.doa.elevation_deg) for c in sc.interferers]),
                    ";".join(_fmt(link.slant_range_m) for link in sc.interferer_links),
                ]
            )
    run.prepare_out()
    run.write_json("manifest.json", {"splits": splits, "snapshots_per_sample": cfg.snapshots})
    run.write_csv("samples.csv", ["split", "index", "seed", "sinr_in_db", "interferer_doas", "interferer_ranges_m"], rows)


def _history_rows(history):
    return [[r.epoch, _fmt(r.mean_train_loss), _fmt(r.mean_test_asinr_db)] for r in history]


def cmd_train(run: Run, args) -> None:
    cfg = run.training
    variance = cfg.csi_variance
    train_set = build_dataset(run.scenario, cfg.n_train, run.seed, TRAIN_STREAM, cfg.snapshots, variance)
    test_set = build_dataset(run.scenario, cfg.n_test, run.seed, TEST_STREAM, cfg.snapshots, variance) if cfg.n_test else []
    model = _load_model(args.checkpoint, run) if args.checkpoint else MambaBF(run.model_config(), seed=run.seed)
    ckpt = run.out / "checkpoint.json"
    if args.checkpoint and Path(args.checkpoint).resolve() == ckpt.resolve():
        raise ConfigError("--checkpoint would be overwritten; pick another --out")
    run.prepare_out()
    history = []
    try:
        model, history = train(model, train_set, cfg, test_set, checkpoint_path=ckpt, checkpoint_meta=run.header())
    finally:
        run.write_csv("history.csv", ["epoch", "mean_train_loss", "mean_test_asinr_db"], _history_rows(history))


def cmd_eval(run: Run, args) -> None:
    cfg = run.training
    model = _load_model(args.checkpoint, run) if args.checkpoint else None
    methods = _methods(args.method, model is not None)
    if Method.MAMBA in methods and model is None:
        raise ConfigError("--method mamba needs --checkpoint")
    if cfg.n_test < 1:
        raise ConfigError("n_test must be >= 1 for eval")
    modes = [args.csi] if args.csi else ["perfect", "imperfect"]
    run.prepare_out()
    summary = {}
    for mode in modes:
        variance = cfg.error_variance if mode == "imperfect" else None
        test_set = build_dataset(run.scenario, cfg.n_test, run.seed, TEST_STREAM, cfg.snapshots, variance)
        rep = evaluate(model, test_set, methods, mode)
        cols = ["sample_id", "seed", "sinr_in_db"] + [f"{m.value.lower()}_db" for m in methods]
        cols += ["desired_az_deg", "desired_el_deg", "interferer_doas", "csi_mode"]
        rows = []
        for r in rep.rows:
            rows.append(
                [r["sample_id"], r["seed"], _fmt(r["Initial"])]
                + [_fmt(r[m.value]) for m in methods]
                + [_fmt(r["desired_doa"][0]), _fmt(r["desired_doa"][1]), _doa_text(r["interferer_doas"]), mode]
            )
        run.write_csv(f"eval_{mode}.csv", cols, rows, {"csi_mode": mode})
        summary[mode] = rep.aggregates()
        for name, agg in summary[mode].items():
            log.info("%s %-8s mean %.3f dB", mode, name, agg["mean_db"])
    run.write_json("eval_summary.json", {"aggregates": summary, "methods": [m.value for m in methods]})


def cmd_beam_pattern(run: Run, args) -> None:
    cfg = run.training
    model = _load_model(args.checkpoint, run) if args.checkpoint else None
    methods = [Method.INITIAL] + _methods(args.method, model is not None)
    if Method.MAMBA in methods and model is None:
        raise ConfigError("--method mamba needs --checkpoint")
    mode = args.csi or "perfect"
    variance = cfg.error_variance if mode == "imperfect" else None
    seed = sample_seed(run.seed, TEST_STREAM, args.sample)
    sample = make_sample(run.scenario, seed, cfg.snapshots, variance)
    sc = sample.scenario
    eta = sc.ut_efficiency
    run.prepare_out()
    markers = {
        "desired": [sc.desired.doa.azimuth_deg, sc.desired.doa.elevation_deg],
        "interferers": [[c.doa.azimuth_deg, c.doa.elevation_deg] for c in sc.interferers],
    }
    for method in dict.fromkeys(methods):
        if method is Method.MAMBA:
            w = BeamWeights(infer_weights(model, [sample])[0], method)
        else:
            w = BeamWeights(baseline_weights(method, sample), method)
        az, el, grid = beam_pattern_grid(sc.geometry, w, step_deg=args.grid_step, efficiency=eta)
        tag = method.value.lower()
        # rows are elevations, columns azimuths
        rows = [[_fmt(e)] + [_fmt(v) for v in grid[:, j]] for j, e in enumerate(el)]
        extra = {"method_tag": method.value, "sample_index": args.sample, "sample_seed": seed, "csi_mode": mode}
        run.write_csv(f"pattern_{tag}.csv", ["el_deg\\az_deg"] + [_fmt(a) for a in az], rows, extra)
        gains = {
            "desired_db": _db(beam_gain(sc.geometry, w, sc.desired.doa, eta)),
            "interferers_db": [_db(beam_gain(sc.geometry, w, c.doa, eta)) for c in sc.interferers],
        }
        run.write_json(
            f"pattern_{tag}.json",
            {
                "method_tag": method.value,
                "csi_mode": mode,
                "sample_index": args.sample,
                "sample_seed": seed,
                "asinr_db": _db(sinr(w, sample.true_h_d, sample.true_h_int, sample.noise_w)),
                "markers": markers,
                "gains_at_markers": gains,
                "grid_peak_db": float(np.max(grid)),
                "grid_step_deg": args.grid_step,
            },
        )


def cmd_gradcheck(run: Run, args) -> None:
    from .autodiff import gradient_check
    from .mamba import forward_tensors, init_buffers, init_params
    from .training import loss_asinr

    tiny_scenario = replace(run.scenario, mx=2, my=2, interferer_count=1)
    cfg = ModelConfig(num_elements=4, num_snapshots=8, latent=6, hidden=5)
    samples = build_dataset(tiny_scenario, 3, run.seed, TRAIN_STREAM, 8)
    x = np.stack([s.features for s in samples])
    params = init_params(cfg, run.seed)
    names = sorted(params)

    def f(*vals):
        w_re, w_im, _ = forward_tensors(x, dict(zip(names, vals)), init_buffers(cfg), cfg, train=True)
        return loss_asinr(w_re, w_im, samples)

    err = gradient_check(f, [params[n] for n in names])
    print(f"max relative error {err:.3e} (tolerance {GRADCHECK_TOL:g})")
    run.prepare_out()
    run.write_json(
        "gradcheck.json",
        {"max_relative_error": err, "tolerance": GRADCHECK_TOL, "num_parameters": int(sum(p.size for p in params.values()))},
    )
    if not err < GRADCHECK_TOL:
        raise NumericalError(f"gradient check failed: {err:.3e} >= {GRADCHECK_TOL:g}")


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "beam-pattern": cmd_beam_pattern,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ngso-bf", description="NGSO interference-nulling beamforming experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        c = sub.add_parser(name)
        c.add_argument("--config", help="scenario config (JSON)")
        c.add_argument("--train-config", help="training config (JSON)")
        c.add_argument("--seed", type=int, help="master seed (overrides both configs)")
        c.add_argument("--snapshots", type=int, help="snapshots per sample L")
        c.add_argument("--out", default=".", help="output directory")
        c.add_argument("-v", "--verbose", action="store_true")
        if name in ("gen-data", "train", "eval", "beam-pattern"):
            c.add_argument("--csi", choices=["perfect", "imperfect"])
        if name in ("train", "eval", "beam-pattern"):
            c.add_argument("--checkpoint", help="model checkpoint (JSON)")
        if name in ("eval", "beam-pattern"):
            c.add_argument("--method", choices=[*METHOD_FLAGS, "all"], default="all")
        if name == "beam-pattern":
            c.add_argument("--grid-step", type=float, default=1.0, help="grid step in degrees")
            c.add_argument("--sample", type=int, default=0, help="test-set sample index")
    return p


def _threads() -> int | None:
    raw = os.environ.get("NGSO_BF_THREADS")
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"NGSO_BF_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError("NGSO_BF_THREADS must be >= 1")
    return n


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        if getattr(args, "grid_step", 1.0) <= 0:
            raise ConfigError("--grid-step must be positive")
        if getattr(args, "sample", 0) < 0:
            raise ConfigError("--sample must be >= 0")
        run = Run(args)
        with threadpool_limits(limits=_threads()):
            COMMANDS[args.command](run, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

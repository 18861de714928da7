"""Command-line entry point: synth, train, separate, evaluate, experiment.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure.
"""
import argparse
from concurrent.futures import ProcessPoolExecutor
import csv
from dataclasses import asdict, dataclass, field, fields
import json
import logging
import os
from pathlib import Path
import sys
import time

import numpy as np

from .corpus import (CorpusConfig, SignalConfig, build_experiment_set, ingest_wav_dir,
                     load_experiment_set, write_experiment_set)
from .errors import ConfigError, GensepError, InputError, NumericalError
from .evaluation import METRICS, BssScores, aggregate, score_pair
from .separation import SeparationConfig, separate
from .signal import magnitude_phase, read_wav, stft, wiener_reconstruct, write_wav
from .training import (MODEL_KINDS, TrainConfig, load_checkpoint, save_checkpoint, train,
                       write_loss_csv)

log = logging.getLogger("gensep")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RESULT_COLUMNS = ["pair_id", "model_kind", "source_id", "sdr_db", "sir_db", "sar_db",
                  "corpus_hash"]


@dataclass
class RunConfig:
    signal: SignalConfig = field(default_factory=SignalConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    separation: SeparationConfig = field(default_factory=SeparationConfig)
    models: list = field(default_factory=lambda: list(MODEL_KINDS))
    seed: int = 0
    jobs: int = 1
    out: str = "run"

    def validate(self):
        self.signal.validate()
        self.corpus.validate()
        self.train.validate()
        self.separation.validate()
        bad = [m for m in self.models if m not in MODEL_KINDS]
        if bad or not self.models:
            raise ConfigError(f"models must be a non-empty subset of {MODEL_KINDS}, got {self.models}")
        if len(set(self.models)) != len(self.models):
            raise ConfigError("models list has duplicates")
        if self.jobs <= 0:
            raise ConfigError("jobs must be positive")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            kw = {k: v for k, v in d.items() if k not in ("signal", "corpus", "train", "separation")}
            return cls(signal=SignalConfig(**d.get("signal", {})),
                       corpus=CorpusConfig(**d.get("corpus", {})),
                       train=TrainConfig.from_dict(d.get("train", {})),
                       separation=SeparationConfig.from_dict(d.get("separation", {})),
                       **kw)
        except TypeError as exc:
            raise ConfigError(f"bad config: {exc}") from exc


def _set(section, name, value):
    if value is not None:
        setattr(section, name, value)


def resolve_config(args):
    """Defaults, then ``--config`` JSON, then explicit flags."""
    if getattr(args, "config", None):
        try:
            cfg = RunConfig.from_dict(json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    else:
        cfg = RunConfig()
    g = lambda name: getattr(args, name, None)  # noqa: E731
    if g("seed") is not None:
        cfg.seed = args.seed
        cfg.corpus.seed = args.seed
    _set(cfg, "jobs", g("jobs"))
    _set(cfg, "out", g("out"))
    if g("models"):
        cfg.models = [m.strip() for m in args.models.split(",") if m.strip()]
    _set(cfg.signal, "sample_rate", g("sample_rate"))
    _set(cfg.signal, "n_fft", g("n_fft"))
    _set(cfg.signal, "hop", g("hop"))
    _set(cfg.corpus, "pairs", g("pairs"))
    _set(cfg.corpus, "train_seconds", g("train_seconds"))
    _set(cfg.corpus, "test_seconds", g("test_seconds"))
    _set(cfg.train, "iterations", g("iterations"))
    _set(cfg.train, "learning_rate", g("lr"))
    _set(cfg.train, "batch_size", g("batch_size"))
    _set(cfg.train, "critic_steps_per_gen", g("critic_steps"))
    if g("clip") is not None:
        cfg.train.clip_lo, cfg.train.clip_hi = -abs(args.clip), abs(args.clip)
    if g("literal_gan_loss"):
        cfg.train.literal_gan_loss = True
    _set(cfg.separation, "iterations", g("test_iterations"))
    _set(cfg.separation, "learning_rate", g("test_lr"))
    _set(cfg.separation, "alpha", g("alpha"))
    _set(cfg.separation, "beta", g("beta"))
    return cfg.validate()


def echo_config(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")


def _derive_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def cell_seeds(run_seed, pair_index, model_kind):
    """Seeds for (source 1 training, source 2 training, separation) of one cell.

    Keyed on the model's fixed index so enabling other models changes nothing.
    """
    m = MODEL_KINDS.index(model_kind)
    return tuple(_derive_seed(run_seed, pair_index, m, k) for k in range(3))


# ---------------------------------------------------------------- file I/O

def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective"])
        for it, v in trace:
            w.writerow([it, repr(float(v))])


def write_matrix_csv(path, mat):
    np.savetxt(path, mat, delimiter=",", fmt="%.17g")


def score_rows(pair_id, model_kind, per_source, corpus_hash=""):
    return [[pair_id, model_kind, k, f"{s.sdr:.6f}", f"{s.sir:.6f}", f"{s.sar:.6f}", corpus_hash]
            for k, s in enumerate(per_source, 1)]


def write_results_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        w.writerows(rows)


def read_results_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_summary_csv(path, summary):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model_kind", "metric", "n", "min", "q1", "median", "q3", "max"])
        for model, per_metric in summary.items():
            for metric in METRICS:
                s = per_metric[metric]
                w.writerow([model, metric, s["n"]] +
                           [f"{s[k]:.6f}" for k in ("min", "q1", "median", "q3", "max")])


def format_summary(summary):
    lines = [f"{'model':<8} {'metric':<4} {'n':>3} {'min':>8} {'q1':>8} {'median':>8} "
             f"{'q3':>8} {'max':>8}"]
    for model, per_metric in summary.items():
        for metric in METRICS:
            s = per_metric[metric]
            lines.append(f"{model:<8} {metric:<4} {s['n']:>3} " + " ".join(
                f"{s[k]:8.2f}" for k in ("min", "q1", "median", "q3", "max")))
    return "\n".join(lines)


def _atomic_write_json(path, obj):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    os.replace(tmp, path)


# -------------------------------------------------------------- commands

def cmd_synth(cfg):
    es = build_experiment_set(cfg.corpus, cfg.signal)
    out = Path(cfg.out)
    try:
        write_experiment_set(es, out)
    except OSError as exc:
        raise InputError(f"cannot write corpus to {out}: {exc}") from exc
    echo_config(cfg, out)
    log.info("wrote %d pairs to %s (hash %s)", es.count, out, es.digest())
    return es


def cmd_train(cfg, model_kind, sources=(), corpus=None, pair_id=None):
    """Train one model per source; returns the checkpoint paths."""
    named = []
    if corpus is not None:
        es = load_experiment_set(corpus)
        match = [p for p in es.pairs if p.pair_id == pair_id]
        if not match:
            raise InputError(f"pair {pair_id!r} not found in {corpus}")
        named = [(f"source_{k}", s) for k, s in enumerate(match[0].sources, 1)]
    for src in sources:
        named.append((Path(src).name, ingest_wav_dir(src, cfg.signal)))
    if not named:
        raise ConfigError("nothing to train: give --source directories or --corpus/--pair")
    if len({n for n, _ in named}) != len(named):
        raise ConfigError("source directory names must be unique")
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    paths = []
    for k, (name, src) in enumerate(named):
        tcfg = cfg.train.replace(model_kind=model_kind, seed=_derive_seed(cfg.seed, k))
        model = train(src.train_frames, tcfg)
        path = out / f"{name}.json"
        save_checkpoint(path, model)
        write_loss_csv(out / f"{name}_loss.csv", model)
        paths.append(path)
        log.info("trained %s on %s -> %s", model_kind, name, path)
    return paths


def cmd_separate(cfg, checkpoints, mixture_path):
    if len(checkpoints) != 2:
        raise ConfigError("separation needs exactly two checkpoints")
    m1, m2 = (load_checkpoint(p) for p in checkpoints)
    mix = read_wav(mixture_path, cfg.signal.sample_rate)
    mag, phase = magnitude_phase(stft(mix, cfg.signal.n_fft, cfg.signal.hop))
    for m, p in ((m1, checkpoints[0]), (m2, checkpoints[1])):
        if m.data_dim != mag.shape[0]:
            raise InputError(f"{p}: model has {m.data_dim} bins, mixture has {mag.shape[0]}")
    result = separate(mag, m1, m2, cfg.separation)
    y1, y2 = wiener_reconstruct(result.s1_hat, result.s2_hat, mag, phase)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(cfg, out)
    write_wav(out / "est_1.wav", y1)
    write_wav(out / "est_2.wav", y2)
    write_matrix_csv(out / "est_1_mag.csv", result.s1_hat.mag)
    write_matrix_csv(out / "est_2_mag.csv", result.s2_hat.mag)
    write_trace_csv(out / "trace.csv", result.trace)
    return result


def cmd_evaluate(estimates, references, out_csv, sample_rate=None, pair_id="", model_kind=""):
    ests = [read_wav(p, sample_rate) for p in estimates]
    refs = [read_wav(p, sample_rate) for p in references]
    scores = score_pair(ests, refs)
    write_results_csv(out_csv, score_rows(pair_id, model_kind, scores.per_source))
    return scores


def run_cell(pair, pair_index, model_kind, cfg):
    """Train both sources, separate the pair's mixture and score it."""
    start = time.perf_counter()
    s1, s2, sep_seed = cell_seeds(cfg.seed, pair_index, model_kind)
    models = [train(src.train_frames, cfg.train.replace(model_kind=model_kind, seed=s))
              for src, s in zip(pair.sources, (s1, s2))]
    mag, phase = pair.mixture_spectrogram(cfg.signal)
    result = separate(mag, models[0], models[1], cfg.separation.replace(seed=sep_seed))
    scores = score_pair(result, pair.references, (mag, phase))
    return {
        "pair_id": pair.pair_id,
        "model_kind": model_kind,
        "per_source": [list(s.as_tuple()) for s in scores.per_source],
        "permutation": list(scores.permutation),
        "final_objective": float(result.trace[-1][1]),
        "runtime_s": time.perf_counter() - start,
    }


def _cell_path(cells_dir, pair_id, model_kind):
    return cells_dir / f"{pair_id}__{model_kind}.json"


def _load_cell(path):
    try:
        cell = json.loads(path.read_text())
        if len(cell["per_source"]) == 2:
            return cell
    except (OSError, json.JSONDecodeError, KeyError, TypeError):
        pass
    return None


def _result_keys(d):
    # worker count and output path do not change any result
    return {k: v for k, v in d.items() if k not in ("jobs", "out")}


def _run_cell_job(args):
    return run_cell(*args)


def cmd_experiment(cfg, corpus_dir=None):
    """Every (pair, model) cell, resumable; writes results, timings and summary CSVs."""
    es = load_experiment_set(corpus_dir) if corpus_dir else build_experiment_set(cfg.corpus,
                                                                                cfg.signal)
    if corpus_dir and es.signal != cfg.signal:
        raise ConfigError(f"corpus signal settings {es.signal} differ from the run's {cfg.signal}")
    digest = es.digest()
    out = Path(cfg.out)
    cells_dir = out / "cells"
    cells_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    if manifest_path.exists():
        try:
            prev = json.loads(manifest_path.read_text())
        except json.JSONDecodeError:
            prev = {}
        if prev.get("corpus_hash") not in (None, digest):
            raise ConfigError(f"{out} holds results for corpus {prev['corpus_hash']}, "
                              f"this run uses {digest}; refusing to mix corpora")
        if prev.get("config") is not None and _result_keys(prev["config"]) != _result_keys(
                cfg.to_dict()):
            raise ConfigError(f"{out} was produced with a different configuration")
    manifest = {"corpus_hash": digest, "config": cfg.to_dict(), "completed": []}
    echo_config(cfg, out)

    todo = []
    cells = {}
    for idx, pair in enumerate(es.pairs):
        for kind in cfg.models:
            done = _load_cell(_cell_path(cells_dir, pair.pair_id, kind))
            if done is not None:
                cells[(pair.pair_id, kind)] = done
            else:
                todo.append((pair, idx, kind, cfg))
    log.info("%d cells done, %d to run", len(cells), len(todo))

    def finish(cell):
        cells[(cell["pair_id"], cell["model_kind"])] = cell
        _atomic_write_json(_cell_path(cells_dir, cell["pair_id"], cell["model_kind"]), cell)
        manifest["completed"] = sorted(f"{p}/{m}" for p, m in cells)
        _atomic_write_json(manifest_path, manifest)
        log.info("cell %s/%s: mean SDR %.2f dB", cell["pair_id"], cell["model_kind"],
                 float(np.mean([s[0] for s in cell["per_source"]])))

    manifest["completed"] = sorted(f"{p}/{m}" for p, m in cells)
    _atomic_write_json(manifest_path, manifest)
    if cfg.jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            for cell in pool.map(_run_cell_job, todo):
                finish(cell)
    else:
        for job in todo:
            finish(run_cell(*job))

    rows, timing_rows = [], []
    by_model = {kind: [] for kind in cfg.models}
    for pair in es.pairs:
        for kind in cfg.models:
            cell = cells[(pair.pair_id, kind)]
            per = [BssScores(*s) for s in cell["per_source"]]
            rows.extend(score_rows(pair.pair_id, kind, per, digest))
            timing_rows.append([pair.pair_id, kind, f"{cell['runtime_s']:.3f}"])
            by_model[kind].append(BssScores(*(float(np.mean(v)) for v in zip(*cell["per_source"]))))
    write_results_csv(out / "results.csv", rows)
    with open(out / "timings.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "model_kind", "runtime_s"])
        w.writerows(timing_rows)
    summary = aggregate(by_model)
    write_summary_csv(out / "summary.csv", summary)
    return summary


# -------------------------------------------------------------- argparse

def _add_common(p):
    p.add_argument("--config", help="JSON run configuration (flags override it)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-rate", type=int)
    p.add_argument("--n-fft", type=int)
    p.add_argument("--hop", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_train_flags(p):
    p.add_argument("--iterations", type=int, help="training iterations (default 4000)")
    p.add_argument("--lr", type=float, help="training learning rate (default 0.001)")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--critic-steps", type=int, help="critic updates per generator update")
    p.add_argument("--clip", type=float, help="WGAN critic clip magnitude (default 0.01)")
    p.add_argument("--literal-gan-loss", action="store_true",
                   help="standard GAN generator descends log(1 - D) instead of ascending log D")


def _add_sep_flags(p):
    p.add_argument("--test-iterations", type=int, help="separation iterations (default 20000)")
    p.add_argument("--test-lr", type=float)
    p.add_argument("--alpha", type=float, help="critic-score weight (default 0.1)")
    p.add_argument("--beta", type=float, help="temporal smoothness weight (default 0.1)")


def _add_corpus_flags(p):
    p.add_argument("--pairs", type=int, help="number of speaker pairs (default 25)")
    p.add_argument("--train-seconds", type=float)
    p.add_argument("--test-seconds", type=float)


def build_parser():
    parser = argparse.ArgumentParser(prog="gensep", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic two-speaker corpus")
    _add_common(p)
    _add_corpus_flags(p)

    p = sub.add_parser("train", help="train one source model per speaker directory")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--model", required=True, choices=MODEL_KINDS)
    p.add_argument("--source", action="append", default=[], help="speaker WAV directory")
    p.add_argument("--corpus", help="corpus directory written by 'synth'")
    p.add_argument("--pair", help="pair id inside --corpus, e.g. pair_00")

    p = sub.add_parser("separate", help="separate a mixture with two checkpoints")
    _add_common(p)
    _add_sep_flags(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--mixture", required=True)

    p = sub.add_parser("evaluate", help="BSS-eval two estimates against two references")
    p.add_argument("--estimate", action="append", required=True)
    p.add_argument("--reference", action="append", required=True)
    p.add_argument("--out", required=True, help="scores CSV path")
    p.add_argument("--pair-id", default="")
    p.add_argument("--model-kind", default="")
    p.add_argument("--sample-rate", type=int)
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("experiment", help="train, separate and score every pair x model")
    _add_common(p)
    _add_corpus_flags(p)
    _add_train_flags(p)
    _add_sep_flags(p)
    p.add_argument("--models", help=f"comma-separated subset of {','.join(MODEL_KINDS)}")
    p.add_argument("--jobs", type=int, help="parallel cells")
    p.add_argument("--corpus", help="use a corpus directory instead of synthesizing in memory")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "evaluate":
            if len(args.estimate) != 2 or len(args.reference) != 2:
                raise ConfigError("evaluate needs two --estimate and two --reference files")
            scores = cmd_evaluate(args.estimate, args.reference, args.out, args.sample_rate,
                                  args.pair_id, args.model_kind)
            print(f"mean SDR {scores.mean.sdr:.2f} dB  SIR {scores.mean.sir:.2f} dB  "
                  f"SAR {scores.mean.sar:.2f} dB")
            return EXIT_OK
        cfg = resolve_config(args)
        if args.command == "synth":
            cmd_synth(cfg)
        elif args.command == "train":
            if bool(args.corpus) != bool(args.pair):
                raise ConfigError("--corpus and --pair go together")
            cmd_train(cfg, args.model, args.source, args.corpus, args.pair)
        elif args.command == "separate":
            cmd_separate(cfg, args.checkpoint, args.mixture)
        elif args.command == "experiment":
            summary = cmd_experiment(cfg, args.corpus)
            print(format_summary(summary))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except GensepError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())


def main_exit():
    sys.exit(main())

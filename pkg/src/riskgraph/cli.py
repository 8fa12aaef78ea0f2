"""``riskgraph`` command line.

Subcommands: synth, motifs, featurize, train, evaluate, predict, gradcheck.
Validation failures exit with status 1 and a single JSON line on stderr;
usage errors exit with status 2.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import platform
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import (SPLITS, SchemaError, SynthConfig, load_dataset, save_dataset, split_dataset, split_indices,
                   synth_dataset)
from .features import SFT_COLUMNS, AttributeEncoder
from .graph import GraphError
from .io_utils import atomic_write_text
from .model import (MODES, RISK_LABELS, TrainingError, checkpoint_dict, evaluate, forward_dynamic,
                    gradient_check, history_csv, load_checkpoint, model_from_checkpoint, save_checkpoint)
from .motifs import MotifKind, motif_significance, write_nmd_csv
from .pipeline import featurize, hidden_labels

log = logging.getLogger("riskgraph")

GRADCHECK_TOLERANCE = 1e-5


@dataclass
class RunConfig:
    nodes: str = "nodes.csv"
    edges: str = "edges.csv"
    timeseries: str | None = None
    dynamic: bool = False
    mode: str = "HA"
    lr: float = 0.01
    max_epoch: int = 300
    patience: int = 50
    hidden: int = 64
    n_layers: int = 2
    class_count: int = 4
    optimizer: str = "adam"
    seed: int = 0
    ratios: list = field(default_factory=lambda: [0.6, 0.2, 0.2])
    weighted: bool = False
    boxcox: bool = True
    inconsistency_limit: float = 0.05
    max_bins: int = 10

    def validate(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.max_epoch < 1:
            raise ValueError(f"max_epoch must be >= 1, got {self.max_epoch}")
        if self.hidden < 1:
            raise ValueError(f"hidden must be >= 1, got {self.hidden}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dynamic and not self.timeseries:
            raise ValueError("dynamic runs need a timeseries directory")
        return self

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"{path}: unknown config key {unknown[0]!r}")
        base = Path(path).parent
        for key in ("nodes", "edges", "timeseries"):
            if raw.get(key) and not Path(raw[key]).is_absolute():
                raw[key] = str(base / raw[key])
        return cls(**raw)


class CliError(Exception):
    pass


def _write_json(path, obj):
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _csv(path, header, rows):
    lines = [",".join(header)] + [",".join(str(x) for x in r) for r in rows]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _fmt(x) -> str:
    return repr(float(x))


def _run_meta(out_dir: Path, command: str, config: dict, seed, started: float, timings: dict | None = None):
    _write_json(out_dir / "run_meta.json", {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {"riskgraph": __version__, "python": platform.python_version(), "numpy": np.__version__},
        "threads": 1,
        "started_unix": started,
        "wall_seconds": time.time() - started,
        "timings": timings or {},
    })


# subcommands -----------------------------------------------------------------

def cmd_synth(args, out_dir: Path):
    cfg = SynthConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            for k, v in json.load(fh).items():
                if not hasattr(cfg, k):
                    raise ValueError(f"{args.config}: unknown synth key {k!r}")
                setattr(cfg, k, v)
    for name in ("n", "communities", "edge_prob_out", "label_rule", "attr_noise", "flight_hubs", "timestamps"):
        val = getattr(args, name)
        if val is not None:
            setattr(cfg, name, val)
    if args.edge_prob_in is not None:
        vals = [float(x) for x in args.edge_prob_in.split(",")]
        cfg.edge_prob_in = vals[0] if len(vals) == 1 else vals
    cfg.seed = args.seed
    d = synth_dataset(cfg)
    files = save_dataset(d, out_dir)
    if not args.quiet:
        print(f"wrote {d.graph.node_count} nodes, {d.graph.edge_count} edges to {out_dir}")
    return dataclasses.asdict(cfg), {k: str(v) for k, v in files.items()}


def cmd_motifs(args, out_dir: Path):
    d = load_dataset(args.nodes, args.edges)
    from .motifs import count_nmd

    nmd = count_nmd(d.graph)
    out = Path(args.out) if args.out else out_dir / "nmd.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = out.with_name(f".{out.name}.tmp")
    write_nmd_csv(tmp, d.graph, nmd)
    tmp.replace(out)
    result = {"nmd": str(out)}
    if args.significance:
        th = {"P": args.p_threshold, "U": args.u_threshold, "D": args.d_threshold}
        reports = [dataclasses.asdict(motif_significance(d.graph, m, ensemble=args.significance, seed=args.seed,
                                                         thresholds=th)) for m in MotifKind]
        for r in reports:
            r["motif"] = MotifKind(r["motif"]).name
            if not np.isfinite(r["z_score"]):
                r["z_score"] = "inf" if r["z_score"] > 0 else "-inf"
        _write_json(out_dir / "significance.json", reports)
        result["significance"] = str(out_dir / "significance.json")
    if not args.quiet:
        print(f"wrote {out}")
    return {"nodes": args.nodes, "edges": args.edges}, result


def _load_for(cfg: RunConfig):
    return load_dataset(cfg.nodes, cfg.edges, cfg.timeseries if cfg.dynamic else None)


def _split_from(d, cfg: RunConfig, split_path=None):
    if split_path:
        assign = _read_split(split_path, d)
    else:
        assign = split_dataset(d.labels, ratios=cfg.ratios, seed=cfg.seed)
    return assign


def _read_split(path, d):
    index = {nid: i for i, nid in enumerate(d.node_ids)}
    assign = np.full(len(index), -1, dtype=np.int64)
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "node_id,split":
            raise SchemaError(path, 1, "*", "expected header node_id,split")
        for lineno, line in enumerate(fh, start=2):
            nid, split = line.rstrip("\n").split(",")
            if nid not in index:
                raise SchemaError(path, lineno, "node_id", f"unknown node id {nid!r}")
            if split not in SPLITS:
                raise SchemaError(path, lineno, "split", f"expected one of {SPLITS}")
            assign[index[nid]] = SPLITS.index(split)
    if (assign < 0).any():
        raise SchemaError(path, 0, "node_id", "split does not cover every node")
    return assign


def _write_split(path, d, assign):
    _csv(path, ("node_id", "split"), [(nid, SPLITS[a]) for nid, a in zip(d.node_ids, assign)])


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    for name in ("nodes", "edges", "timeseries", "mode", "lr", "max_epoch", "patience", "hidden", "class_count",
                 "optimizer"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    if getattr(args, "dynamic", False):
        cfg.dynamic = True
    if args.seed_given:
        cfg.seed = args.seed
    return cfg.validate()


def cmd_featurize(args, out_dir: Path):
    cfg = _config_from_args(args)
    d = _load_for(cfg)
    assign = _split_from(d, cfg, args.split)
    tr, _, _ = split_indices(assign)
    enc = None
    if args.scheme:
        with open(args.scheme, encoding="utf-8") as fh:
            enc = AttributeEncoder.from_state(json.load(fh))
    feats = featurize(d, hidden_labels(d.labels, tr), dynamic=cfg.dynamic, encoder=enc, weighted=cfg.weighted,
                      boxcox=cfg.boxcox, inconsistency_limit=cfg.inconsistency_limit, max_bins=cfg.max_bins)
    _write_json(out_dir / "scheme.json", feats.encoder.get_state())
    _write_split(out_dir / "split.csv", d, assign)
    _csv(out_dir / "sft.csv", ("node_id",) + SFT_COLUMNS,
         [(nid, *map(_fmt, row)) for nid, row in zip(d.node_ids, feats.structure)])
    afts = feats.attributes if isinstance(feats.attributes, list) else [feats.attributes]
    for t, aft in enumerate(afts):
        name = "aft.csv" if not cfg.dynamic else f"aft_t{t:03d}.csv"
        _csv(out_dir / name, ("node_id",) + tuple(f"f{j}" for j in range(aft.shape[1])),
             [(nid, *(int(v) for v in row)) for nid, row in zip(d.node_ids, aft)])
    if not args.quiet:
        print(f"wrote features for {d.graph.node_count} nodes to {out_dir}")
    return dataclasses.asdict(cfg), {"aft_width": int(afts[0].shape[1])}


def train_run(cfg: RunConfig, out_dir: Path, quiet: bool = True) -> dict:
    """One training run; writes history, metrics, embeddings, checkpoint and split."""
    from .model import GCNModel, train

    out_dir.mkdir(parents=True, exist_ok=True)
    d = _load_for(cfg)
    assign = _split_from(d, cfg)
    tr, va, te = split_indices(assign)
    feats = featurize(d, hidden_labels(d.labels, tr), dynamic=cfg.dynamic, weighted=cfg.weighted,
                      boxcox=cfg.boxcox, inconsistency_limit=cfg.inconsistency_limit, max_bins=cfg.max_bins)
    afts = feats.attributes if isinstance(feats.attributes, list) else [feats.attributes]
    steps = [(feats.propagation, a, feats.structure) for a in afts]
    model = GCNModel.init(afts[0].shape[1], feats.structure.shape[1], mode=cfg.mode, hidden=cfg.hidden,
                          class_count=cfg.class_count, n_layers=cfg.n_layers, seed=cfg.seed)
    config = dataclasses.asdict(cfg)
    try:
        model, hist, opt = train(model, steps, d.labels, tr, va if len(va) else None, lr=cfg.lr,
                                 max_epoch=cfg.max_epoch, patience=cfg.patience, optimizer=cfg.optimizer)
    except TrainingError as exc:
        bad = GCNModel.init(afts[0].shape[1], feats.structure.shape[1], mode=cfg.mode, hidden=cfg.hidden,
                            class_count=cfg.class_count, n_layers=cfg.n_layers, seed=cfg.seed)
        bad.load_values(exc.checkpoint)
        save_checkpoint(out_dir / "checkpoint_last_good.json", checkpoint_dict(bad, None, config))
        raise

    t0 = time.perf_counter()
    probs, aet = forward_dynamic(model, steps)
    tet = time.perf_counter() - t0
    eval_idx = te if len(te) else va
    metrics = evaluate(probs[eval_idx], d.labels[eval_idx], cfg.class_count)
    metrics.iterations_to_converge = hist.best_epoch
    metrics.astt_seconds, metrics.oit_seconds, metrics.tet_seconds = hist.astt_seconds, hist.oit_seconds, tet
    report = {"test": metrics.to_dict(), "epochs_run": len(hist.epoch), "stopped_early": hist.stopped_early}
    if len(va):
        report["validation"] = evaluate(probs[va], d.labels[va], cfg.class_count).to_dict()

    atomic_write_text(out_dir / "history.csv", history_csv(hist))
    _write_json(out_dir / "metrics.json", report)
    _csv(out_dir / "embeddings.csv", ("node_id",) + tuple(f"e{j}" for j in range(aet.shape[1])),
         [(nid, *map(_fmt, row)) for nid, row in zip(d.node_ids, aet)])
    _write_split(out_dir / "split.csv", d, assign)
    save_checkpoint(out_dir / "checkpoint.json",
                    checkpoint_dict(model, opt, config, extra={"encoder": feats.encoder.get_state(),
                                                               "best_epoch": hist.best_epoch}))
    if not quiet:
        print(f"{cfg.mode}: test accuracy {metrics.accuracy:.4f}, macro-F1 {metrics.macro_f1:.4f}, "
              f"best epoch {hist.best_epoch}/{len(hist.epoch)}")
    return {"history": hist, "metrics": metrics}


def _grid_worker(job):
    cfg_dict, out_dir = job
    cfg = RunConfig(**cfg_dict).validate()
    res = train_run(cfg, Path(out_dir))
    return out_dir, res["metrics"].accuracy


def cmd_train(args, out_dir: Path):
    cfg = _config_from_args(args)
    if args.grid:
        with open(args.grid, encoding="utf-8") as fh:
            grid = json.load(fh)
        keys = sorted(grid)
        import itertools

        jobs = []
        for i, combo in enumerate(itertools.product(*(grid[k] for k in keys))):
            run = dataclasses.replace(cfg, **dict(zip(keys, combo))).validate()
            jobs.append((dataclasses.asdict(run), str(out_dir / f"run_{i:03d}")))
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_grid_worker, jobs))
        _write_json(out_dir / "grid.json", [{"out_dir": o, "config": j[0], "test_accuracy": a}
                                            for (o, a), j in zip(results, jobs)])
        if not args.quiet:
            for o, a in results:
                print(f"{o}: test accuracy {a:.4f}")
        return dataclasses.asdict(cfg), {"runs": len(jobs)}
    res = train_run(cfg, out_dir, quiet=args.quiet)
    m = res["metrics"]
    return dataclasses.asdict(cfg), {"astt_seconds": m.astt_seconds, "oit_seconds": m.oit_seconds,
                                     "tet_seconds": m.tet_seconds}


def _restore(args):
    ckpt = load_checkpoint(args.checkpoint)
    model = model_from_checkpoint(ckpt)
    enc = AttributeEncoder.from_state(ckpt["encoder"])
    cfg = RunConfig(**ckpt["config"])
    for name in ("nodes", "edges", "timeseries"):
        val = getattr(args, name, None)
        if val is not None:
            setattr(cfg, name, val)
    d = _load_for(cfg)
    feats = featurize(d, d.labels, dynamic=cfg.dynamic, encoder=enc, weighted=cfg.weighted)
    afts = feats.attributes if isinstance(feats.attributes, list) else [feats.attributes]
    probs, aet = forward_dynamic(model, [(feats.propagation, a, feats.structure) for a in afts])
    return cfg, d, probs, aet


def cmd_evaluate(args, out_dir: Path):
    cfg, d, probs, _ = _restore(args)
    if args.split:
        assign = _read_split(args.split, d)
        idx = np.flatnonzero(assign == SPLITS.index(args.subset))
    else:
        idx = np.arange(d.graph.node_count)
    metrics = evaluate(probs[idx], d.labels[idx], cfg.class_count)
    _write_json(out_dir / "metrics.json", metrics.to_dict())
    if not args.quiet:
        print(f"accuracy {metrics.accuracy:.4f}, macro-F1 {metrics.macro_f1:.4f} on {idx.size} nodes")
    return dataclasses.asdict(cfg), {"accuracy": metrics.accuracy}


def cmd_predict(args, out_dir: Path):
    cfg, d, probs, _ = _restore(args)
    pred = probs.argmax(axis=1)
    names = [RISK_LABELS[k] if k < len(RISK_LABELS) else f"class_{k}" for k in range(probs.shape[1])]
    _csv(out_dir / "predictions.csv", ("node_id", "label") + tuple(f"p_{n}" for n in names),
         [(nid, names[p], *map(_fmt, row)) for nid, p, row in zip(d.node_ids, pred, probs)])
    if not args.quiet:
        print(f"wrote {out_dir / 'predictions.csv'}")
    return dataclasses.asdict(cfg), {"predictions": str(out_dir / "predictions.csv")}


def cmd_gradcheck(args, out_dir: Path):
    errors = {m: gradient_check(m, n=args.n, seed=args.seed) for m in MODES}
    worst = max(errors.values())
    for m, e in errors.items():
        print(f"{m}: max relative error {e:.3e}")
    print(f"max relative error {worst:.3e} (tolerance {GRADCHECK_TOLERANCE:g})")
    if worst >= GRADCHECK_TOLERANCE:
        raise CliError(f"gradient check failed: max relative error {worst:.3e}")
    return {"n": args.n}, errors


# argument parsing ------------------------------------------------------------

class _SeedAction(argparse.Action):
    def __call__(self, parser, namespace, values, option_string=None):
        setattr(namespace, self.dest, values)
        namespace.seed_given = True


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="suppress progress output")
    common.add_argument("--seed", type=int, default=0, action=_SeedAction, help="random seed (default 0)")
    common.add_argument("--out-dir", default=".", help="directory for outputs (default: current)")

    p = argparse.ArgumentParser(prog="riskgraph", description="Graph risk-level classification pipeline.")
    p.add_argument("--version", action="version", version=f"riskgraph {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    s.add_argument("--config")
    s.add_argument("--n", type=int)
    s.add_argument("--communities", type=int)
    s.add_argument("--edge-prob-in", help="one probability or a comma list, one per community")
    s.add_argument("--edge-prob-out", type=float)
    s.add_argument("--label-rule", choices=("community", "community_attr"))
    s.add_argument("--attr-noise", type=float)
    s.add_argument("--flight-hubs", type=int)
    s.add_argument("--timestamps", type=int)
    s.set_defaults(func=cmd_synth)

    m = sub.add_parser("motifs", parents=[common], help="count node motif degrees")
    m.add_argument("--nodes", required=True)
    m.add_argument("--edges", required=True)
    m.add_argument("--out")
    m.add_argument("--significance", type=int, metavar="ENSEMBLE", help="also test significance vs rewired graphs")
    m.add_argument("--p-threshold", type=float, default=2.0)
    m.add_argument("--u-threshold", type=float, default=4)
    m.add_argument("--d-threshold", type=float, default=0.1)
    m.set_defaults(func=cmd_motifs)

    def run_flags(sp):
        sp.add_argument("--config")
        sp.add_argument("--nodes")
        sp.add_argument("--edges")
        sp.add_argument("--timeseries")
        sp.add_argument("--dynamic", action="store_true")

    f = sub.add_parser("featurize", parents=[common], help="build attribute and structural tensors")
    run_flags(f)
    f.add_argument("--scheme", help="reuse a scheme.json written by an earlier run")
    f.add_argument("--split", help="split.csv to take training labels from")
    f.set_defaults(func=cmd_featurize)

    t = sub.add_parser("train", parents=[common], help="train a classifier")
    run_flags(t)
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--lr", type=float)
    t.add_argument("--max-epoch", type=int)
    t.add_argument("--patience", type=int)
    t.add_argument("--hidden", type=int)
    t.add_argument("--class-count", type=int)
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--grid", help="JSON object mapping config keys to lists of values")
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", parents=[common], help="score a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--nodes")
    e.add_argument("--edges")
    e.add_argument("--timeseries")
    e.add_argument("--split")
    e.add_argument("--subset", choices=SPLITS, default="test")
    e.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", parents=[common], help="predict risk levels with a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--nodes")
    pr.add_argument("--edges")
    pr.add_argument("--timeseries")
    pr.set_defaults(func=cmd_predict)

    g = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    g.add_argument("--n", type=int, default=20, help="nodes in the random graph")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "seed_given"):
        args.seed_given = False
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    out_dir = Path(args.out_dir)
    started = time.time()
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        config, timings = args.func(args, out_dir)
    except (CliError, SchemaError, GraphError, TrainingError, ValueError, KeyError, OSError) as exc:
        # str(KeyError) wraps the message in quotes
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        payload = {"error": type(exc).__name__, "command": args.command, "message": message}
        for attr in ("path", "line", "column", "epoch"):
            if hasattr(exc, attr):
                payload[attr] = getattr(exc, attr)
        print(json.dumps(payload, sort_keys=True), file=sys.stderr)
        return 1
    _run_meta(out_dir, args.command, config, args.seed, started, timings)
    return 0


if __name__ == "__main__":
    sys.exit(main())

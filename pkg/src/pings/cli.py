"""``pings`` command line: train, sample, evaluate, benchmark, plot data.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(divergence, unreadable or malformed inputs, unwritable outputs).
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import shlex
import sys
from pathlib import Path

import numpy as np

from . import __version__, bench, core, diffusion, dho
from .artifacts import ArtifactError, header_lines, read_samples, write_samples, write_table, write_text
from .config import ConfigError, apply_section, gmm_from_section, load_config, parse_overrides, section
from .gmm import sample as sample_target
from .metrics import evaluation_report, mode_coverage
from .nn import ModelFormatError, load_params, save_params
from .optim import TrainingDivergence
from .rng import SeededRng

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("pings")


class UsageError(Exception):
    pass


class RuntimeFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# shared plumbing


def _settings(args) -> dict[str, str]:
    flat = load_config(args.config) if args.config else {}
    flat.update(parse_overrides(args.set))
    return flat


def _command_line(argv) -> str:
    return " ".join(["pings", *(shlex.quote(a) for a in argv)])


def _check_out(path) -> Path:
    p = Path(path)
    if not p.parent.is_dir():
        raise RuntimeFailure(f"output directory {p.parent} does not exist")
    return p


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def model_kind(dims) -> str:
    io = (dims[0], dims[-1])
    if io == (4, 3):
        return "pings"
    if io == (3 + 64, 3):
        return "eps"
    if io == (2, 1):
        return "dho"
    raise RuntimeFailure(f"unrecognised network with dims {list(dims)}")


def load_model(path):
    try:
        params = load_params(path)
    except OSError as exc:
        raise RuntimeFailure(f"cannot read model {path}: {exc.strerror}") from None
    except ModelFormatError as exc:
        raise RuntimeFailure(str(exc)) from None
    return model_kind(params.spec.layer_dims), params


def _training_log(path, header, rows, columns) -> None:
    write_table(path, columns, ([row[c] for c in columns] for row in rows), header)


def _apply_common(cfg, args, name):
    cfg = apply_section(cfg, section(args.settings, name), name)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    for key in ("epochs", "batch", "mode"):
        value = getattr(args, key, None)
        if value is not None:
            changes[key] = value
    return apply_section(cfg, {k: str(v) for k, v in changes.items()}, name) if changes else cfg


# ---------------------------------------------------------------------------
# commands


def cmd_train_pings(args) -> int:
    out = _check_out(args.out)
    cfg = _apply_common(core.TrainConfig(), args, "pings")
    spec = gmm_from_section(section(args.settings, "gmm"))
    resolved = {"pings": cfg.to_dict(), "gmm": spec.to_dict()}
    result = core.train(cfg, spec)
    save_params(result.model.params, out)
    extra = {"model": out.name, "best_epoch": result.best_epoch, "best_loss": repr(result.best_loss),
             "epochs_run": result.epochs_run, "stopped_early": result.stopped_early}
    header = header_lines(args.command_line, cfg.seed, resolved, extra)
    _training_log(f"{out}.log", header, result.log, ["epoch", "lr", *core.TERMS, "total"])
    print(f"saved {out} (best total {result.best_loss:.6g} at epoch {result.best_epoch})")
    return EXIT_OK


def cmd_train_dho(args) -> int:
    out = _check_out(args.out)
    cfg = _apply_common(dho.DhoConfig(), args, "dho")
    result = dho.train_dho(cfg)
    save_params(result.params, out)
    mse = {xi: dho.evaluate_mse(result.params, xi, cfg) for xi in dho.REPORT_XIS}
    extra = {"model": out.name, "best_epoch": result.best_epoch, "best_loss": repr(result.best_loss),
             "epochs_run": result.epochs_run, "stopped_early": result.stopped_early}
    extra.update({f"mse_xi_{xi:g}": repr(v) for xi, v in mse.items()})
    header = header_lines(args.command_line, cfg.seed, {"dho": cfg.to_dict()}, extra)
    _training_log(f"{out}.log", header, result.log, ["epoch", "lr", "ic_val", "ic_der", "res", "total"])
    print("xi\tmse")
    for xi, v in mse.items():
        print(f"{xi:g}\t{v:.6e}")
    return EXIT_OK


def cmd_train_eps(args) -> int:
    out = _check_out(args.out)
    cfg = _apply_common(diffusion.EpsTrainConfig(), args, "eps")
    spec = gmm_from_section(section(args.settings, "gmm"))
    result = diffusion.train_eps(cfg, spec)
    save_params(result.net.params, out)
    extra = {"model": out.name, "best_epoch": result.best_epoch, "best_loss": repr(result.best_loss),
             "epochs_run": result.epochs_run, "stopped_early": result.stopped_early}
    header = header_lines(args.command_line, cfg.seed, {"eps": cfg.to_dict(), "gmm": spec.to_dict()}, extra)
    _training_log(f"{out}.log", header, result.log, ["epoch", "lr", "eps"])
    print(f"saved {out} (best loss {result.best_loss:.6g} at epoch {result.best_epoch})")
    return EXIT_OK


def _default_steps(kind: str) -> int | None:
    return {"ddim": 50, "dpm2": 10}.get(kind)


def make_sampler(model_path, kind: str, steps: int | None):
    """Return (name, sampler(n, rng) -> SampleBatch) for a stored model."""
    mkind, params = load_model(model_path)
    if kind == "pings":
        if mkind != "pings":
            raise UsageError(f"sampler 'pings' needs a generator model, {model_path} holds a network of kind '{mkind}'")
        if steps not in (None, 1):
            raise UsageError("the pings sampler always uses a single network call; drop --steps")
        model = core.PingsModel(params)
        return "pings", lambda n, rng: core.sample(model, n, rng)
    if kind in diffusion.SAMPLERS:
        if mkind != "eps":
            raise UsageError(f"sampler {kind!r} needs an eps-net, {model_path} holds a network of kind '{mkind}'")
        steps = _default_steps(kind) if steps is None else steps
        net = diffusion.EpsNet(params)
        return f"{kind}-{steps}", lambda n, rng: diffusion.sample(net, kind, n, rng, steps)
    raise UsageError(f"unknown sampler {kind!r}")


def cmd_sample(args) -> int:
    out = _check_out(args.out)
    if args.n < 0:
        raise UsageError("--n must be >= 0")
    name, sampler = make_sampler(args.model, args.sampler, args.steps)
    seed = 42 if args.seed is None else args.seed
    resolved = {"sample": {"sampler": name, "n": args.n, "model_sha256": _file_digest(args.model)}}
    if args.n == 0:
        nfe = 1 if args.sampler == "pings" else int(name.split("-")[1])
        extra = {"sampler": name, "n": 0, "nfe": nfe, "true_calls": 0}
        points = np.zeros((0, 3))
    else:
        batch = sampler(args.n, SeededRng(seed, "sample"))
        extra = {"sampler": name, "n": batch.n, "nfe": batch.nfe, "true_calls": batch.true_calls}
        if not args.deterministic:
            extra["wall_clock_s"] = repr(batch.wall_clock)
        points = batch.points
    write_samples(out, points, header_lines(args.command_line, seed, resolved, extra))
    return EXIT_OK


METRIC_KEYS = ("mmd2", "mean_mse", "cov_mse", "skew_mse", "kurt_mse")


def cmd_eval(args) -> int:
    points, meta = read_samples(args.samples)
    if points.shape[0] < 4:
        raise RuntimeFailure(f"{args.samples}: need at least 4 points to evaluate, got {points.shape[0]}")
    seed = 42 if args.seed is None else args.seed
    spec = gmm_from_section(section(args.settings, "gmm"))
    target = sample_target(spec, args.n, SeededRng(seed, "eval-target"))
    report = evaluation_report(points, target)
    coverage = mode_coverage(points, spec)
    lines = [f"{k}={report[k]!r}" for k in METRIC_KEYS]
    lines += [f"coverage_{k}={float(c)!r}" for k, c in enumerate(coverage)]
    columns = ["samples", "n", "n_target", *METRIC_KEYS, *(f"coverage_{k}" for k in range(len(coverage)))]
    row = [Path(args.samples).name, str(points.shape[0]), str(args.n), *(repr(report[k]) for k in METRIC_KEYS),
           *(repr(float(c)) for c in coverage)]
    machine = ["\t".join(columns), "\t".join(row)]
    print("\n".join(lines))
    print("\n".join(machine))
    if args.out:
        out = _check_out(args.out)
        resolved = {"eval": {"n_target": args.n, "samples_sha256": _file_digest(args.samples)}, "gmm": spec.to_dict()}
        extra = {"sampler": meta.get("sampler", "unknown")}
        write_text(out, header_lines(args.command_line, seed, resolved, extra) + lines + machine)
    return EXIT_OK


def _parse_bench_list(items: list[str]) -> list[tuple[str, int | None]]:
    out = []
    for item in items:
        kind, _, steps = item.partition("-")
        out.append((kind, int(steps) if steps else None))
    return out


def cmd_bench(args) -> int:
    models = {}
    for path in args.model or ():
        kind, _ = load_model(path)
        models.setdefault(kind, path)
    wanted = _parse_bench_list(args.samplers.split(",")) if args.samplers else \
        [(k, s) for k, s in (("pings", None), ("dpm2", 10), ("dpm2", 20), ("ddim", 50))
         if models.get("pings" if k == "pings" else "eps")]
    if not wanted:
        raise UsageError("nothing to benchmark; pass --model with a generator and/or eps-net")
    seed = 42 if args.seed is None else args.seed
    results = []
    for kind, steps in wanted:
        path = models.get("pings" if kind == "pings" else "eps")
        if path is None:
            raise UsageError(f"no model loaded for sampler {kind}")
        name, sampler = make_sampler(path, kind, steps)
        try:
            results.append(bench.time_generation(name, sampler, args.n, args.runs, args.warmup, seed))
        except Exception as exc:
            done = ", ".join(r.sampler for r in results) or "none"
            raise RuntimeFailure(f"benchmark of {name} failed ({exc}); completed before failure: {done}") from exc
    table = bench.speed_report(results)
    machine = bench.format_machine_rows(results)
    print(table, end="")
    print(machine, end="")
    if args.out:
        out = _check_out(args.out)
        resolved = {"bench": {"n": args.n, "runs": args.runs, "warmup": args.warmup,
                              "samplers": [r.sampler for r in results]}}
        write_text(out, header_lines(args.command_line, seed, resolved) + machine.rstrip("\n").split("\n"))
    return EXIT_OK


def _parse_axes(text: str) -> tuple[int, int]:
    try:
        a, b = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--axes expects two comma-separated indices in 1..3, got {text!r}") from None
    if not (1 <= a <= 3 and 1 <= b <= 3) or a == b:
        raise UsageError(f"--axes expects two distinct indices in 1..3, got {text!r}")
    return a - 1, b - 1


def cmd_plot_data(args) -> int:
    from . import plotting

    if not args.samples and not args.dho_model:
        raise UsageError("plot-data needs sample files and/or --dho-model")
    prefix = Path(args.out)
    if not prefix.parent.is_dir():
        raise RuntimeFailure(f"output directory {prefix.parent} does not exist")
    axes = _parse_axes(args.axes)
    labels = args.labels.split(",") if args.labels else [Path(p).stem for p in args.samples]
    if len(labels) != len(args.samples):
        raise UsageError(f"{len(labels)} labels for {len(args.samples)} sample files")
    resolved = {"plot": {"axes": [a + 1 for a in axes], "labels": labels,
                         "inputs": {lab: _file_digest(p) for lab, p in zip(labels, args.samples)}}}
    header = header_lines(args.command_line, 0, resolved)
    written = []
    if args.samples:
        series = {lab: read_samples(p)[0][:, list(axes)] for lab, p in zip(labels, args.samples)}
        cols = ["series", f"x{axes[0] + 1}", f"x{axes[1] + 1}"]
        rows = ([lab, float(r[0]), float(r[1])] for lab, pts in series.items() for r in pts)
        write_table(f"{prefix}_projection.tsv", cols, rows, header)
        plotting.projection_figure(series, axes, f"{prefix}_projection.png")
        written += [f"{prefix}_projection.tsv", f"{prefix}_projection.png"]
    if args.dho_model:
        kind, params = load_model(args.dho_model)
        if kind != "dho":
            raise UsageError(f"--dho-model expects an oscillator network, got a network of kind '{kind}'")
        curves = dho.curves(params)
        rows = ([xi, float(z), float(p), float(a)] for xi, (zs, ps, ans) in curves.items()
                for z, p, a in zip(zs, ps, ans))
        write_table(f"{prefix}_dho.tsv", ["xi", "z", "prediction", "analytic"], rows, header)
        plotting.dho_figure(curves, f"{prefix}_dho.png")
        written += [f"{prefix}_dho.tsv", f"{prefix}_dho.png"]
    for w in written:
        print(w)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed (default 42)")
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="pings", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pings {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    tp = sub.add_parser("train-pings", parents=[common], help="train the one-call generator")
    tp.add_argument("--out", required=True, help="model file to write (log goes to <out>.log)")
    tp.add_argument("--mode", choices=core.MODES)
    tp.add_argument("--epochs", type=int)
    tp.add_argument("--batch", type=int)
    tp.set_defaults(func=cmd_train_pings)

    td = sub.add_parser("train-dho", parents=[common], help="train the oscillator PINN")
    td.add_argument("--out", required=True)
    td.add_argument("--epochs", type=int)
    td.set_defaults(func=cmd_train_dho)

    te = sub.add_parser("train-eps", parents=[common], help="train the diffusion eps-net")
    te.add_argument("--out", required=True)
    te.add_argument("--epochs", type=int)
    te.add_argument("--batch", type=int)
    te.set_defaults(func=cmd_train_eps)

    sp = sub.add_parser("sample", parents=[common], help="draw samples from a stored model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--sampler", choices=("pings", *diffusion.SAMPLERS), default="pings")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--n", type=int, default=10_000)
    sp.add_argument("--out", required=True)
    sp.add_argument("--deterministic", action="store_true", help="omit wall-clock from the header")
    sp.set_defaults(func=cmd_sample)

    ev = sub.add_parser("eval", parents=[common], help="compare a sample file with fresh target draws")
    ev.add_argument("samples")
    ev.add_argument("--n", type=int, default=10_000, help="number of target draws")
    ev.add_argument("--out", help="also write the report here")
    ev.set_defaults(func=cmd_eval)

    bp = sub.add_parser("bench", parents=[common], help="time batched generation")
    bp.add_argument("--model", action="append", help="generator and/or eps-net weights (repeatable)")
    bp.add_argument("--samplers", help="comma list like pings,dpm2-10,dpm2-20,ddim-50")
    bp.add_argument("--n", type=int, default=10_000)
    bp.add_argument("--runs", type=int, default=5)
    bp.add_argument("--warmup", type=int, default=2)
    bp.add_argument("--out", help="write machine-readable rows here")
    bp.set_defaults(func=cmd_bench)

    pd = sub.add_parser("plot-data", parents=[common], help="write projection / oscillator data and figures")
    pd.add_argument("samples", nargs="*")
    pd.add_argument("--axes", default="1,2")
    pd.add_argument("--labels", help="comma-separated series labels")
    pd.add_argument("--dho-model")
    pd.add_argument("--out", required=True, help="output prefix")
    pd.set_defaults(func=cmd_plot_data)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"pings: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:   # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    args.command_line = _command_line(argv)
    try:
        args.settings = _settings(args)
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"pings: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (RuntimeFailure, ArtifactError, TrainingDivergence, ValueError, OSError) as exc:
        print(f"pings: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

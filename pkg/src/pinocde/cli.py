"""Command-line driver: ``pinocde <command> [--config FILE] [--run-dir DIR] [--set key=value ...]``.

Run directory layout::

    config.snapshot   resolved configuration used by the last command
    dataset/          manifest.json + float64 blobs
    weights/          equation-normalisation weights
    model/            checkpoint
    reports/          CSV tables and PDF grids
    plots/            CSV series and the PNGs rendered from them

Exit codes: 0 success, 1 invalid arguments or configuration (nothing is
written), 2 failure while running.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np
from pydantic import ValidationError

log = logging.getLogger("pinocde")

COMMANDS = ("gen-data", "en-weights", "train", "eval", "predict", "recover", "pdem", "mc", "compare",
            "sweep", "ablate", "export")
RUN_ROOT_ENV = "PINOCDE_RUN_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pinocde", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", type=Path, help="JSON run configuration")
    p.add_argument("--run-dir", type=Path, help=f"output directory (default ${RUN_ROOT_ENV}/<config stem>)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a scalar config field, e.g. train.epochs=50")
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--index", type=int, action="append", help="pair index for predict/recover")
    p.add_argument("--shapes", type=Path, help="mode-shape table CSV for recover")
    p.add_argument("--body", help="flexible body whose modal coordinates feed recover")
    p.add_argument("--truth", action="store_true", help="recover from ground truth instead of the model")
    p.add_argument("--kind", choices=("overlay", "loss", "pdf", "dp"), help="export artifact kind")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# -- helpers --------------------------------------------------------------------------

class Run:
    def __init__(self, root: Path, cfg, raw: dict, jobs: int):
        self.root, self.cfg, self.raw, self.jobs = root, cfg, raw, jobs

    def dir(self, name: str) -> Path:
        d = self.root / name
        d.mkdir(parents=True, exist_ok=True)
        return d

    def write_snapshot(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        text = json.dumps(self.cfg.model_dump(mode="json"), sort_keys=True, indent=1) + "\n"
        (self.root / "config.snapshot").write_text(text)

    # artefacts ------------------------------------------------------------------------
    def dataset(self):
        from .oracle import load_dataset
        path = self.root / "dataset"
        if not (path / "manifest.json").exists():
            raise FileNotFoundError(f"no dataset in {path}; run gen-data first")
        return load_dataset(path)

    def en_weights(self, ds_hash):
        from .en import load_en_weights
        path = self.root / "weights"
        if not (path / "manifest.json").exists():
            return None
        return load_en_weights(path, ds_hash)

    def model(self, ds_hash=None):
        from .pino.checkpoint import load_checkpoint
        path = self.root / "model"
        if not (path / "manifest.json").exists():
            raise FileNotFoundError(f"no model in {path}; run train first")
        return load_checkpoint(path, ds_hash)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _train_once(run: Run, ds, ds_hash, cfg_train, arch, model_seed):
    import torch
    from .pino.model import init_model
    from .pino.train import train

    en = None
    if cfg_train.en and (cfg_train.eq or cfg_train.veq):
        en = run.en_weights(ds_hash)
        if en is None:
            raise FileNotFoundError("EN is enabled but weights/ is empty; run en-weights first")
    torch.set_num_threads(max(1, run.jobs))
    n_in = len(ds.space.names) + ds.F.shape[-1] + 1
    model = init_model(arch, n_in, ds.n_dof, ds.n_t, seed=model_seed)
    t0 = time.perf_counter()
    model, report = train(model, ds, en, cfg_train)
    return model, report, time.perf_counter() - t0


# -- commands -------------------------------------------------------------------------

def cmd_gen_data(run: Run) -> None:
    from .config import resolve_space, resolve_system
    from .oracle import build_dataset, save_dataset
    c = run.cfg.dataset
    ds = build_dataset(resolve_system(run.cfg), resolve_space(run.cfg), c.n_train, c.n_test,
                       c.n_virtual, c.seed, jobs=run.jobs)
    h = save_dataset(ds, run.dir("dataset"))
    print(h)


def cmd_en_weights(run: Run) -> None:
    from .en import compute_en_weights, save_en_weights
    ds, h = run.dataset()
    c = run.cfg.en
    w = compute_en_weights(ds, r=c.r, seed=c.seed, draws=c.draws, cap=c.cap)
    save_en_weights(w, run.dir("weights"), h)
    print(h)


def cmd_train(run: Run) -> None:
    from .pino.checkpoint import save_checkpoint
    from .plotting import write_loss_curves
    ds, h = run.dataset()
    tc = run.cfg.train.resolved()
    model, report, secs = _train_once(run, ds, h, tc, run.cfg.arch, run.cfg.model_seed)
    save_checkpoint(model, ds.norm, run.dir("model"), dataset_hash=h,
                    extra={"train": tc.model_dump(mode="json"), "epochs": tc.epochs})
    report.to_csv(run.dir("reports") / "train_report.csv")
    write_loss_curves(report, run.dir("plots") / "loss_curves.csv")
    log.info("trained %d epochs in %.1f s", tc.epochs, secs)


def cmd_eval(run: Run) -> None:
    from .pino.train import evaluate
    ds, h = run.dataset()
    model, stats, manifest = run.model(h)
    r = evaluate(model, ds, run_split(run), stats)
    row = run.cfg.train.row or "custom"
    _write_rows(run.dir("reports") / f"eval_{run_split(run)}.csv",
                ["row", "solutions", "d1", "d2", "average"],
                [[row, r["solutions"], r["d1"], r["d2"], r["average"]]])
    print(f"{row},{r['solutions']:.3f},{r['d1']:.3f},{r['d2']:.3f},{r['average']:.3f}")


def run_split(run: Run) -> str:
    return getattr(run, "split", "test")


def cmd_predict(run: Run) -> None:
    from .pino.train import predict
    from .plotting import write_overlay
    ds, h = run.dataset()
    model, stats, _ = run.model(h)
    idx = run.indices or [int(ds.indices(run_split(run))[0])]
    for i in idx:
        if not 0 <= i < ds.n_pairs:
            raise IndexError(f"pair {i} outside the dataset")
        u, du, ddu = predict(model, stats, ds.P[i:i + 1], ds.F[i:i + 1], ds.dt)
        truth = ds.U[i] if i < ds.n_train + ds.n_test else None
        write_overlay(run.dir("plots") / f"overlay_{i}.csv", ds.space.time_grid(), truth, u[0], ds.labels)
        _write_rows(run.dir("reports") / f"predict_{i}.csv",
                    ["t"] + [f"{k}_{lab}" for k in ("u", "du", "ddu") for lab in ds.labels],
                    [[t] + list(u[0, j]) + list(du[0, j]) + list(ddu[0, j])
                     for j, t in enumerate(ds.space.time_grid())])


def cmd_recover(run: Run) -> None:
    from .modal import ModeShapeTable, recover_field
    from .pino.train import predict
    from .system import _layout
    ds, h = run.dataset()
    table = ModeShapeTable.from_csv(run.shapes)
    lay = _layout(ds.system)
    if run.body not in lay.body_slices:
        raise UsageError(f"unknown body {run.body!r}")
    sl, _ = lay.body_slices[run.body]
    idx = run.indices or [int(ds.indices(run_split(run))[0])]
    model = stats = None
    if not run.truth:
        model, stats, _ = run.model(h)
    for i in idx:
        if run.truth:
            if i >= ds.n_train + ds.n_test:
                raise IndexError(f"pair {i} has no ground truth")
            u = ds.U[i]
        else:
            u = predict(model, stats, ds.P[i:i + 1], ds.F[i:i + 1], ds.dt)[0][0]
        field = recover_field(table, u[:, sl])
        names = [",".join(f"{v:g}" for v in pt) for pt in table.points]
        _write_rows(run.dir("reports") / f"recover_{run.body}_{i}.csv", ["t"] + [f"p({n})" for n in names],
                    [[t] + list(field[j]) for j, t in enumerate(ds.space.time_grid())])


def _provider(run: Run, source: str, quantity: str):
    from .config import resolve_space, resolve_system
    from .uq.quantity import oracle_provider, parse_quantity, surrogate_provider
    system, space = resolve_system(run.cfg), resolve_space(run.cfg)
    q = parse_quantity(system, quantity)
    if source == "oracle":
        return oracle_provider(system, space, q), space
    model, stats, _ = run.model()
    return surrogate_provider(model, stats, space, q), space


def cmd_pdem(run: Run) -> None:
    from .uq.pdem import run_pdem, save_pdf_grid, uniform_grid
    from .uq.points import select_representative_points
    from .system import sample_parameters
    c = run.cfg.pdem
    provider, space = _provider(run, c.provider, c.quantity)
    points = select_representative_points(space, c.n_sel)
    f = sample_parameters(space, c.seed).f
    if c.x_range is None:
        x, _ = provider(points.points, np.ascontiguousarray(np.broadcast_to(f, (len(points),) + f.shape)))
        lo, hi = float(x.min()), float(x.max())
        pad = 0.1 * (hi - lo) if hi > lo else 1.0
        x_range = (lo - pad, hi + pad)
    else:
        x_range = c.x_range
    grid = run_pdem(provider, space, c.n_sel, uniform_grid(*x_range, c.n_x), excitation=f,
                    points=points, on_range=c.on_range, refine=c.refine)
    out = run.dir("reports") / "pdem"
    save_pdf_grid(grid, out)
    grid.to_csv(out / "pdf.csv")


def cmd_mc(run: Run) -> None:
    from .plotting import write_damage_bars
    from .uq.mc import damage_probability, mc_propagate, pdf_estimate, write_damage_csv
    from .uq.pdem import load_pdf_grid, save_pdf_grid, uniform_grid
    from .system import sample_parameters
    c = run.cfg.mc
    provider, space = _provider(run, c.provider, c.quantity)
    exc = sample_parameters(space, run.cfg.pdem.seed).f if c.fixed_excitation else None
    ens = mc_propagate(provider, space, c.n, c.seed, chunk=c.chunk, excitation=exc)
    pdem_dir = run.root / "reports" / "pdem"
    if (pdem_dir / "manifest.json").exists():
        x_grid = load_pdf_grid(pdem_dir).x
    else:
        lo, hi = float(ens.x.min()), float(ens.x.max())
        pad = 0.1 * (hi - lo) if hi > lo else 1.0
        x_grid = uniform_grid(lo - pad, hi + pad, run.cfg.pdem.n_x)
    out = run.dir("reports") / "mc"
    grid = pdf_estimate(ens, x_grid, kde=c.kde)
    save_pdf_grid(grid, out)
    grid.to_csv(out / "pdf.csv")
    thr = run.cfg.compare.thresholds
    if thr:
        # one column per threshold so every threshold gets its own dp
        stacked = np.repeat(ens.x[..., None], len(thr), axis=-1)
        field = damage_probability(stacked, thr, times=run.cfg.compare.times, dt=ens.dt,
                                   absolute=run.cfg.compare.absolute)
        names = [f"{c.quantity}>{t:g}" for t in thr]
        write_damage_csv(field, out / "damage.csv", names)
        write_damage_bars({c.provider: field}, run.dir("plots") / "damage.csv", names)


def cmd_compare(run: Run) -> None:
    from .plotting import write_pdf_slices
    from .uq.mc import compare_pdf, write_compare_csv
    from .uq.pdem import load_pdf_grid
    rep = run.root / "reports"
    for name in ("pdem", "mc"):
        if not (rep / name / "manifest.json").exists():
            raise FileNotFoundError(f"no {name} result in {rep / name}")
    a, b = load_pdf_grid(rep / "pdem"), load_pdf_grid(rep / "mc")
    c = run.cfg.compare
    m = compare_pdf(a, b, times=c.times, thresholds=c.thresholds)
    write_compare_csv(m, rep / "compare.csv")
    if c.times:
        write_pdf_slices({"pdem": a, "mc": b}, c.times, run.dir("plots"), stem="pdf_slice")
    print(f"max_l1,{m['max_l1']:.6f}")
    for s in m["slices"]:
        print(f"l1@{s['t']:g},{s['l1']:.6f}")


def _table_rows(run: Run, ds, h, configs):
    from .pino.model import parameter_count
    from .pino.train import evaluate
    rows = []
    for name, tc, arch in configs:
        model, report, secs = _train_once(run, ds, h, tc, arch, run.cfg.model_seed)
        r = evaluate(model, ds, "test")
        n_in = len(ds.space.names) + ds.F.shape[-1] + 1
        rows.append([name, r["solutions"], r["d1"], r["d2"], r["average"],
                     parameter_count(arch, n_in, ds.n_dof), report.losses["total"][-1] if report.epochs else
                     float("nan"), round(secs, 3)])
        log.info("%s: %.2f / %.2f / %.2f %%", name, r["solutions"], r["d1"], r["d2"])
    return rows


_TABLE_HEAD = ["run", "solutions", "d1", "d2", "average", "n_params", "final_loss", "seconds"]


def cmd_sweep(run: Run) -> None:
    from .config import RunConfig, apply_overrides
    ds, h = run.dataset()
    configs = []
    for i, ov in enumerate(run.cfg.sweep.runs):
        sub = RunConfig.model_validate(apply_overrides(run.cfg.model_dump(mode="json"), ov))
        configs.append((json.dumps(ov, sort_keys=True) or f"run{i}", sub.train.resolved(), sub.arch))
    _write_rows(run.dir("reports") / "sweep.csv", _TABLE_HEAD, _table_rows(run, ds, h, configs))


def cmd_ablate(run: Run) -> None:
    from .pino.train import TrainConfig
    ds, h = run.dataset()
    base = run.cfg.train.resolved().model_dump()
    configs = [(row, TrainConfig.from_row(row, **{k: v for k, v in base.items()
                                                   if k not in ("data", "eq", "dde", "veq", "en")}),
                run.cfg.arch) for row in run.cfg.ablate.rows]
    _write_rows(run.dir("reports") / "ablate.csv", _TABLE_HEAD, _table_rows(run, ds, h, configs))


def cmd_export(run: Run) -> None:
    from .plotting import write_damage_bars, write_loss_curves, write_pdf_slices
    from .pino.train import TrainReport
    from .uq.mc import DamageField
    from .uq.pdem import load_pdf_grid
    kind = run.kind
    rep = run.root / "reports"
    if kind == "overlay":
        cmd_predict(run)
    elif kind == "loss":
        path = rep / "train_report.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing {path}")
        write_loss_curves(_read_report(path, TrainReport), run.dir("plots") / "loss_curves.csv")
    elif kind == "pdf":
        grids = {n: load_pdf_grid(rep / n) for n in ("pdem", "mc") if (rep / n / "manifest.json").exists()}
        if not grids:
            raise FileNotFoundError("no PDF grids under reports/")
        write_pdf_slices(grids, run.cfg.compare.times or [float(next(iter(grids.values())).t[-1])],
                         run.dir("plots"), stem="pdf_slice")
    elif kind == "dp":
        path = rep / "mc" / "damage.csv"
        if not path.exists():
            raise FileNotFoundError(f"missing {path}")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        field = DamageField(dp=np.array([float(r["dp"]) for r in rows]),
                            threshold=np.array([float(r["threshold"]) for r in rows]),
                            times=np.zeros(0), dp_star=np.zeros((0, len(rows))))
        write_damage_bars({"mc": field}, run.dir("plots") / "damage.csv", [r["channel"] for r in rows])


def _read_report(path: Path, cls):
    rep = cls()
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rep.epochs.append(int(row["epoch"]))
            for group, prefix in ((rep.losses, "loss_"), (rep.omega, "omega_"), (rep.rlse, "rlse_")):
                for k in group:
                    group[k].append(float(row[prefix + k]))
    return rep


HANDLERS = {"gen-data": cmd_gen_data, "en-weights": cmd_en_weights, "train": cmd_train, "eval": cmd_eval,
            "predict": cmd_predict, "recover": cmd_recover, "pdem": cmd_pdem, "mc": cmd_mc,
            "compare": cmd_compare, "sweep": cmd_sweep, "ablate": cmd_ablate, "export": cmd_export}


def _run_dir(args) -> Path:
    if args.run_dir is not None:
        return args.run_dir
    root = Path(os.environ.get(RUN_ROOT_ENV, "runs"))
    return root / (args.config.stem if args.config is not None else "default")


def main(argv: list[str] | None = None) -> int:
    from .config import load_config
    try:
        args = build_parser().parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        if args.command == "recover" and (args.shapes is None or args.body is None):
            raise UsageError("recover needs --shapes and --body")
        if args.command == "export" and args.kind is None:
            raise UsageError("export needs --kind")
        root = _run_dir(args)
        cfg_path = args.config
        if cfg_path is None and (root / "config.snapshot").exists():
            cfg_path = root / "config.snapshot"
        cfg, raw = load_config(cfg_path, args.overrides)
    except (UsageError, ValidationError, ValueError, json.JSONDecodeError, OSError) as exc:
        print(f"pinocde: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    run = Run(root, cfg, raw, args.jobs)
    run.split, run.indices, run.shapes = args.split, args.index, args.shapes
    run.body, run.truth, run.kind = args.body, args.truth, args.kind
    try:
        run.write_snapshot()
        HANDLERS[args.command](run)
    except UsageError as exc:
        print(f"pinocde: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("failure", exc_info=True)
        print(f"pinocde: {args.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

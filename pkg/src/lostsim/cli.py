"""Command-line pipeline: upsample-pls, simulate, sample, pdm, evaluate, fit-mobility.

Each command writes its outputs plus ``<command>.manifest.json`` recording
the resolved configuration, seed, input and output checksums and timings.
``replay`` re-runs a manifest and checks the outputs match.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import RunConfig, load_config
from .errors import LostSimError, MissingInputError
from .gis import classify_found_many, load_path_network, load_raster, load_terrain, save_raster
from .gp import file_sha256, normalize_heatmap, posterior_grid, save_model, train
from .metrics import CategoryHistogram, compare_to_reference, load_reference, write_report
from .sampling import (
    FoundSamples,
    build_pdm,
    fit_mobility,
    fit_normal,
    load_histogram,
    log_view,
    mobility_skl,
    read_samples,
    sample_paths,
    save_png,
    write_samples,
)
from .simulation import read_paths, run_monte_carlo, write_paths

logger = logging.getLogger("lostsim")

DEFAULT_REFERENCE = Path(__file__).parent / "data" / "hiker_solo_reference.tsv"


class Run:
    """Book-keeping shared by every command: timings, inputs, outputs."""

    def __init__(self, command: str, args: argparse.Namespace, cfg: RunConfig, argv: list[str]):
        self.command = command
        self.args = args
        self.cfg = cfg
        self.argv = argv
        self.out_dir = Path(args.out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.inputs: dict[str, str] = {}
        self.outputs: list[Path] = []
        self.timings: dict[str, float] = {}
        self._t0 = time.perf_counter()

    def input(self, path) -> Path:
        path = Path(path)
        if not path.exists():
            raise MissingInputError(f"input not found: {path}")
        if path.is_dir():
            for f in sorted(path.iterdir()):
                if f.is_file():
                    self.inputs[str(f.resolve())] = file_sha256(f)
        else:
            self.inputs[str(path.resolve())] = file_sha256(path)
        return path

    def output(self, name: str) -> Path:
        p = self.out_dir / name
        self.outputs.append(p)
        return p

    def stage(self, name: str, started: float) -> None:
        self.timings[name] = round(time.perf_counter() - started, 6)

    def write_manifest(self) -> Path:
        self.timings["total"] = round(time.perf_counter() - self._t0, 6)
        manifest = {
            "command": self.command,
            "version": __version__,
            "argv": self.argv,
            "seed": self.args.seed,
            "config": self.cfg.as_dict(),
            "config_sha256": self.cfg.digest(),
            "inputs": self.inputs,
            "outputs": {p.name: file_sha256(p) for p in self.outputs},
            "timings": self.timings,
        }
        path = self.out_dir / f"{self.command}.manifest.json"
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_upsample_pls(run: Run) -> None:
    a, cfg = run.args, run.cfg
    heat_path = run.input(a.heatmap)
    t = time.perf_counter()
    raw = load_raster(heat_path)
    data = normalize_heatmap(raw)
    model = train(data, cfg.gp_config(a.seed), training_path=heat_path.resolve())
    run.stage("train", t)
    t = time.perf_counter()
    post = posterior_grid(model, cfg.getfloat("gp", "out_cell_size"))
    save_raster(post, run.output("pls_posterior.asc"))
    save_model(model, run.output("pls_model.json"))
    run.stage("posterior", t)
    logger.info("posterior %dx%d @ %g m written", post.n_cols, post.n_rows, post.cell_size)


def cmd_simulate(run: Run) -> None:
    a, cfg = run.args, run.cfg
    t = time.perf_counter()
    terrain = load_terrain(run.input(a.terrain))
    graph = load_path_network(run.input(a.network))
    if a.pls is not None:
        source = load_raster(run.input(a.pls))
    elif a.pls_point is not None:
        source = tuple(a.pls_point)
    else:
        raise LostSimError("simulate needs --pls RASTER or --pls-point X Y")
    config = cfg.sim_config(a.seed, terrain.cell_size, base_dir=Path(a.config).parent if a.config else None)
    run.stage("load", t)
    t = time.perf_counter()
    paths = run_monte_carlo(config, source, terrain, graph, workers=a.workers)
    run.stage("simulate", t)
    n = write_paths(paths, run.output("paths.jsonl"))
    logger.info("%d paths written", n)


def _sample_chunk(job):
    paths, model, m, seed = job
    return sample_paths(paths, model, m, seed)


def _pdm_outputs(run: Run, samples: FoundSamples, template) -> None:
    a, cfg = run.args, run.cfg
    cell = a.pdm_cell_size if a.pdm_cell_size is not None else cfg.optional_float("sampling", "pdm_cell_size")
    pdm = build_pdm(samples.xy, template, cell)
    dropped = len(samples) - pdm.n_samples
    if dropped:
        logger.info("%d samples outside the PDM extent or on nodata were not counted", dropped)
    save_raster(pdm.grid, run.output("pdm.asc"))
    logv = log_view(pdm.grid)
    save_raster(logv, run.output("pdm_log.asc"))
    if getattr(a, "png", False):
        save_png(pdm.grid, run.output("pdm.png"))
        save_png(logv, run.output("pdm_log.png"))


def cmd_sample(run: Run) -> None:
    a, cfg = run.args, run.cfg
    t = time.perf_counter()
    paths = read_paths(run.input(a.paths))
    template = load_terrain(run.input(a.terrain)).dem
    run.stage("load", t)
    model = cfg.mobility()
    m = cfg.getint("sampling", "samples_per_path")
    t = time.perf_counter()
    if a.workers > 1 and len(paths) > 1:
        size = -(-len(paths) // (a.workers * 4))
        jobs = [(paths[i:i + size], model, m, a.seed) for i in range(0, len(paths), size)]
        with ProcessPoolExecutor(a.workers) as pool:
            samples = FoundSamples.concat(pool.map(_sample_chunk, jobs))
    else:
        samples = sample_paths(paths, model, m, a.seed)
    run.stage("sample", t)
    logger.info("%d of %d samples retained (mean time %.3f h, model mean %.3f h)",
                len(samples), m * len(paths), samples.t.mean() if len(samples) else float("nan"), model.mean)
    t = time.perf_counter()
    out = run.output("samples.csv")
    write_samples(samples, out)
    # the PDM is built from the file just written so both outputs agree exactly
    _pdm_outputs(run, read_samples(out), template)
    run.stage("pdm", t)


def cmd_pdm(run: Run) -> None:
    a = run.args
    samples = read_samples(run.input(a.samples))
    template = load_terrain(run.input(a.terrain)).dem
    t = time.perf_counter()
    _pdm_outputs(run, samples, template)
    run.stage("pdm", t)


def cmd_evaluate(run: Run) -> None:
    a = run.args
    samples = read_samples(run.input(a.samples))
    terrain = load_terrain(run.input(a.terrain))
    graph = load_path_network(run.input(a.network))
    reference = load_reference(run.input(a.reference))
    t = time.perf_counter()
    xy = samples.xy
    _, _, inside = terrain.grid.cells_of(xy)
    if not inside.all():
        logger.warning("%d samples outside the terrain were skipped", int((~inside).sum()))
        xy = xy[inside]
    labels = classify_found_many(xy, terrain, graph)
    found = CategoryHistogram.from_labels(labels)
    report = compare_to_reference(found, reference)
    run.stage("classify", t)
    write_report(report, run.output("report.tsv"), run.output("report.txt"))
    logger.info("SKL %.4f against reference (uniform baseline %.4f)", report["skl"],
                report["uniform_baseline_skl"])


def cmd_fit_mobility(run: Run) -> None:
    a, cfg = run.args, run.cfg
    hist = load_histogram(run.input(a.histogram))
    t = time.perf_counter()
    model = fit_mobility(hist, cfg.getfloat("sampling", "speed_kmh"))
    mean, std, normal_skl = fit_normal(hist)
    run.stage("fit", t)
    rec = {
        "mobility_s": model.s,
        "mobility_scale": model.lambda_scale,
        "mobility_loc": model.mu_loc,
        "speed_kmh": model.speed,
        "mean_hours": model.mean,
        "skl": mobility_skl(hist, model),
        "normal_fit": {"mean": mean, "std": std, "skl": normal_skl},
    }
    run.output("mobility.json").write_text(json.dumps(rec, indent=2) + "\n")
    logger.info("log-normal s=%.4f scale=%.4f (SKL %.4g; normal fit %.4g)", model.s, model.lambda_scale,
                rec["skl"], normal_skl)


COMMANDS = {
    "upsample-pls": cmd_upsample_pls,
    "simulate": cmd_simulate,
    "sample": cmd_sample,
    "pdm": cmd_pdm,
    "evaluate": cmd_evaluate,
    "fit-mobility": cmd_fit_mobility,
}

# flag destination -> config (section, key)
OVERRIDES = {
    "n_gen": ("simulation", "n_gen"),
    "d_max": ("simulation", "d_max"),
    "behavior": ("simulation", "behavior"),
    "viewshed_radius": ("behaviors", "viewshed_radius"),
    "samples_per_path": ("sampling", "samples_per_path"),
    "out_cell_size": ("gp", "out_cell_size"),
    "iterations": ("gp", "iterations"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master random seed")
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                        help="worker processes (default: available CPUs)")
    common.add_argument("--out-dir", default=".", help="directory for outputs and manifest")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="lostsim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("upsample-pls", parents=[common], help="GP up-sampling of a PLS heatmap")
    s.add_argument("--heatmap", required=True)
    s.add_argument("--out-cell-size", type=float)
    s.add_argument("--iterations", type=int)

    s = sub.add_parser("simulate", parents=[common], help="generate Monte Carlo paths")
    s.add_argument("--terrain", required=True, help="directory containing terrain.ini")
    s.add_argument("--network", required=True)
    src = s.add_mutually_exclusive_group()
    src.add_argument("--pls", help="non-negative raster to draw places last seen from")
    src.add_argument("--pls-point", type=float, nargs=2, metavar=("X", "Y"))
    s.add_argument("--n-gen", type=int)
    s.add_argument("--d-max", type=float)
    s.add_argument("--viewshed-radius", type=float)
    s.add_argument("--behavior", choices=["head_to_paths", "head_to_buildings", "head_to_trees", "head_to_water"],
                   help="force every path to use one behaviour")

    s = sub.add_parser("sample", parents=[common], help="found-location samples and PDM")
    s.add_argument("--paths", required=True)
    s.add_argument("--terrain", required=True)
    s.add_argument("--samples-per-path", type=int)
    s.add_argument("--pdm-cell-size", type=float)
    s.add_argument("--png", action="store_true", help="also write greyscale images (needs Pillow)")

    s = sub.add_parser("pdm", parents=[common], help="rasterise an existing samples file")
    s.add_argument("--samples", required=True)
    s.add_argument("--terrain", required=True)
    s.add_argument("--pdm-cell-size", type=float)
    s.add_argument("--png", action="store_true")

    s = sub.add_parser("evaluate", parents=[common], help="compare found land cover with a reference")
    s.add_argument("--samples", required=True)
    s.add_argument("--terrain", required=True)
    s.add_argument("--network", required=True)
    s.add_argument("--reference", default=str(DEFAULT_REFERENCE))

    s = sub.add_parser("fit-mobility", parents=[common], help="fit the log-normal mobility model")
    s.add_argument("--histogram", required=True, help="two columns: bin centre (hours), count")

    s = sub.add_parser("replay", help="re-run a manifest and verify its outputs")
    s.add_argument("manifest")
    s.add_argument("--out-dir", required=True)
    return p


def _replay(manifest_path: str, out_dir: str) -> int:
    path = Path(manifest_path)
    if not path.exists():
        raise MissingInputError(f"manifest not found: {path}")
    manifest = json.loads(path.read_text())
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    cfg = RunConfig(manifest["config"])
    cfg_path = Path(out_dir) / "replay_config.ini"
    cfg_path.write_text(cfg.render())
    argv = _strip_flags(manifest["argv"], {"--config": 1, "--out-dir": 1})
    code = main(argv + ["--config", str(cfg_path), "--out-dir", out_dir])
    if code:
        return code
    mismatched = [
        name for name, digest in manifest["outputs"].items()
        if not (Path(out_dir) / name).exists() or file_sha256(Path(out_dir) / name) != digest
    ]
    for name in mismatched:
        logger.error("replayed output %s differs from the manifest", name)
    if not mismatched:
        logger.info("all %d outputs reproduced", len(manifest["outputs"]))
    return 1 if mismatched else 0


def _strip_flags(argv: list[str], flags: dict[str, int]) -> list[str]:
    out, skip = [], 0
    for tok in argv:
        if skip:
            skip -= 1
            continue
        name = tok.split("=", 1)[0]
        if name in flags:
            skip = 0 if "=" in tok else flags[name]
            continue
        out.append(tok)
    return out


def _absolutise(argv: list[str], args: argparse.Namespace) -> list[str]:
    """Argument vector with input paths made absolute, for manifests."""
    path_flags = {"--heatmap", "--terrain", "--network", "--pls", "--paths", "--samples", "--reference",
                  "--histogram"}
    out = []
    prev = None
    for tok in argv:
        if prev in path_flags:
            tok = str(Path(tok).resolve())
        elif "=" in tok and tok.split("=", 1)[0] in path_flags:
            k, v = tok.split("=", 1)
            tok = f"{k}={Path(v).resolve()}"
        out.append(tok)
        prev = tok
    return out


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse uses 2 for usage errors, which here means a missing input
        return 1 if exc.code == 2 else exc.code
    level = logging.DEBUG if getattr(args, "verbose", False) else logging.INFO
    if not logger.handlers:
        handler = logging.StreamHandler()
        handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
        logger.addHandler(handler)
    logger.setLevel(level)
    try:
        if args.command == "replay":
            return _replay(args.manifest, args.out_dir)
        overrides = {key: getattr(args, dest, None) for dest, key in OVERRIDES.items()}
        cfg = load_config(args.config, overrides)
        run = Run(args.command, args, cfg, _absolutise(argv, args))
        COMMANDS[args.command](run)
        run.write_manifest()
        return 0
    except LostSimError as exc:
        logger.error("%s", exc)
        return exc.exit_code
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI must always exit with a code
        logger.error("%s: %s", type(exc).__name__, exc)
        logger.debug("traceback", exc_info=True)
        return 1


if __name__ == "__main__":
    sys.exit(main())

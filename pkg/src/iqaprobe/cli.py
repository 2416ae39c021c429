"""Command-line entry points. Every command writes a run manifest (config,
input hashes, weight hashes, seed, outputs) so a run can be audited and
reproduced bit-exactly.

Exit codes: 0 success, 2 usage error, 3 environment error (such as an
unbindable port), 4 numerical failure at runtime.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from . import evaluation as ev
from . import study as st
from .attack import AttackConfig, AttackNumericalError, CandidateSet, enhance, run_sweep
from .defaults import data_dir, load_default_extractor, load_default_model, load_default_models
from .fidelity import MEASURE_KINDS, get_measure
from .images import ImageError, load_image, save_png
from .quality import MODEL_KINDS, QualityError, fit_calibration
from .testset import load_proxy_mos, make_testset
from .weights import WeightFormatError

EXIT_ENVIRONMENT = 3
EXIT_NUMERICAL = 4


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _weight_files(model_kind: str | None, with_extractor: bool) -> list[Path]:
    files = []
    if model_kind is not None:
        files += [data_dir() / f"{model_kind}.iqaw", data_dir() / f"{model_kind}.calib"]
    if with_extractor:
        files.append(data_dir() / "extractor.iqaw")
    return files


def write_manifest(
    outdir: Path,
    command: str,
    config: dict,
    inputs: list,
    weights: list,
    seed: int,
    outputs: list,
) -> Path:
    def rel(p):
        p = Path(p)
        try:
            return str(p.relative_to(outdir))
        except ValueError:
            return str(p)

    manifest = {
        "command": command,
        "config": config,
        "input_hashes": {Path(p).name: _sha256(p) for p in inputs},
        "weight_hashes": {Path(p).name: _sha256(p) for p in weights},
        "seed": seed,
        "version": __version__,
        "outputs": sorted(rel(o) for o in outputs),
    }
    path = Path(outdir) / "run_manifest.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    return path


def _load_input_image(path: str) -> np.ndarray:
    try:
        return load_image(path)
    except (FileNotFoundError, ImageError, OSError) as exc:
        raise click.UsageError(f"cannot read image {path!r}: {exc}")


def _get_model(kind: str):
    try:
        return load_default_model(kind)
    except (QualityError, WeightFormatError) as exc:
        raise click.UsageError(str(exc))


def _get_measure(kind: str):
    try:
        if kind in ("feature-l2", "structure-texture"):
            return get_measure(kind, load_default_extractor())
        return get_measure(kind)
    except ValueError as exc:
        raise click.UsageError(str(exc))


def _parse_lambdas(text: str | None) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise click.UsageError(f"cannot parse lambda list {text!r}")


@click.group()
@click.version_option(version=__version__)
def main():
    """Probe no-reference image quality models with perceptually
    constrained counterexamples."""


@main.command()
@click.option("--image", "image_path", required=True, help="Initial image file.")
@click.option("--model", "model_kind", required=True, type=click.Choice(MODEL_KINDS))
@click.option("--measure", "measure_kind", required=True, type=click.Choice(MEASURE_KINDS))
@click.option("--lambdas", default=None, help="Comma-separated multipliers; default 32 log-spaced in [1e-3, 1e3].")
@click.option("--gamma", default=1e-3, show_default=True, help="Ascent step size.")
@click.option("--iters", default=200, show_default=True, help="Ascent iterations per candidate.")
@click.option("--norm", default="linf", show_default=True, type=click.Choice(["linf", "l2"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "outdir", required=True, help="Candidate-set output directory.")
def attack(image_path, model_kind, measure_kind, lambdas, gamma, iters, norm, seed, outdir):
    """Sweep the multiplier grid and write a candidate set."""
    x0 = _load_input_image(image_path)
    model = _get_model(model_kind)
    measure = _get_measure(measure_kind)
    try:
        cfg_kwargs = dict(gamma=gamma, max_iterations=iters, ascent_norm=norm, seed=seed)
        parsed = _parse_lambdas(lambdas)
        if parsed is not None:
            cfg_kwargs["lambdas"] = parsed
        cfg = AttackConfig(**cfg_kwargs)
    except ValueError as exc:
        raise click.UsageError(str(exc))
    try:
        cset = run_sweep(x0, cfg, model, measure, image_id=Path(image_path).stem)
    except AttackNumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    outdir = Path(outdir)
    cset.save(outdir)
    click.echo(f"{'lambda':>12}  {'D':>12}  {'delta_q':>12}")
    for c in cset.candidates:
        click.echo(f"{c.lam:12.6g}  {c.fidelity:12.6g}  {c.quality_delta:12.6g}")
    write_manifest(
        outdir,
        "attack",
        {**cfg.to_dict(), "model": model_kind, "measure": measure_kind},
        [image_path],
        _weight_files(model_kind, measure_kind in ("feature-l2", "structure-texture")),
        seed,
        sorted(p for p in outdir.iterdir() if p.name != "run_manifest.json"),
    )


@main.command("enhance")
@click.option("--image", "image_path", required=True)
@click.option("--model", "model_kind", required=True, type=click.Choice(MODEL_KINDS))
@click.option("--iters", "steps", default=200, show_default=True)
@click.option("--gamma", default=1e-3, show_default=True)
@click.option("--norm", default="linf", show_default=True, type=click.Choice(["linf", "l2"]))
@click.option("--seed", default=0, show_default=True)
@click.option("--out", "outdir", required=True)
def cmd_enhance(image_path, model_kind, steps, gamma, norm, seed, outdir):
    """Ascend the calibrated score alone and write the enhanced image."""
    if steps < 1:
        raise click.UsageError("--iters must be >= 1")
    x0 = _load_input_image(image_path)
    model = _get_model(model_kind)
    try:
        out = enhance(x0, steps=steps, model=model, gamma=gamma, ascent_norm=norm, seed=seed)
    except AttackNumericalError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    save_png(out, outdir / "enhanced.png")
    save_png(ev.residual_map(x0, out), outdir / "residual.png")
    click.echo(f"score before: {model.score(x0):.4f}")
    click.echo(f"score after:  {model.score(out):.4f}")
    write_manifest(
        outdir,
        "enhance",
        {"model": model_kind, "steps": steps, "gamma": gamma, "norm": norm},
        [image_path],
        _weight_files(model_kind, False),
        seed,
        [outdir / "enhanced.png", outdir / "residual.png"],
    )


@main.command()
@click.argument("candidate_dirs", nargs=-1, required=True)
@click.option("--proxy-mos", "proxy_mos_path", required=True, help="JSON map of image id to reference quality.")
@click.option("--out", "outdir", required=True)
@click.option("--tau", default=4.0 / 255.0, show_default=True, help="Simulated-observer visibility threshold.")
@click.option("--visibility-measure", default="chebyshev", show_default=True, type=click.Choice(MEASURE_KINDS))
@click.option("--repetitions", default=15, show_default=True)
@click.option("--seed", default=0, show_default=True)
def evaluate(candidate_dirs, proxy_mos_path, outdir, tau, visibility_measure, repetitions, seed):
    """Select counterexamples with a simulated observer, then write the
    transfer-matrix report and residual maps."""
    try:
        proxy_mos = load_proxy_mos(proxy_mos_path)
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        raise click.UsageError(f"cannot read proxy MOS file: {exc}")
    vis_measure = _get_measure(visibility_measure)
    initials: dict[str, np.ndarray] = {}
    counterexamples: dict[tuple[str, str, str], np.ndarray] = {}
    measures: list[str] = []
    for d in candidate_dirs:
        try:
            cset = CandidateSet.load(d)
        except FileNotFoundError as exc:
            raise click.UsageError(f"cannot read candidate set {d!r}: {exc}")
        if cset.image_id not in proxy_mos:
            raise click.UsageError(f"no proxy MOS for image {cset.image_id!r}")
        initials[cset.image_id] = cset.initial
        if cset.measure_id not in measures:
            measures.append(cset.measure_id)
        session = st.create_session(cset, repetitions, seed)
        st.simulate_observer(session, vis_measure, tau=tau, seed=seed)
        selected = st.select_counterexample(session)
        if selected is not None:
            key = (cset.model_id, cset.measure_id, cset.image_id)
            counterexamples[key] = selected.image
    models = load_default_models()
    try:
        cells = ev.transfer_matrix(models, measures, initials, counterexamples, proxy_mos)
    except ev.EvaluationError as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        sys.exit(EXIT_NUMERICAL)
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    report = outdir / "transfer_report.tsv"
    ev.write_report(cells, report)
    maps = ev.save_residual_maps(initials, counterexamples, outdir / "residuals")
    click.echo(report.read_text(), nl=False)
    write_manifest(
        outdir,
        "evaluate",
        {
            "tau": tau,
            "visibility_measure": visibility_measure,
            "repetitions": repetitions,
            "candidate_dirs": sorted(str(d) for d in candidate_dirs),
        },
        [proxy_mos_path] + [Path(d) / "manifest" for d in candidate_dirs],
        [p for k in sorted(models) for p in _weight_files(k, False)],
        seed,
        [report, *maps],
    )


@main.command()
@click.option("--port", default=8000, show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--log", "log_path", required=True, help="Append-only session log; replayed on restart.")
def serve(port, host, log_path):
    """Run the screening service until terminated."""
    import uvicorn

    from .service import create_app

    app = create_app(log_path)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    except (OSError, SystemExit) as exc:
        if isinstance(exc, SystemExit) and not exc.code:
            return
        click.echo(f"cannot serve on {host}:{port}: {exc}", err=True)
        sys.exit(EXIT_ENVIRONMENT)


@main.command()
@click.option("--raw", "raw_path", required=True, help="Raw scores, one float per line.")
@click.option("--targets", "targets_path", required=True, help="Reference scores, one float per line.")
@click.option("--out", "out_path", required=True, help="Calibration file to write.")
def calibrate(raw_path, targets_path, out_path):
    """Fit the logistic remapping from raw scores to the [0, 10] scale."""

    def read_column(path):
        try:
            return np.array([float(x) for x in Path(path).read_text().split()])
        except (FileNotFoundError, ValueError) as exc:
            raise click.UsageError(f"cannot read scores from {path!r}: {exc}")

    raws = read_column(raw_path)
    targets = read_column(targets_path)
    try:
        params = fit_calibration(raws, targets)
    except QualityError as exc:
        raise click.UsageError(str(exc))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    params.save(out_path)
    click.echo(f"beta3 = {params.beta3!r}, beta4 = {params.beta4!r}")
    write_manifest(
        out_path.parent,
        "calibrate",
        {"raw": str(raw_path), "targets": str(targets_path)},
        [raw_path, targets_path],
        [],
        0,
        [out_path],
    )


@main.command("make-testset")
@click.option("--out", "outdir", required=True)
@click.option("--n-images", default=12, show_default=True)
@click.option("--size", default=64, show_default=True)
@click.option("--seed", default=7, show_default=True)
def cmd_make_testset(outdir, n_images, size, seed):
    """Generate a synthetic desk-scale image set with proxy reference scores."""
    if n_images < 1 or size < 16:
        raise click.UsageError("need n-images >= 1 and size >= 16")
    manifest = make_testset(outdir, n_images=n_images, size=size, seed=seed)
    outdir = Path(outdir)
    write_manifest(
        outdir,
        "make-testset",
        {"n_images": n_images, "size": size},
        [],
        [],
        seed,
        sorted(outdir.rglob("*.png")) + [outdir / "proxy_mos.json"],
    )
    click.echo(f"wrote {len(manifest['images'])} images to {outdir}")

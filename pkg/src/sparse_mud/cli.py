"""
sparse-mud command line: SNR, activity and CSI-error sweeps with CSV/JSON
result files, plus the closed-form complexity table.

Configuration is resolved as flags > config file > preset > defaults.
"""

from __future__ import annotations

import json
import logging
import math
import os
from pathlib import Path
from typing import Any, Optional

import platformdirs
import typer
import yaml
from rich.console import Console
from rich.logging import RichHandler
from rich.progress import BarColumn, MofNCompleteColumn, Progress, SpinnerColumn, TextColumn, TimeElapsedColumn
from rich.table import Table

from . import __version__
from .complexity import table1_count
from .detectors import DetectorId
from .harness import DEFAULT_DETECTORS, ExperimentSpec, SweepResult, crossover_rows, degradation_rows, run_sweep
from .manifest import RunManifest, write_csv
from .model import constellation_by_name
from .validation import OutputPathError, SimulationError, result_paths

OUTPUT_DIR_ENV = "SPARSE_MUD_OUTPUT_DIR"

console = Console()
logger = logging.getLogger("sparse_mud")
app = typer.Typer(
    name="sparse-mud",
    help="Sparsity-aware multiuser detection for grant-free uplinks: Monte Carlo sweeps and complexity.",
    add_completion=False,
    rich_markup_mode="rich",
)

SNR_GRID = tuple(float(s) for s in range(0, 21, 2))

PRESETS: dict[str, dict[str, Any]] = {
    # NSER vs SNR, random p_n in [0.1, 0.3]
    "fig4": {
        "n_devices": 128,
        "spreading": 64,
        "modulation": "qpsk",
        "p_range": (0.1, 0.3),
        "detectors": DEFAULT_DETECTORS,
        "axis": "snr",
        "axis_values": SNR_GRID,
        "kbest_k": 8,
        "trials": 10000,
    },
    # NSER vs common activity probability at two SNRs
    "fig5": {
        "n_devices": 128,
        "spreading": 64,
        "modulation": "qpsk",
        "detectors": DEFAULT_DETECTORS,
        "axis": "activity",
        "axis_values": tuple(round(0.1 * i, 1) for i in range(1, 10)),
        "snr_db": (10.0, 16.0),
        "kbest_k": 8,
        "trials": 10000,
    },
    # NSER vs SNR with imperfect channel knowledge
    "fig6": {
        "n_devices": 128,
        "spreading": 64,
        "modulation": "qpsk",
        "p_range": (0.1, 0.3),
        "detectors": DEFAULT_DETECTORS,
        "axis": "snr",
        "axis_values": SNR_GRID,
        "csi_error_var": 0.1,
        "kbest_k": 8,
        "trials": 10000,
    },
}

COMMAND_DEFAULTS: dict[str, dict[str, Any]] = {
    "sweep-activity": {"axis_values": (0.1, 0.5, 0.9)},
}

COMMAND_PRESETS = {"sweep-snr": ("fig4", "fig6"), "sweep-activity": ("fig5",), "sweep-csi": ("fig6",)}


# --------------------------------------------------------------------------
# Flag parsing
# --------------------------------------------------------------------------

def parse_grid(text: str, option: str) -> tuple[float, ...]:
    """
    Parse ``start:step:stop`` (inclusive), a comma list or a single value.

    Raises:
        typer.BadParameter: If the text is malformed or the grid is empty
    """
    try:
        if ":" in text:
            parts = [float(p) for p in text.split(":")]
            if len(parts) != 3:
                raise ValueError("expected start:step:stop")
            start, step, stop = parts
            if step <= 0 or stop < start:
                raise ValueError("need step > 0 and stop >= start")
            count = int(math.floor((stop - start) / step + 1e-9)) + 1
            return tuple(round(start + i * step, 12) for i in range(count))
        values = tuple(float(v) for v in text.split(",") if v.strip())
    except ValueError as e:
        raise typer.BadParameter(f"invalid value '{text}': {e}", param_hint=option) from None
    if not values:
        raise typer.BadParameter("at least one value is required", param_hint=option)
    return values


def parse_p_range(text: str) -> tuple[float, float]:
    try:
        low, high = (float(p) for p in text.split(":"))
    except ValueError:
        raise typer.BadParameter(f"expected low:high, got '{text}'", param_hint="--p-range") from None
    if not 0.0 < low <= high < 1.0:
        raise typer.BadParameter(f"need 0 < low <= high < 1, got '{text}'", param_hint="--p-range")
    return low, high


def parse_detectors(text: str) -> tuple[DetectorId, ...]:
    try:
        return tuple(DetectorId.parse(d) for d in text.split(",") if d.strip())
    except SimulationError as e:
        raise typer.BadParameter(str(e), param_hint="--detectors") from None


def load_config_file(path: Path) -> dict[str, Any]:
    """
    Read a JSON or YAML mapping of experiment fields.

    A run manifest is accepted too; its recorded experiment is used.
    """
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as e:
        raise typer.BadParameter(f"cannot read {path}: {e}", param_hint="--config") from None
    if not isinstance(data, dict):
        raise typer.BadParameter(f"{path} must contain a mapping", param_hint="--config")
    if data.get("tool") == "sparse-mud" and isinstance(data.get("spec"), dict):
        return dict(data["spec"])
    return data


def resolve_spec(
    command: str,
    preset: Optional[str],
    config: Optional[Path],
    flags: dict[str, Any],
) -> ExperimentSpec:
    """Layer defaults, preset, config file and flags into one validated spec."""
    values: dict[str, Any] = dict(COMMAND_DEFAULTS.get(command, {}))
    if preset is not None:
        allowed = COMMAND_PRESETS[command]
        if preset not in allowed:
            raise typer.BadParameter(
                f"'{preset}' is not a preset for {command}; choose from {', '.join(allowed)}",
                param_hint="--preset",
            )
        values.update(PRESETS[preset])
    if config is not None:
        values.update(load_config_file(config))
    values.update({k: v for k, v in flags.items() if v is not None})
    try:
        return ExperimentSpec.from_mapping(values)
    except (SimulationError, TypeError, ValueError) as e:
        raise typer.BadParameter(str(e)) from None


def default_output_dir() -> Path:
    env = os.environ.get(OUTPUT_DIR_ENV)
    if env:
        return Path(env)
    return platformdirs.user_data_path("sparse-mud") / "runs"


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.addHandler(RichHandler(console=console, show_path=False, markup=False))
    logger.setLevel(level)


# --------------------------------------------------------------------------
# Running and reporting
# --------------------------------------------------------------------------

def print_results(result: SweepResult) -> None:
    table = Table(show_header=True, header_style="bold cyan")
    table.add_column("Detector", style="bold")
    table.add_column(result.spec.axis_name, justify="right")
    if result.spec.axis != "snr":
        table.add_column("SNR [dB]", justify="right")
    table.add_column("Trials", justify="right")
    table.add_column("NSER", justify="right")
    table.add_column("MF/trial", justify="right")
    table.add_column("Mults/trial", justify="right")

    for p in result.points:
        cells = [p.detector.value, f"{p.axis_value:g}"]
        if result.spec.axis != "snr":
            cells.append(f"{p.snr_db:g}")
        nser = "[red]n/a[/red]" if math.isnan(p.nser) else f"{p.nser:.3e}"
        mf = f"{p.mf_activations_mean:.2f}" if p.trials else "-"
        mults = f"{p.mult_count_mean:.3g}" if p.trials else "-"
        cells += [str(p.trials), nser, mf, mults]
        table.add_row(*cells)
    console.print(table)


def print_crossover(result: SweepResult) -> None:
    rows = crossover_rows(result)
    if not rows:
        return
    table = Table(title="AA-MF-SIC vs Oracle MMSE", show_header=True, header_style="bold cyan")
    table.add_column("SNR [dB]", justify="right")
    table.add_column("p", justify="right")
    table.add_column("aa-mf-sic", justify="right")
    table.add_column("oracle-mmse", justify="right")
    table.add_column("Lower")
    for row in rows:
        a = row["aa-mf-sic_nser"]
        b = row["oracle-mmse_nser"]
        table.add_row(
            f"{row['snr_db']:g}", f"{row['p']:g}",
            "n/a" if math.isnan(a) else f"{a:.3e}",
            "n/a" if math.isnan(b) else f"{b:.3e}",
            row["better"] or "-",
        )
    console.print(table)


def print_degradation(result: SweepResult, reference: SweepResult) -> None:
    table = Table(title="NSER loss against perfect CSI", show_header=True, header_style="bold cyan")
    table.add_column("Detector", style="bold")
    table.add_column(result.spec.axis_name, justify="right")
    table.add_column("Perfect CSI", justify="right")
    table.add_column("Estimated CSI", justify="right")
    table.add_column("Degradation", justify="right")
    for row in degradation_rows(result, reference):
        if row["csi_error_var"] == 0:
            continue
        cells = [row["perfect_csi_nser"], row["nser"], row["degradation"]]
        table.add_row(
            row["detector"], f"{row['axis_value']:g}",
            *("n/a" if math.isnan(v) else f"{v:.3e}" for v in cells),
        )
    console.print(table)


def execute(spec: ExperimentSpec, command: str, output_dir: Optional[Path], name: Optional[str]) -> None:
    """Run a resolved sweep, write CSV and manifest, and set the exit code."""
    run_name = name or f"{command}-seed{spec.seed}"
    try:
        csv_path, json_path = result_paths(output_dir or default_output_dir(), run_name)
    except OutputPathError as e:
        raise typer.BadParameter(str(e), param_hint="--name") from None
    except OSError as e:
        console.print(f"[red]✗ Cannot create output directory: {e}[/red]")
        raise typer.Exit(1)

    console.print(
        f"[bold]sparse-mud[/bold] {command}: N={spec.n_devices}, M={spec.spreading}, "
        f"{spec.modulation}, {spec.trials} trials/point, seed {spec.seed}"
    )
    manifest = RunManifest(spec=spec, version=__version__)
    total = len(spec.points()) * spec.trials * (2 if spec.imperfect_csi else 1)
    with Progress(
        SpinnerColumn(),
        TextColumn("[progress.description]{task.description}"),
        BarColumn(),
        MofNCompleteColumn(),
        TimeElapsedColumn(),
        console=console,
        transient=True,
    ) as progress:
        task = progress.add_task("Simulating", total=total)
        result = run_sweep(spec, progress=lambda n: progress.advance(task, n))
        reference = None
        if spec.imperfect_csi:
            progress.update(task, description="Perfect-CSI reference")
            reference = run_sweep(spec, progress=lambda n: progress.advance(task, n), perfect_csi=True)

    manifest.record(result, reference)
    write_csv(result, csv_path)
    manifest.write_json(json_path)

    print_results(result)
    if spec.axis == "activity":
        print_crossover(result)
    if reference is not None:
        print_degradation(result, reference)
    console.print(f"\n[green]✓[/green] Results: {csv_path}")
    console.print(f"[green]✓[/green] Manifest: {json_path}")

    if result.empty_points:
        for p in result.empty_points:
            console.print(
                f"[red]✗ {p.detector.value} produced no aggregate at {p.axis_name}={p.axis_value:g}"
                f" ({p.failures} failures, {p.skipped_trials} skipped)[/red]"
            )
        raise typer.Exit(1)


def _run_command(
    command: str,
    preset: Optional[str],
    config: Optional[Path],
    flags: dict[str, Any],
    output_dir: Optional[Path],
    name: Optional[str],
    verbose: bool,
    quiet: bool,
) -> None:
    configure_logging(verbose, quiet)
    spec = resolve_spec(command, preset, config, flags)
    execute(spec, command, output_dir, name)


def _common_flags(
    devices, spreading, p_range, modulation, detectors, kbest_k, mf_candidates,
    sac_mode, trials, seed, nser_mode, p_redraw, workers,
) -> dict[str, Any]:
    return {
        "n_devices": devices,
        "spreading": spreading,
        "p_range": parse_p_range(p_range) if p_range is not None else None,
        "modulation": modulation,
        "detectors": parse_detectors(detectors) if detectors is not None else None,
        "kbest_k": kbest_k,
        "mf_candidates": mf_candidates,
        "sac_mode": sac_mode,
        "trials": trials,
        "seed": seed,
        "nser_mode": nser_mode,
        "p_redraw": p_redraw,
        "workers": workers,
    }


# Shared option declarations; every flag defaults to None so lower layers show through.
DevicesOpt = typer.Option(None, "--devices", "-N", help="Number of devices N")
SpreadingOpt = typer.Option(None, "--spreading", "-M", help="Spreading length M")
PRangeOpt = typer.Option(None, "--p-range", help="Activity probability range low:high")
ModulationOpt = typer.Option(None, "--modulation", help="bpsk, qpsk (default) or 8psk")
DetectorsOpt = typer.Option(None, "--detectors", help="Comma-separated detector ids")
KbestOpt = typer.Option(None, "--kbest-k", help="Survivors kept by K-Best")
MfOpt = typer.Option(None, "--mf-candidates", help="AA-MF-SIC candidate count F (default |A0|)")
SacOpt = typer.Option(None, "--sac-mode", help="distance, componentwise, always or never")
TrialsOpt = typer.Option(None, "--trials", "-t", help="Trials per sweep point")
SeedOpt = typer.Option(None, "--seed", help="Master seed")
NserOpt = typer.Option(None, "--nser-mode", help="active_only (default) or errors_over_active")
RedrawOpt = typer.Option(None, "--p-redraw", help="per_experiment (default) or per_trial")
WorkersOpt = typer.Option(None, "--workers", "-j", help="Worker processes")
PresetOpt = typer.Option(None, "--preset", help="Preset experiment: fig4, fig5 or fig6")
ConfigOpt = typer.Option(None, "--config", "-c", help="JSON/YAML experiment file or a run manifest")
OutputOpt = typer.Option(None, "--output-dir", "-o", help=f"Output directory (default ${OUTPUT_DIR_ENV} or user data dir)")
NameOpt = typer.Option(None, "--name", help="Stem of the result files")
VerboseOpt = typer.Option(False, "--verbose", "-v", help="Debug logging")
QuietOpt = typer.Option(False, "--quiet", "-q", help="Warnings only")


@app.command("sweep-snr")
def sweep_snr(
    snr: Optional[str] = typer.Option(None, "--snr", help="SNR grid in dB, start:step:stop or a list"),
    devices: Optional[int] = DevicesOpt,
    spreading: Optional[int] = SpreadingOpt,
    p_range: Optional[str] = PRangeOpt,
    modulation: Optional[str] = ModulationOpt,
    detectors: Optional[str] = DetectorsOpt,
    kbest_k: Optional[int] = KbestOpt,
    mf_candidates: Optional[int] = MfOpt,
    sac_mode: Optional[str] = SacOpt,
    trials: Optional[int] = TrialsOpt,
    seed: Optional[int] = SeedOpt,
    nser_mode: Optional[str] = NserOpt,
    p_redraw: Optional[str] = RedrawOpt,
    workers: Optional[int] = WorkersOpt,
    preset: Optional[str] = PresetOpt,
    config: Optional[Path] = ConfigOpt,
    output_dir: Optional[Path] = OutputOpt,
    name: Optional[str] = NameOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
):
    """
    Sweep the average SNR.

    Each device draws p_n uniformly from --p-range. [cyan]--preset fig4[/cyan]
    runs N=128, M=64, QPSK, 0-20 dB with every detector but S-MAP.
    """
    flags = _common_flags(devices, spreading, p_range, modulation, detectors, kbest_k,
                          mf_candidates, sac_mode, trials, seed, nser_mode, p_redraw, workers)
    flags["axis"] = "snr"
    flags["axis_values"] = parse_grid(snr, "--snr") if snr is not None else None
    _run_command("sweep-snr", preset, config, flags, output_dir, name, verbose, quiet)


@app.command("sweep-activity")
def sweep_activity(
    activity: Optional[str] = typer.Option(None, "--activity", help="Common activity probabilities, e.g. 0.1,0.5,0.9"),
    snr: Optional[str] = typer.Option(None, "--snr", help="SNR values in dB, one curve each"),
    devices: Optional[int] = DevicesOpt,
    spreading: Optional[int] = SpreadingOpt,
    modulation: Optional[str] = ModulationOpt,
    detectors: Optional[str] = DetectorsOpt,
    kbest_k: Optional[int] = KbestOpt,
    mf_candidates: Optional[int] = MfOpt,
    sac_mode: Optional[str] = SacOpt,
    trials: Optional[int] = TrialsOpt,
    seed: Optional[int] = SeedOpt,
    nser_mode: Optional[str] = NserOpt,
    workers: Optional[int] = WorkersOpt,
    preset: Optional[str] = PresetOpt,
    config: Optional[Path] = ConfigOpt,
    output_dir: Optional[Path] = OutputOpt,
    name: Optional[str] = NameOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
):
    """
    Sweep a common activity probability at fixed SNRs.

    Prints where AA-MF-SIC and Oracle MMSE cross. [cyan]--preset fig5[/cyan]
    runs p = 0.1..0.9 at 10 and 16 dB.
    """
    flags = _common_flags(devices, spreading, None, modulation, detectors, kbest_k,
                          mf_candidates, sac_mode, trials, seed, nser_mode, None, workers)
    flags["axis"] = "activity"
    if activity is not None:
        values = parse_grid(activity, "--activity")
        if not all(0.0 < p < 1.0 for p in values):
            raise typer.BadParameter("activity probabilities must lie inside (0, 1)", param_hint="--activity")
        flags["axis_values"] = values
    flags["snr_db"] = parse_grid(snr, "--snr") if snr is not None else None
    _run_command("sweep-activity", preset, config, flags, output_dir, name, verbose, quiet)


@app.command("sweep-csi")
def sweep_csi(
    snr: Optional[str] = typer.Option(None, "--snr", help="SNR grid in dB, start:step:stop or a list"),
    csi_error_var: Optional[float] = typer.Option(None, "--csi-error-var", help="Variance of the channel estimation error"),
    devices: Optional[int] = DevicesOpt,
    spreading: Optional[int] = SpreadingOpt,
    p_range: Optional[str] = PRangeOpt,
    modulation: Optional[str] = ModulationOpt,
    detectors: Optional[str] = DetectorsOpt,
    kbest_k: Optional[int] = KbestOpt,
    mf_candidates: Optional[int] = MfOpt,
    sac_mode: Optional[str] = SacOpt,
    trials: Optional[int] = TrialsOpt,
    seed: Optional[int] = SeedOpt,
    nser_mode: Optional[str] = NserOpt,
    p_redraw: Optional[str] = RedrawOpt,
    workers: Optional[int] = WorkersOpt,
    preset: Optional[str] = PresetOpt,
    config: Optional[Path] = ConfigOpt,
    output_dir: Optional[Path] = OutputOpt,
    name: Optional[str] = NameOpt,
    verbose: bool = VerboseOpt,
    quiet: bool = QuietOpt,
):
    """
    Sweep the SNR with imperfect channel knowledge.

    Detectors see H + E with E ~ CN(0, --csi-error-var); observations use the
    true H. [cyan]--preset fig6[/cyan] uses a variance of 0.1.
    """
    if csi_error_var is not None and csi_error_var < 0:
        raise typer.BadParameter("the variance must be >= 0", param_hint="--csi-error-var")
    flags = _common_flags(devices, spreading, p_range, modulation, detectors, kbest_k,
                          mf_candidates, sac_mode, trials, seed, nser_mode, p_redraw, workers)
    flags["axis"] = "snr"
    flags["axis_values"] = parse_grid(snr, "--snr") if snr is not None else None
    flags["csi_error_var"] = csi_error_var
    _run_command("sweep-csi", preset, config, flags, output_dir, name, verbose, quiet)


@app.command()
def complexity(
    devices: int = typer.Option(128, "--devices", "-N", help="Number of devices N"),
    spreading: int = typer.Option(64, "--spreading", "-M", help="Spreading length M"),
    kbest_k: int = typer.Option(8, "--kbest-k", help="K-Best survivors K"),
    iterations: int = typer.Option(1, "--iterations", "-L", help="IR iterations L"),
    modulation: str = typer.Option("qpsk", "--modulation", help="bpsk, qpsk or 8psk"),
    as_json: bool = typer.Option(False, "--json", help="Print JSON instead of a table"),
):
    """Complex multiplications per detection for every detector with a closed form."""
    try:
        alphabet_size = constellation_by_name(modulation).size
        counts = {
            d.value: table1_count(d, devices, spreading, kbest_k, iterations, alphabet_size)
            for d in DetectorId
            if d not in (DetectorId.ORACLE_MMSE, DetectorId.SMAP)
        }
    except SimulationError as e:
        raise typer.BadParameter(str(e)) from None

    if as_json:
        console.print_json(json.dumps(counts))
        return

    table = Table(
        title=f"N={devices}, M={spreading}, K={kbest_k}, L={iterations}, |A0|={alphabet_size}",
        show_header=True,
        header_style="bold cyan",
    )
    table.add_column("Detector", style="bold")
    table.add_column("Complex multiplications", justify="right")
    for detector, count in counts.items():
        if isinstance(count, tuple):
            text = f"{count[0]:,.0f} (high SNR) to {count[1]:,.0f} (low SNR)"
        else:
            text = f"{count:,.0f}"
        table.add_row(detector, text)
    console.print(table)


@app.command()
def version():
    """Show sparse-mud version."""
    console.print(f"[bold]sparse-mud[/bold] version [cyan]{__version__}[/cyan]")


@app.callback(invoke_without_command=True)
def main_callback(
    ctx: typer.Context,
    version_flag: bool = typer.Option(False, "--version", help="Show version and exit"),
):
    """
    sparse-mud - activity-aware multiuser detection for grant-free uplinks.
    """
    if version_flag:
        console.print(f"[bold]sparse-mud[/bold] version [cyan]{__version__}[/cyan]")
        raise typer.Exit()

    if ctx.invoked_subcommand is None:
        console.print(
            "[bold]Available commands:[/bold]\n"
            "  [cyan]sweep-snr[/cyan]       - NSER vs SNR\n"
            "  [cyan]sweep-activity[/cyan]  - NSER vs activity probability\n"
            "  [cyan]sweep-csi[/cyan]       - NSER vs SNR with imperfect CSI\n"
            "  [cyan]complexity[/cyan]      - Closed-form multiplication counts\n"
            "  [cyan]version[/cyan]         - Show version information\n\n"
            "[dim]Use 'sparse-mud --help' for more information[/dim]"
        )


def main():
    """Main entry point for the CLI."""
    app()

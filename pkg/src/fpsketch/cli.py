"""Command line entry point: ``fpsketch {params,gen,estimate,trials}``."""

from __future__ import annotations

import json
import sys

import click

from .ghss import GhssSketch
from .harness import (
    StreamSpec,
    TrialConfig,
    exact_moment,
    frequencies,
    generate_stream,
    read_stream,
    run_trials,
    write_stream,
)
from .params import ScaledKnobs, derive_paper_params, derive_scaled_params

KNOB_FIELDS = {f for f in ScaledKnobs.__dataclass_fields__}


def _parse_knobs(pairs) -> dict:
    knobs = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or key not in KNOB_FIELDS:
            raise click.BadParameter(f"expected one of {sorted(KNOB_FIELDS)} as key=value, got {pair!r}")
        knobs[key] = float(value) if key in ("b_constant", "c_ratio", "last_factor", "nu", "f2_tau", "f2_failure") else int(value)
    return knobs


def _params(n, p, eps, scaled, knobs):
    if scaled:
        return derive_scaled_params(n, p, eps, _parse_knobs(knobs) or None)
    if knobs:
        raise click.BadParameter("--knob only applies to --scaled parameters")
    return derive_paper_params(n, p, eps)


def _emit(data: dict, out: str) -> None:
    if out == "json":
        click.echo(json.dumps(data, sort_keys=True))
    else:
        click.echo(json.dumps(data, sort_keys=True, indent=2))


def _common(f):
    f = click.option("--out", type=click.Choice(["json", "pretty"]), default="pretty", show_default=True)(f)
    f = click.option("--knob", "knobs", multiple=True, help="scaled-mode override, e.g. --knob k=16")(f)
    f = click.option("--scaled/--paper", default=True, show_default=True, help="parameter construction mode")(f)
    f = click.option("--eps", type=float, default=0.2, show_default=True)(f)
    f = click.option("--p", "p", type=float, default=3.0, show_default=True)(f)
    return f


@click.group()
def main():
    """Estimate frequency moments F_p (p > 2) of turnstile streams."""


@main.command()
@click.option("--n", type=int, required=True, help="universe size")
@_common
def params(n, p, eps, scaled, knobs, out):
    """Print the derived parameter set."""
    try:
        ps = _params(n, p, eps, scaled, knobs)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    _emit(ps.to_dict(), out)


@main.command()
@click.option("--n", type=int, required=True)
@click.option("--dist", type=click.Choice(["zipf", "uniform", "planted"]), default="zipf", show_default=True)
@click.option("--m", type=int, default=10_000, show_default=True, help="total records")
@click.option("--theta", type=float, default=1.2, show_default=True, help="zipf exponent")
@click.option("--delete-fraction", type=float, default=0.0, show_default=True)
@click.option("--max-value", type=int, default=1, show_default=True)
@click.option("--planted", default=None, help="item:freq pairs, e.g. 7:10,9:-3")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("-o", "--output", type=click.File("w"), default="-")
def gen(n, dist, m, theta, delete_fraction, max_value, planted, seed, output):
    """Write a synthetic stream as item<TAB>delta lines."""
    targets = None
    if planted:
        targets = {int(a): int(b) for a, b in (kv.split(":") for kv in planted.split(","))}
    try:
        spec = StreamSpec(n, dist, m, theta, delete_fraction, max_value, targets, seed)
    except ValueError as exc:
        raise click.UsageError(str(exc)) from exc
    items, deltas = generate_stream(spec)
    write_stream(items, deltas, output)


@main.command()
@click.argument("stream", type=click.File("r"), default="-")
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True, help="master seed of the sketch")
@click.option("--coin-seed", type=int, default=1, show_default=True)
@click.option("--perm-seed", type=int, default=2, show_default=True)
@click.option("--exact/--no-exact", default=False, help="also report the exact moment")
@_common
def estimate(stream, n, seed, coin_seed, perm_seed, exact, p, eps, scaled, knobs, out):
    """Sketch a stream file (or stdin) and print the estimate report."""
    try:
        ps = _params(n, p, eps, scaled, knobs)
        items, deltas = read_stream(stream)
        sketch = GhssSketch(ps, seed)
        sketch.update_many(items, deltas)
    except (ValueError, MemoryError) as exc:
        raise click.UsageError(str(exc)) from exc
    report = sketch.estimate_fp(coin_seed=coin_seed, perm_seed=perm_seed).to_dict()
    if exact:
        report["exact_fp"] = exact_moment(frequencies(items, deltas, n), p)
    _emit(report, out)


@main.command()
@click.argument("config", type=click.File("r"))
@click.option("--trials", type=int, default=None, help="override the trial count")
@click.option("--seed", type=int, default=None, help="override the base seed")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--timing/--no-timing", default=False, help="include wall time in the report")
@click.option("--out", type=click.Choice(["json", "pretty"]), default="pretty", show_default=True)
def trials(config, trials, seed, workers, timing, out):
    """Run seeded trials from a JSON config and print the trial report."""
    try:
        data = json.load(config)
        if trials is not None:
            data["trials"] = trials
        if seed is not None:
            data["seed"] = seed
        cfg = TrialConfig.from_dict(data)
        report = run_trials(cfg, workers=workers)
    except (ValueError, TypeError, KeyError, MemoryError) as exc:
        raise click.UsageError(f"bad trial config: {exc}") from exc
    _emit(report.to_dict(timing=timing), out)


if __name__ == "__main__":
    sys.exit(main())

"""Command line: ``cop run``, ``cop verify``, ``cop report``."""

from __future__ import annotations

import dataclasses
import logging
import sys

import click

from cop.harness import load_report, replay_verify, run
from cop.ledger import CorruptLedger
from cop.replay import ManifestError
from cop.scenario import ConfigError, load_scenario


@click.group()
@click.option("-v", "--verbose", count=True, help="More logging (-v info, -vv debug).")
def main(verbose: int) -> None:
    """Run Cop scenarios and check recorded ledgers."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command("run")
@click.argument("scenario_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", type=click.Path(file_okay=False), help="Write ledgers, verdicts and report here.")
@click.option("--seed", type=int, help="Override the scenario's seed.")
@click.option("--shards", type=click.IntRange(min=1), help="Override the inspector shard count.")
@click.option("--transport", type=click.Choice(["inproc", "tcp"]), help="Override the transport.")
def run_cmd(scenario_file: str, out_dir: str | None, seed: int | None, shards: int | None,
            transport: str | None) -> None:
    """Run SCENARIO_FILE and print its report."""
    try:
        scenario = load_scenario(scenario_file)
    except ConfigError as exc:
        raise click.ClickException(f"{scenario_file}: {exc}") from None
    changes = {}
    if seed is not None:
        changes["seed"] = seed
    if shards is not None:
        changes["shards"] = shards
    if transport is not None:
        changes["transport"] = transport
        changes["clock"] = "virtual" if transport == "inproc" else "wall"
    scenario = dataclasses.replace(scenario, **changes)
    try:
        report = run(scenario, out_dir)
    except ConfigError as exc:
        raise click.ClickException(f"{scenario_file}: {exc}") from None
    click.echo(report.render())
    if report.false_positives or report.false_negatives:
        sys.exit(2)


@main.command()
@click.argument("ledger_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--shards", type=click.IntRange(min=1), default=1, show_default=True)
def verify(ledger_file: str, shards: int) -> None:
    """Check LEDGER_FILE's hash chain and re-inspect it off-line."""
    try:
        report = replay_verify(ledger_file, shards=shards)
    except CorruptLedger as exc:
        click.echo(f"CORRUPT: {exc}", err=True)
        sys.exit(1)
    except ManifestError as exc:
        raise click.ClickException(str(exc)) from None
    click.echo(report.render())
    if report.replay and report.replay.get("live_match") is False:
        click.echo("MISMATCH: off-line verdicts differ from the live run", err=True)
        sys.exit(3)


@main.command()
@click.argument("out_dir", type=click.Path(exists=True, file_okay=False))
def report(out_dir: str) -> None:
    """Render the report saved in OUT_DIR."""
    try:
        click.echo(load_report(out_dir).render())
    except ConfigError as exc:
        raise click.ClickException(str(exc)) from None


if __name__ == "__main__":  # pragma: no cover
    main()

"""``audit`` command line: run experiment plans, summarize and plot results."""

import os

import click

from . import runner


@click.group()
def main():
    """Train and audit graph neural networks for fairness and privacy."""


@main.command()
@click.argument("config", type=click.Path(exists=True))
def run(config):
    """Execute the experiment plan in CONFIG (JSON)."""
    with open(config) as f:
        plan = runner.parse_config(f.read())
    table = runner.run_plan(plan)
    n_err = sum(1 for r in table.records if r.error)
    click.echo(f"wrote {len(table.records)} records to {plan.output_dir}/results.csv"
               + (f" ({n_err} failed)" if n_err else ""))


@main.command()
@click.argument("results_dir", type=click.Path(exists=True))
@click.option("--group-by", default="model,method",
              help="comma-separated record keys to group on")
def report(results_dir, group_by):
    """Print mean/std/n per metric grouped by the given keys."""
    table = runner.parse_csv(os.path.join(results_dir, "results.csv"))
    keys = [k.strip() for k in group_by.split(",")]
    rows = runner.aggregate(table, keys)
    if not rows:
        click.echo("no records")
        return
    header = keys + ["n"] + [c for c in rows[0] if c not in keys and c != "n"]
    click.echo(",".join(header))
    for row in rows:
        click.echo(",".join(runner._fmt(row[c]) for c in header))


@main.command()
@click.argument("results_dir", type=click.Path(exists=True))
@click.option("--x", "x_metric", default="accuracy")
@click.option("--y", "y_metric", default="delta_sp")
@click.option("-o", "--output", default=None, help="output SVG path")
def plot(results_dir, x_metric, y_metric, output):
    """Emit an SVG scatter of two metrics; baselines are marked with an X."""
    table = runner.parse_csv(os.path.join(results_dir, "results.csv"))
    if output is None:
        output = os.path.join(results_dir, f"{x_metric}_vs_{y_metric}.svg")
    runner.emit_svg_scatter(table, x_metric, y_metric, output)
    click.echo(f"wrote {output}")


if __name__ == "__main__":
    main()

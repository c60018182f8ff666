"""fairrec Command Line Interface."""
import logging
import logging.config
from contextlib import contextmanager
from functools import wraps
from pathlib import Path

import click

from fairrec.fairrec_app import settings
from fairrec.fairrec_app.config.RunConfig import RunConfig, RuntimeSettings
from fairrec.fairrec_app.fair_models import synthetic
from fairrec.fairrec_app.fair_models.FairErrors import FairRecError
from fairrec.fairrec_app.pipeline import artifacts, stages

logger = logging.getLogger("fairrec.cli")

fairrec = click.Group(help="Fairness-aware recommendation pipeline on MovieLens-format data.")


@contextmanager
def run_logging(out_dir: Path):
    """Console logging from settings plus a run.log file handler inside the output directory."""
    runtime = RuntimeSettings()
    logging.config.dictConfig(settings.LOGGING)
    root = logging.getLogger("fairrec")
    root.setLevel(runtime.log_level)
    artifacts.ensure_dir(out_dir)
    handler = logging.FileHandler(out_dir / settings.ARTIFACTS["log"], encoding="utf-8")
    handler.setFormatter(logging.Formatter("{levelname} {asctime} {name} {message}", style="{"))
    root.addHandler(handler)
    logger.debug(f"Runtime settings: {runtime.get_configuration_summary()}")
    try:
        yield
    finally:
        root.removeHandler(handler)
        handler.close()


def report_failures(func):
    """Maps FairRecError to ``error[<class>]: message`` on stderr and the error's exit code."""

    @wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except FairRecError as e:
            click.echo(f"error[{e.failure_class}]: {e}", err=True)
            raise SystemExit(e.exit_code)

    return wrapper


def run_options(func):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="YAML run configuration."),
        click.option("--ratings", help="MovieLens ratings file (UserID::MovieID::Rating::Timestamp)."),
        click.option("--users", help="MovieLens users file (UserID::Gender::Age::Occupation::Zip)."),
        click.option("--out", help="Output directory for artifacts."),
        click.option("--scheme", type=click.Choice(["gender", "youth"]), help="Minority scheme."),
        click.option("--im-mode", type=click.Choice(["pooled", "scorediff"]), help="Item minority index mode."),
        click.option("--um-mode", type=click.Choice(["formula", "toy"]), help="User minority index mode."),
        click.option("--beta", type=float, help="Accuracy/fairness trade-off in [0, 1]."),
        click.option("--alpha", type=float, help="Heuristic filter threshold (>= 0)."),
        click.option("--n", "top_n", type=int, help="Recommendation list length."),
        click.option("--seed", type=int, help="Base seed for splits and training."),
    ]
    for option in reversed(options):
        func = option(func)
    return func


def build_overrides(ratings=None, users=None, out=None, scheme=None, im_mode=None, um_mode=None, beta=None,
                    alpha=None, top_n=None, seed=None, method=None, user_ids=None) -> dict:
    """Nested override mapping holding only the flags that were given."""
    overrides = {}

    def put(section, key, value):
        if value is not None:
            overrides.setdefault(section, {})[key] = value

    put("paths", "ratings", ratings)
    put("paths", "users", users)
    put("paths", "out", out)
    put("dataset", "scheme", scheme)
    put("indexes", "im_mode", im_mode)
    put("indexes", "um_mode", um_mode)
    put("recommend", "beta", beta)
    put("recommend", "alpha", alpha)
    put("recommend", "n", top_n)
    put("recommend", "method", method)
    put("recommend", "users", list(user_ids) if user_ids else None)
    if seed is not None:
        overrides["seed"] = seed
    return overrides


def run_stage(stage: str, config_path, **flags):
    cfg = RunConfig.load(config_path, build_overrides(**flags))
    with run_logging(cfg.paths.out_dir):
        written = stages.run(stage, cfg)
    for name, path in written.items():
        click.echo(f"{name}: {path}")


def add_stage_command(stage: str, help_text: str):
    @fairrec.command(name=stage, help=help_text)
    @run_options
    @report_failures
    def command(config_path, **flags):
        run_stage(stage, config_path, **flags)

    return command


add_stage_command("ingest", "Parse ratings and users into the output directory.")
add_stage_command("indexes", "Compute IM/UM, the classification table and histograms.")
add_stage_command("train-mf", "Train the factor model on the training split.")
add_stage_command("train-mln", "Build the fairness-weighted examples and train the network.")
add_stage_command("evaluate", "Group IM means, alpha curves and the beta sweep.")
add_stage_command("all", "Run every stage in order.")


@fairrec.command(name="recommend", help="Write top-N recommendations with the network or the alpha filter.")
@run_options
@click.option("--method", type=click.Choice(["dl", "heuristic"]), help="Recommendation method.")
@click.option("--user", "user_ids", type=int, multiple=True, help="Raw user id; repeatable. Default: every user.")
@report_failures
def recommend(config_path, **flags):
    run_stage("recommend", config_path, **flags)


@fairrec.command(name="synth", help="Write a synthetic MovieLens-format ratings.dat and users.dat.")
@click.option("--out", "out_dir", default=".", show_default=True, help="Directory for the two files.")
@click.option("--toy", is_flag=True, help="Write the five-user, four-item toy matrix instead.")
@click.option("--num-users", type=int, default=synthetic.SyntheticSpec.num_users, show_default=True)
@click.option("--num-items", type=int, default=synthetic.SyntheticSpec.num_items, show_default=True)
@click.option("--density", type=float, default=synthetic.SyntheticSpec.density, show_default=True)
@click.option("--group-effect", type=float, default=synthetic.SyntheticSpec.group_effect, show_default=True)
@click.option("--seed", type=int, default=settings.SEED, show_default=True)
@report_failures
def synth(out_dir, toy, num_users, num_items, density, group_effect, seed):
    out = artifacts.ensure_dir(out_dir)
    if toy:
        ratings, users = synthetic.toy_fixture()
    else:
        ratings, users = synthetic.generate(synthetic.SyntheticSpec(
            num_users=num_users, num_items=num_items, density=density, group_effect=group_effect, seed=seed,
        ))
    for name, blob in ((settings.RATINGS_FILE, ratings), (settings.USERS_FILE, users)):
        (out / name).write_bytes(blob)
        click.echo(f"{name}: {out / name}")


def main():
    fairrec(prog_name="fairrec")


if __name__ == "__main__":
    main()

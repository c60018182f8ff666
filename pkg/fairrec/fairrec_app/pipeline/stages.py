"""
Pipeline stages: ingest -> indexes -> train-mf -> train-mln -> recommend -> evaluate.

Each stage reads the artifacts of the earlier ones from the output
directory and writes its own, so every stage can be rerun on its own.
Splits and indexes are recomputed from the ratings snapshot and the
configured seeds instead of being stored.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd

from fairrec.fairrec_app.FairLogger.FairLogger import FairLogger
from fairrec.fairrec_app.config.RunConfig import RunConfig, RuntimeSettings
from fairrec.fairrec_app.fair_models import dataset, evaluate, heuristic, minority_index, neural, pmf, recommend
from fairrec.fairrec_app.fair_models.FairErrors import ConfigError, DataIOError, FairRecError, GroupError
from fairrec.fairrec_app.fair_models.dataset import (
    DemographicTable,
    GroupAssignment,
    GroupLabel,
    RatingMatrix,
    RatingSplit,
    Scheme,
)
from fairrec.fairrec_app.fair_models.minority_index import ImIndex, NormalizedIndex, UmIndex
from fairrec.fairrec_app.pipeline import artifacts

logger = logging.getLogger(__name__)

STAGES = ("ingest", "indexes", "train-mf", "train-mln", "recommend", "evaluate")


@dataclass
class StageContext:
    ratings: RatingMatrix
    users: Optional[DemographicTable]
    parts: RatingSplit
    groups: Optional[GroupAssignment] = None
    im: Optional[ImIndex] = None
    um: Optional[UmIndex] = None
    im_norm: Optional[NormalizedIndex] = None
    um_norm: Optional[NormalizedIndex] = None


def _require_groups(users: Optional[DemographicTable], scheme) -> GroupAssignment:
    if users is None:
        raise GroupError("Demographics are required for this stage; run ingest with a users file",
                         group=Scheme.parse(scheme).value)
    return dataset.assign_groups(users, scheme)


def compute_indexes(cfg: RunConfig, train: RatingMatrix, groups: GroupAssignment):
    im = minority_index.compute_im(train, groups, cfg.thresholds, cfg.im_mode)
    um = minority_index.compute_um(train, im, cfg.thresholds, cfg.um_mode)
    return im, um


def load_context(cfg: RunConfig, with_indexes: bool = True) -> StageContext:
    ratings_path = cfg.paths.artifact("ratings")
    if not ratings_path.is_file():
        raise DataIOError("ratings snapshot not found; run the ingest stage first", path=str(ratings_path))
    ratings = dataset.load_ratings_snapshot(ratings_path)
    users = artifacts.load_users(cfg.paths.artifact("users"))
    context = StageContext(ratings=ratings, users=users, parts=dataset.split(ratings, cfg.split))
    if with_indexes:
        context.groups = _require_groups(users, cfg.scheme)
        context.im, context.um = compute_indexes(cfg, context.parts.train, context.groups)
        context.im_norm = minority_index.normalize(context.im)
        context.um_norm = minority_index.normalize(context.um)
    return context


def scheme_indexes(cfg: RunConfig, context: StageContext) -> Iterator[Tuple[GroupAssignment, ImIndex, UmIndex]]:
    """(groups, IM, UM) for every scheme; the configured one reuses the context's indexes."""
    for scheme in Scheme:
        if scheme is cfg.scheme:
            yield context.groups, context.im, context.um
            continue
        groups = dataset.assign_groups(context.users, scheme)
        try:
            im, um = compute_indexes(cfg, context.parts.train, groups)
        except GroupError as e:
            logger.warning(f"Skipping the {scheme.value} scheme: {e}")
            continue
        yield groups, im, um


def _evaluation_users(cfg: RunConfig, ratings: RatingMatrix) -> np.ndarray:
    users = np.arange(ratings.num_users)
    if cfg.max_eval_users and len(users) > cfg.max_eval_users:
        users = np.sort(np.random.default_rng(cfg.seed).choice(users, cfg.max_eval_users, replace=False))
    return users


def ingest(cfg: RunConfig) -> Dict[str, str]:
    report = FairLogger()
    ratings_path = artifacts.require(cfg.paths.ratings)
    artifacts.ensure_dir(cfg.paths.out_dir)
    try:
        with open(ratings_path, "rb") as f:
            ratings = dataset.parse_ratings(f)
    except OSError as e:
        raise DataIOError(f"cannot read ratings: {e}", path=str(ratings_path))
    dataset.save_ratings_snapshot(ratings, cfg.paths.artifact("ratings"))
    written = {"ratings": str(cfg.paths.artifact("ratings"))}

    report.add_heading("Ingest", level=2)
    report.add_list([
        f"ratings: {ratings.num_entries}",
        f"users: {ratings.num_users}",
        f"items: {ratings.num_items}",
    ])

    if cfg.paths.users:
        users_path = artifacts.require(cfg.paths.users)
        try:
            with open(users_path, "rb") as f:
                users = dataset.parse_users(f)
        except OSError as e:
            raise DataIOError(f"cannot read users: {e}", path=str(users_path))
        artifacts.save_users(users, cfg.paths.artifact("users"))
        written["users"] = str(cfg.paths.artifact("users"))
        totals = []
        for scheme in Scheme:
            groups = dataset.assign_groups(users, scheme)
            for name, count in dataset.group_totals(groups, ratings).items():
                totals.append({"scheme": scheme.value, "group": name, "users": count})
        report.add_text("Group populations among rated users:")
        report.add_dataframe(pd.DataFrame(totals))
    else:
        logger.warning("No users file configured; index and heuristic stages will be unavailable")
    return written


def indexes(cfg: RunConfig) -> Dict[str, str]:
    report = FairLogger()
    context = load_context(cfg)

    minority_index.export_csv(context.im, cfg.paths.artifact("im"))
    minority_index.export_csv(context.um, cfg.paths.artifact("um"))

    table3 = pd.concat([minority_index.classify_users(um, groups)
                        for groups, _, um in scheme_indexes(cfg, context)], ignore_index=True)
    artifacts.write_csv(table3, cfg.paths.artifact("table3"))

    histograms = evaluate.index_histograms(context.im, context.um, context.groups, cfg.histogram_bins)
    artifacts.write_csv(histograms, cfg.paths.artifact("histograms"))

    report.add_heading("Minority indexes", level=2)
    report.add_list([
        f"scheme: {cfg.scheme.value}, IM mode: {cfg.im_mode.value}, UM mode: {cfg.um_mode.value}",
        f"neutral items: {int(context.im.neutral.sum())} of {len(context.im)}",
        f"users with UM: {int(context.um.present.sum())}",
    ])
    report.add_dataframe(table3)
    return {name: str(cfg.paths.artifact(name)) for name in ("im", "um", "table3", "histograms")}


def train_mf(cfg: RunConfig) -> Dict[str, str]:
    report = FairLogger()
    context = load_context(cfg, with_indexes=False)
    model = pmf.train(context.parts.train, cfg.pmf, held_out=context.parts.test)
    pmf.save(model, cfg.paths.artifact("factors"))
    history = pd.DataFrame([vars(stats) for stats in model.history])
    artifacts.write_csv(history, cfg.paths.artifact("pmf_history"))

    report.add_heading("PMF", level=2)
    report.add_dataframe(history.tail(5))
    return {name: str(cfg.paths.artifact(name)) for name in ("factors", "pmf_history")}


def _load_factors(cfg: RunConfig, ratings: RatingMatrix) -> pmf.FactorModel:
    path = cfg.paths.artifact("factors")
    if not path.is_file():
        raise DataIOError("factor model not found; run the train-mf stage first", path=str(path))
    factors = pmf.load(path)
    factors.check_fits(ratings)
    return factors


def _load_mln(cfg: RunConfig) -> neural.MlnModel:
    path = cfg.paths.artifact("mln")
    if not path.is_file():
        raise DataIOError("network not found; run the train-mln stage first", path=str(path))
    return neural.load(path)


def training_ratings(cfg: RunConfig, train: RatingMatrix) -> RatingMatrix:
    """The training ratings expanded into network examples, capped at ``mln.max_ratings``."""
    cap = cfg.mln.max_ratings
    if not cap or train.num_entries <= cap:
        return train
    positions = np.sort(np.random.default_rng(cfg.mln.seed).choice(train.num_entries, cap, replace=False))
    logger.info(f"Using {cap} of {train.num_entries} training ratings for the network corpus")
    return train.subset(positions)


def train_mln(cfg: RunConfig) -> Dict[str, str]:
    report = FairLogger()
    context = load_context(cfg)
    factors = _load_factors(cfg, context.ratings)
    corpus = training_ratings(cfg, context.parts.train)
    examples = neural.build_training_arrays(factors, corpus, context.im_norm, context.um_norm,
                                            cfg.mln_beta_grid, cfg.mln.accuracy_scale)
    model = neural.init_mln(2 * factors.factors + 1, cfg.mln.hidden, cfg.mln.dropout, cfg.mln.seed)
    result = neural.mln_train(model, examples, cfg.mln)
    neural.save(result.model, cfg.paths.artifact("mln"))
    history = pd.DataFrame([vars(stats) for stats in result.history])
    artifacts.write_csv(history, cfg.paths.artifact("mln_history"))

    report.add_heading("Network", level=2)
    report.add_list([
        f"layers: {' -> '.join(str(s) for s in result.model.layer_sizes)}",
        f"examples: {len(examples)}",
        f"test MAE: {result.test_mae:.5f}",
    ])
    report.add_dataframe(history.tail(5))
    return {name: str(cfg.paths.artifact(name)) for name in ("mln", "mln_history")}


def _target_users(cfg: RunConfig, ratings: RatingMatrix) -> List[int]:
    if not cfg.users:
        return list(range(ratings.num_users))
    targets = []
    for raw in cfg.users:
        index = ratings.user_index(raw)
        if index is None:
            logger.warning(f"User {raw} is not in the ratings; skipped")
            continue
        targets.append(index)
    return targets


def recommend_stage(cfg: RunConfig) -> Dict[str, str]:
    report = FairLogger()
    threads = RuntimeSettings().threads
    if cfg.method == "dl":
        # the network path never reads demographics
        context = load_context(cfg, with_indexes=False)
        factors = _load_factors(cfg, context.ratings)
        mln = _load_mln(cfg)
        users = _target_users(cfg, context.ratings)
        batch = recommend.recommend_batch(mln, factors, context.ratings, users, cfg.beta, cfg.n, max_workers=threads)
        frame = recommend.to_frame([batch.lists[u] for u in users if u in batch.lists], context.ratings)
        path = artifacts.write_csv(frame, cfg.paths.artifact("recommendations_dl"))
        failures = len(batch.errors)
    else:
        context = load_context(cfg)
        factors = _load_factors(cfg, context.ratings)
        results, failures = [], 0
        for user in _target_users(cfg, context.ratings):
            label = context.groups.label_of(context.ratings.user_ids[user])
            try:
                results.append(heuristic.recommend_heuristic(factors, context.im, context.ratings, user, label,
                                                             cfg.alpha, cfg.n))
            except FairRecError as e:
                failures += 1
                logger.debug(f"Heuristic skipped user {context.ratings.user_ids[user]}: {e}")
        frame = heuristic.to_frame(results, context.ratings)
        path = artifacts.write_csv(frame, cfg.paths.artifact("recommendations_heuristic"))

    report.add_heading(f"Recommendations ({cfg.method})", level=2)
    report.add_list([f"rows: {len(frame)}", f"failed users: {failures}", f"N: {cfg.n}",
                     f"beta: {cfg.beta}" if cfg.method == "dl" else f"alpha: {cfg.alpha}"])
    return {f"recommendations_{cfg.method}": str(path)}


def evaluate_stage(cfg: RunConfig) -> Dict[str, str]:
    report = FairLogger()
    threads = RuntimeSettings().threads
    context = load_context(cfg)
    train, test = context.parts.train, context.parts.test
    factors = _load_factors(cfg, context.ratings)
    mln = _load_mln(cfg)
    # users without training votes have no UM to measure fairness against
    users = [u for u in _evaluation_users(cfg, context.ratings) if context.um.present[u]]

    table4 = []
    for groups, im, _ in scheme_indexes(cfg, context):
        try:
            table4.append(evaluate.prediction_im_means(test, im, groups))
        except GroupError as e:
            logger.warning(f"No held-out predictions to average for the {groups.scheme.value} scheme: {e}")
    table4 = pd.concat(table4, ignore_index=True) if table4 else pd.DataFrame(columns=["group", "type", "im_mean"])
    artifacts.write_csv(table4, cfg.paths.artifact("table4"))

    labelled = [u for u in users
                if context.groups.label_of(context.ratings.user_ids[u]) != GroupLabel.UNKNOWN]
    fig5, fig6 = evaluate.alpha_sweep(factors, context.im, train, test, context.groups,
                                      cfg.alpha_grid, cfg.n, users=labelled)
    artifacts.write_csv(fig5, cfg.paths.artifact("fig5"))
    artifacts.write_csv(fig6, cfg.paths.artifact("fig6"))

    sweep = evaluate.beta_sweep(mln, factors, train, test, context.groups, context.im_norm, context.um_norm,
                                cfg.beta_grid, cfg.n, users=users, max_workers=threads)
    fig7 = sweep.curves.merge(sweep.normalized, on="beta", suffixes=("", "_normalized"))
    fig7["optimum"] = fig7["beta"] == sweep.optimum
    artifacts.write_csv(fig7, cfg.paths.artifact("fig7"))

    report.add_heading("Evaluation", level=2)
    report.add_text("Mean IM of test-set predictions per group:")
    report.add_dataframe(table4)
    report.add_text("Beta sweep:")
    report.add_dataframe(sweep.curves)
    report.add_text(f"Optimum beta: {sweep.optimum}")
    return {name: str(cfg.paths.artifact(name)) for name in ("table4", "fig5", "fig6", "fig7")}


STAGE_FUNCTIONS = {
    "ingest": ingest,
    "indexes": indexes,
    "train-mf": train_mf,
    "train-mln": train_mln,
    "recommend": recommend_stage,
    "evaluate": evaluate_stage,
}


def run(stage: str, cfg: RunConfig) -> Dict[str, str]:
    """Runs one stage, or every stage in order for ``all``; writes the manifest."""
    if stage != "all" and stage not in STAGE_FUNCTIONS:
        raise ConfigError(f"Unknown stage '{stage}'", field_name="stage", accepted=",".join(STAGES))
    stages = STAGES if stage == "all" else (stage,)
    artifacts.ensure_dir(cfg.paths.out_dir)
    report = FairLogger().bind(cfg.paths.artifact("report"))
    written = {}
    for name in stages:
        logger.info(f"Stage {name} started")
        try:
            written.update(STAGE_FUNCTIONS[name](cfg))
        finally:
            report.flush()
        logger.info(f"Stage {name} finished")

    artifacts.write_manifest(
        cfg.paths.artifact("manifest"),
        stage=stage,
        config=cfg.snapshot(),
        inputs=[cfg.paths.ratings, cfg.paths.users],
        seeds={"split": cfg.split.seed, "pmf": cfg.pmf.seed, "mln": cfg.mln.seed, "evaluation": cfg.seed},
    )
    return written

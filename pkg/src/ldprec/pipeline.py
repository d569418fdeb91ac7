"""One-shot user-side perturbation followed by SP-side fitting and scoring.

Each fold plays the protocol once: every training rating is perturbed on
the user side and sent as a single message, the service provider fits a
predictor on the perturbed matrix alone, and the held-out true ratings are
used only for scoring. A :class:`CommLedger` counts what crossed in each
direction.
"""

from __future__ import annotations

import csv
import hashlib
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .baseline import fit_mf_sgd, fit_svd
from .config import ExperimentConfig
from .data import SparseRatingMatrix, default_movielens_path, load_dataset, subsample
from .errors import ConfigError, PrivacyBoundaryError
from .evaluation import FoldPlan, f_score, make_folds, rmse, top_k_confusion
from .mechanism import make_mechanism, perturb_matrix
from .mog import fit as fit_mog
from .mog import predict

log = logging.getLogger(__name__)

COLUMNS = (
    "dataset", "method", "mechanism", "predictor", "epsilon", "fold",
    "rmse", "f_score", "precision", "recall", "seed",
    "n_train", "n_test", "cold_start", "iterations",
    "user_to_sp_payload", "sp_to_user_payload", "dataset_hash", "config",
)

# modeled, not executed: the other protocol ships the item factor matrix back every iteration
PG_MF_PUBLISHED_MB = 0.15

# method labels kept free for rows produced outside this package
EXTERNAL_METHODS = ("pg-mf",)


@dataclass(frozen=True)
class CommLedger:
    """Messages and payload (in rating units) exchanged between users and the SP."""

    user_to_sp_messages: int = 0
    user_to_sp_payload: int = 0
    sp_to_user_messages: int = 0
    sp_to_user_payload: int = 0

    def __post_init__(self):
        if min(self.user_to_sp_messages, self.user_to_sp_payload,
               self.sp_to_user_messages, self.sp_to_user_payload) < 0:
            raise ValueError("ledger counts must be nonnegative")

    def __add__(self, other):
        return CommLedger(self.user_to_sp_messages + other.user_to_sp_messages,
                          self.user_to_sp_payload + other.user_to_sp_payload,
                          self.sp_to_user_messages + other.sp_to_user_messages,
                          self.sp_to_user_payload + other.sp_to_user_payload)

    def payload_bytes(self, value_bytes: int = 8) -> tuple[int, int]:
        return self.user_to_sp_payload * value_bytes, self.sp_to_user_payload * value_bytes


class PerturbedUpload:
    """The only object the SP side accepts: perturbed ratings plus the upload ledger."""

    __slots__ = ("matrix", "mechanism", "ledger")

    def __init__(self, matrix: SparseRatingMatrix, mechanism: str, ledger: CommLedger):
        self.matrix = matrix
        self.mechanism = mechanism
        self.ledger = ledger

    def __len__(self):
        return len(self.matrix)


def check_boundary(true: SparseRatingMatrix, perturbed: SparseRatingMatrix, private: bool) -> None:
    """Reject uploads that could carry true ratings across in a private mode.

    A perturbed array must not share memory with the true one, and no
    interior rating may come through unchanged (a continuous mechanism
    reproduces an interior value with probability zero).
    """
    if not private:
        return
    if np.shares_memory(true.ratings, perturbed.ratings):
        raise PrivacyBoundaryError("perturbed ratings share memory with the true ratings")
    dom = true.domain
    interior = (true.ratings > dom.low) & (true.ratings < dom.high)
    same = interior & (perturbed.ratings == true.ratings)
    if np.any(same):
        raise PrivacyBoundaryError(
            f"{int(same.sum())} interior ratings crossed the boundary unperturbed"
        )


def user_side_upload(R_train: SparseRatingMatrix, mech, rng) -> PerturbedUpload:
    """Perturb each training rating once and send it as one message."""
    perturbed = perturb_matrix(R_train, mech, rng)
    check_boundary(R_train, perturbed, private=mech.name != "none")
    n = len(perturbed)
    return PerturbedUpload(perturbed, mech.name, CommLedger(n, n, 0, 0))


def fit_predictor(upload: PerturbedUpload, predictor: str, config: ExperimentConfig, rng):
    """SP-side fit on the perturbed upload; returns the model and its iteration count."""
    if not isinstance(upload, PerturbedUpload):
        raise PrivacyBoundaryError("the SP side only accepts a PerturbedUpload")
    R = upload.matrix
    if predictor == "mog-mf":
        model = fit_mog(R, config.fit_config(), rng=rng)
        return model, model.info["iterations"]
    if predictor == "mf":
        model = fit_mf_sgd(R, config.latent_dim, config.mf_learning_rate, config.mf_epochs,
                           rng=rng, reg=config.mf_reg)
        return model, config.mf_epochs
    if predictor == "svd":
        return fit_svd(R, config.latent_dim, config.svd_fill), 0
    raise ConfigError(f"unknown predictor {predictor!r}")


def fold_streams(seed: int, fold: int, epsilon: float, mechanism: str):
    """Independent perturbation and fitting streams for one grid point.

    The non-private mechanism ignores epsilon, so its streams (and results)
    are the same for every epsilon.
    """
    eps_key = 0 if mechanism == "none" else int(round(epsilon * 1e6))
    ss = np.random.SeedSequence(seed, spawn_key=(fold, eps_key))
    perturb_ss, fit_ss = ss.spawn(2)
    return np.random.default_rng(perturb_ss), np.random.default_rng(fit_ss)


def evaluate_fold(model, train: SparseRatingMatrix, test: SparseRatingMatrix, fill: float,
                  config: ExperimentConfig) -> dict:
    """Score held-out true ratings; cold-start cells get ``fill``."""
    seen_u = np.zeros(train.num_users, dtype=bool)
    seen_u[train.users] = True
    seen_i = np.zeros(train.num_items, dtype=bool)
    seen_i[train.items] = True
    cold = ~(seen_u[test.users] & seen_i[test.items])
    pred = np.where(cold, fill, predict(model, test.users, test.items))
    if config.clip_predictions:
        pred = test.domain.clip(pred)
    counts = top_k_confusion(test.users, test.ratings, pred, config.top_k, config.threshold)
    return {
        "rmse": rmse(test.ratings, pred),
        "f_score": f_score(counts),
        "precision": counts.precision,
        "recall": counts.recall,
        "cold_start": int(cold.sum()),
    }


def run_private_pipeline(R: SparseRatingMatrix, mechanism: str, predictor: str, plan: FoldPlan,
                         config: ExperimentConfig, epsilon: float | None = None,
                         dataset_hash: str = "", folds=None):
    """Run the protocol on every fold of ``plan`` at one privacy budget.

    Returns the report rows (one per fold) and the ledger summed over folds.
    """
    if mechanism not in ("blp", "laplace-clamp", "none"):
        raise ConfigError(f"mechanism {mechanism!r} cannot feed the pipeline")
    if mechanism != "none" and epsilon is None:
        raise ConfigError(f"mechanism {mechanism!r} needs an epsilon")
    mech = make_mechanism(mechanism, R.domain, epsilon)
    rows, total = [], CommLedger()
    for fold in range(plan.n_folds) if folds is None else folds:
        train = R.take(plan.train_index(fold))
        test = R.take(plan.test_index(fold))
        perturb_rng, fit_rng = fold_streams(config.seed, fold, epsilon or 0.0, mechanism)
        upload = user_side_upload(train, mech, perturb_rng)
        model, iterations = fit_predictor(upload, predictor, config, fit_rng)
        metrics = evaluate_fold(model, upload.matrix, test, upload.matrix.global_mean(), config)
        total = total + upload.ledger
        rows.append({
            "dataset": config.dataset,
            "method": f"{mechanism}+{predictor}",
            "mechanism": mechanism,
            "predictor": predictor,
            "epsilon": epsilon if epsilon is not None else "",
            "fold": fold,
            **{k: metrics[k] for k in ("rmse", "f_score", "precision", "recall")},
            "seed": config.seed,
            "n_train": len(train),
            "n_test": len(test),
            "cold_start": metrics["cold_start"],
            "iterations": iterations,
            "user_to_sp_payload": upload.ledger.user_to_sp_payload,
            "sp_to_user_payload": upload.ledger.sp_to_user_payload,
            "dataset_hash": dataset_hash,
            "config": config.provenance(),
        })
    return rows, total


def matrix_digest(R: SparseRatingMatrix, length: int = 12) -> str:
    h = hashlib.sha256()
    for arr in (R.users, R.items, R.ratings):
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()[:length]


@dataclass
class ExperimentReport:
    rows: list = field(default_factory=list)
    ledger: CommLedger = field(default_factory=CommLedger)
    timings: list = field(default_factory=list)

    def add_external(self, method: str, epsilon: float, rmse: float, f_score: float | str = "",
                     dataset: str = "movielens", fold: int | str = "") -> None:
        """Append a result computed elsewhere (e.g. PG-MF) so one CSV holds every curve.

        Columns this package cannot vouch for are left empty.
        """
        if method not in EXTERNAL_METHODS:
            raise ConfigError(f"external method must be one of {EXTERNAL_METHODS}")
        row = dict.fromkeys(COLUMNS, "")
        row.update(dataset=dataset, method=method, epsilon=float(epsilon), fold=fold,
                   rmse=float(rmse), f_score=f_score)
        self.rows.append(row)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: _fmt(row[k]) for k in COLUMNS})
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(self.to_csv())

    def write_timings(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(("mechanism", "predictor", "epsilon", "wall_time_s"))
            writer.writerows(self.timings)


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return value


def load_experiment_data(config: ExperimentConfig) -> SparseRatingMatrix:
    path = config.data_path
    if path is None and config.dataset == "movielens":
        path = default_movielens_path()
    if path is None:
        raise FileNotFoundError(f"no data path given for {config.dataset}")
    return load_dataset(config.dataset, path)


def run_experiment(config: ExperimentConfig, R: SparseRatingMatrix | None = None,
                   grid=None) -> ExperimentReport:
    """Run every (mechanism, predictor, epsilon) point of the grid over all folds.

    ``grid`` defaults to the single (mechanism, predictor) pair of
    ``config``. Non-private results do not depend on epsilon, so they are
    computed once and repeated under each epsilon label.
    """
    if R is None:
        R = load_experiment_data(config)
    digest = matrix_digest(R)
    if config.subsample is not None and config.subsample < 1:
        R = subsample(R, config.subsample, seed=config.seed)
    plan = make_folds(R, config.folds, config.seed)
    grid = grid or [(config.mechanism, config.predictor)]
    report = ExperimentReport()
    for mechanism, predictor in grid:
        cfg = config.replace(mechanism=mechanism, predictor=predictor)
        cached = None
        for eps in config.epsilons:
            t0 = time.perf_counter()
            if mechanism == "none" and cached is not None:
                rows = [{**r, "epsilon": eps} for r in cached]
            else:
                rows, ledger = run_private_pipeline(R, mechanism, predictor, plan, cfg,
                                                    eps, digest)
                report.ledger = report.ledger + ledger
                if mechanism == "none":
                    cached = rows
            report.rows.extend(rows)
            report.timings.append((mechanism, predictor, eps, round(time.perf_counter() - t0, 3)))
            log.info("%s+%s eps=%g rmse=%.4f", mechanism, predictor, eps,
                     np.mean([r["rmse"] for r in rows]))
    return report


@dataclass(frozen=True)
class CommRow:
    method: str
    user_to_sp: str
    sp_to_user: str
    sp_to_user_bytes_per_iteration: int
    note: str


def compare_communication(n_items: int, latent_dim: int = 20, value_bytes: int = 8,
                          ledger: CommLedger | None = None) -> list[CommRow]:
    """Per-method communication summary for one training run.

    The one-shot protocols send one rating unit per rating and nothing back.
    The gradient-exchange protocol is modeled as returning the item factor
    matrix (``n_items * latent_dim`` values) every iteration.
    """
    modeled = n_items * latent_dim * value_bytes
    sent = "1 rating-unit per rating"
    if ledger is not None:
        sent += f" ({ledger.user_to_sp_payload} total)"
    return [
        CommRow("BLP-MoG-MF", sent, "no transfer", 0, "measured by the pipeline ledger"),
        CommRow("ISGD", sent, "no transfer", 0, "laplace-clamp input perturbation"),
        CommRow("PG-MF", "1 rating-unit per rating", f"{modeled / 2**20:.3f} MiB per iteration",
                modeled, f"modeled as {n_items} x {latent_dim} x {value_bytes} bytes; "
                         f"published estimate {PG_MF_PUBLISHED_MB} MB"),
    ]

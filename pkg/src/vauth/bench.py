"""Evaluation suites on the synthetic corpora, written as JSON, CSV and PNG."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path

from scipy import stats

from . import plotting
from .attack import (fp_decay_montecarlo, run_control_arm, run_impersonation_attack,
                     run_injection_attack, run_mangled_attack, run_replay_attack)
from .decision import ClassifierModel, TrainConfig, build_training_set, train_classifier
from .pipeline import DEFAULT_CONFIG, PipelineConfig, batch_match
from .synth import NOISE_KINDS, synth_command_corpus, synth_phoneme_bank

log = logging.getLogger(__name__)

SUITES = ("phoneme", "command", "attack", "fpdecay")
INJECTION_LEVELS = (0.0, 0.003, 0.01, 0.03, 0.1, 0.3)


def train_on_bank(seed: int = 0, replication: int = 5, config: PipelineConfig = DEFAULT_CONFIG,
                  hyper: TrainConfig = TrainConfig()) -> ClassifierModel:
    bank = synth_phoneme_bank(seed)
    ex = build_training_set([p.acc for p in bank], [p.mic for p in bank], replication, config)
    return train_classifier(ex, hyper)


def write_csv(rows: list[dict], path, fields=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = fields or (list(rows[0]) if rows else [])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    return path


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def _model_or_train(model, seed, config):
    if model is not None or config.decision_mode == "threshold":
        return model
    log.info("training a model on synthetic bank seed %d", seed)
    return train_on_bank(seed, config=config)


def phoneme_suite(seed: int, out: Path, model=None, config: PipelineConfig = DEFAULT_CONFIG) -> dict:
    """Train on bank ``seed`` (unless a model is given), evaluate on bank ``seed + 1``."""
    model = _model_or_train(model, seed, config)
    bank = synth_phoneme_bank(seed + 1)
    res = batch_match(bank, model, config)
    rows = res.table
    write_csv(rows, out / "phoneme_table.csv", ["mic", "acc", "tp", "fp", "n_true", "n_false"])
    summary = {"suite": "phoneme", "train_seed": seed, "eval_seed": seed + 1,
               "table": rows, "config_digest": config.digest()}
    write_json(summary, out / "phoneme_table.json")
    plotting.match_matrix(res.matrix, [p.label for p in bank], out / "phoneme_matrix.png",
                          f"bank seed {seed + 1}")
    return summary


def command_suite(seed: int, out: Path, model=None, config: PipelineConfig = DEFAULT_CONFIG,
                  n_utterances: int = 10) -> dict:
    model = _model_or_train(model, seed, config)
    corpus = synth_command_corpus(seed, n_utterances)
    res = batch_match(corpus, model, config)
    rows = res.table
    write_csv(rows, out / "command_table.csv", ["mic", "acc", "tp", "fp", "n_true", "n_false"])
    summary = {"suite": "command", "speaker_seed": seed, "n_utterances": n_utterances,
               "table": rows, "config_digest": config.digest()}
    write_json(summary, out / "command_table.json")
    plotting.match_matrix(res.matrix, [p.label for p in corpus], out / "command_matrix.png",
                          f"speaker {seed}")
    return summary


def attack_suite(seed: int, out: Path, model=None, config: PipelineConfig = DEFAULT_CONFIG,
                 n_utterances: int = 10, scenarios=("mangled", "replay", "impersonation", "injection"),
                 injection_trials: int = 5) -> dict:
    model = _model_or_train(model, seed, config)
    victim = synth_command_corpus(seed, n_utterances)
    reports = []
    injection = {}
    if "mangled" in scenarios:
        reports.append(run_mangled_attack(victim, model, (15, 30), config).to_dict())
        reports.append(run_control_arm(victim, model, config).to_dict())
    if "replay" in scenarios:
        reports.append(run_replay_attack(victim, model, config).to_dict())
    if "impersonation" in scenarios:
        impostor = synth_command_corpus(seed + 1, n_utterances)
        reports.append(run_impersonation_attack(victim, impostor, model, config).to_dict())
    if "injection" in scenarios:
        for kind in NOISE_KINDS:
            rep = run_injection_attack(INJECTION_LEVELS, victim[0].mic, model, config, kind,
                                       injection_trials, seed)
            injection[kind] = rep.details
            d = rep.to_dict()
            d["scenario"] = f"Injection/{kind}"
            reports.append(d)
    summary_rows = [{k: r[k] for k in ("scenario", "trials", "accepted", "rejection_rate")}
                    for r in reports]
    write_csv(summary_rows, out / "attack_summary.csv")
    if injection:
        write_csv([{"kind": k, **r} for k, rows in injection.items() for r in rows],
                  out / "injection.csv", ["kind", "level", "trials", "accepted"])
        plotting.injection_curve(injection, out / "injection.png")
    summary = {"suite": "attack", "seed": seed, "reports": reports, "config_digest": config.digest()}
    write_json(summary, out / "attack_reports.json")
    if reports:
        plotting.rejection_bars(summary_rows, out / "attack_rejection.png")
    return summary


def fpdecay_suite(seed: int, out: Path, trials: int = 100_000, th: float = 0.4) -> dict:
    rows = fp_decay_montecarlo(stats.uniform(0.0, 0.5), th, (1, 2, 4, 8, 16), trials, seed)
    write_csv(rows, out / "fpdecay.csv", ["n", "empirical_fp", "hoeffding_bound", "mc_std_error",
                                          "trials"])
    summary = {"suite": "fpdecay", "seed": seed, "threshold": th, "distribution": "uniform[0,0.5]",
               "rows": rows}
    write_json(summary, out / "fpdecay.json")
    plotting.fp_decay(rows, out / "fpdecay.png")
    return summary


def run_suite(name: str, seed: int, out, model=None, config: PipelineConfig = DEFAULT_CONFIG) -> dict:
    out = Path(out)
    if name == "phoneme":
        return phoneme_suite(seed, out, model, config)
    if name == "command":
        return command_suite(seed, out, model, config)
    if name == "attack":
        return attack_suite(seed, out, model, config)
    if name == "fpdecay":
        return fpdecay_suite(seed, out)
    raise ValueError(f"unknown suite {name!r}; expected one of {SUITES}")


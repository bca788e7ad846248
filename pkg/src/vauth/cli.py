"""``vauth`` command-line front end.

Exit codes: 0 match (or success), 1 no match, 2 error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .errors import VAuthError
from .pipeline import DEFAULT_CONFIG, PipelineConfig

log = logging.getLogger("vauth")

EXIT_MATCH, EXIT_NO_MATCH, EXIT_ERROR = 0, 1, 2

# flag -> (section, key) in the nested pipeline config
THRESHOLD_FLAGS = {
    "envelope_threshold": (None, "envelope_threshold"),
    "decision_threshold": (None, "decision_threshold"),
    "decision_mode": (None, "decision_mode"),
    "pitch_distance_max": ("rules", "pitch_distance_max"),
    "segment_corr_gate": ("rules", "corr_gate"),
    "f0_min": ("rules", "f0_min_hz"),
    "f0_max": ("rules", "f0_max_hz"),
}


class CliError(Exception):
    pass


def _common() -> argparse.ArgumentParser:
    # SUPPRESS defaults let the same flags appear before or after the subcommand
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", type=Path, help="JSON file with pipeline settings")
    p.add_argument("--seed", type=int, help="seed for synthetic data (default 0)")
    p.add_argument("-v", "--verbose", action="count", help="more logging; repeat for debug")
    g = p.add_argument_group("thresholds")
    g.add_argument("--envelope-threshold", type=float)
    g.add_argument("--pitch-distance-max", type=float)
    g.add_argument("--segment-corr-gate", type=float)
    g.add_argument("--decision-threshold", type=float)
    g.add_argument("--decision-mode", choices=("classifier", "threshold"))
    g.add_argument("--f0-min", type=float)
    g.add_argument("--f0-max", type=float)
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="vauth", parents=[common],
                                 description="Body-conduction voice authentication engine.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, metavar="COMMAND")

    m = sub.add_parser("match", parents=[common], help="match one recording pair")
    m.add_argument("acc", type=Path, help="body-channel WAV")
    m.add_argument("mic", type=Path, help="microphone WAV")
    m.add_argument("--model", type=Path)
    m.add_argument("--json-out", type=Path, help="write the report here instead of stdout")
    m.add_argument("--cleaned-out", type=Path, help="write the cleaned microphone WAV on a match")

    t = sub.add_parser("train", parents=[common], help="train a classifier on a 44-pair bank")
    t.add_argument("--bank", type=Path, help="directory written by 'vauth synth bank' "
                                             "(default: synthesize one from --seed)")
    t.add_argument("--replication", type=int, default=5, help="copies of each positive (default 5)")
    t.add_argument("--out", type=Path, required=True, help="model file to write")
    t.add_argument("--csv-out", type=Path, help="also dump the training feature vectors")

    s = sub.add_parser("synth", parents=[common], help="write a synthetic corpus as WAV files")
    s.add_argument("kind", choices=("bank", "commands", "noise"))
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--count", type=int, default=10, help="commands to synthesize")
    s.add_argument("--noise-kind", choices=("white", "periodic", "spike"), default="white")
    s.add_argument("--level", type=float, default=0.05)
    s.add_argument("--duration", type=float, default=2.0)
    s.add_argument("--pcm16", action="store_true", help="16-bit PCM instead of 32-bit float")

    b = sub.add_parser("bench", parents=[common], help="run an evaluation suite")
    b.add_argument("--suite", required=True, help="phoneme, command, attack or fpdecay")
    b.add_argument("--out", type=Path, required=True, help="output directory")
    b.add_argument("--model", type=Path, help="use this model instead of training one")

    a = sub.add_parser("attack", parents=[common], help="run attack scenarios")
    a.add_argument("--scenario", action="append",
                   choices=("mangled", "replay", "impersonation", "injection"),
                   help="repeatable; default all")
    a.add_argument("--out", type=Path, required=True)
    a.add_argument("--model", type=Path)
    a.add_argument("--utterances", type=int, default=10)

    v = sub.add_parser("serve", parents=[common], help="run the network gateway")
    v.add_argument("--listen", default="127.0.0.1:7450", help="host:port (default %(default)s)")
    v.add_argument("--model", type=Path)
    v.add_argument("--session-timeout", type=float, default=10.0)

    z = sub.add_parser("analyze", parents=[common], help="per-segment diagnostics for one pair")
    z.add_argument("acc", type=Path)
    z.add_argument("mic", type=Path)
    z.add_argument("--model", type=Path)
    z.add_argument("--plot", type=Path, help="PNG with both channels and segment verdicts")
    return ap


def effective_config(args) -> PipelineConfig:
    d = DEFAULT_CONFIG.to_dict()
    path = getattr(args, "config", None)
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {path}: {exc}") from exc
        d = PipelineConfig.from_dict(loaded).to_dict()
    for flag, (section, key) in THRESHOLD_FLAGS.items():
        if hasattr(args, flag):
            (d[section] if section else d)[key] = getattr(args, flag)
    return PipelineConfig.from_dict(d)


def _load_model(path, config: PipelineConfig):
    from .decision import load_model

    if path is None:
        if config.decision_mode == "classifier":
            raise CliError("--model is required unless --decision-mode threshold is used")
        return None
    return load_model(path)


def _read(path):
    from .wavio import read_wav

    try:
        return read_wav(path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc


def cmd_match(args, config) -> int:
    from .pipeline import match
    from .wavio import write_wav

    model = _load_model(getattr(args, "model", None), config)
    rep = match(_read(args.acc), _read(args.mic), model, config)
    text = json.dumps(rep.to_json(), indent=2)
    if args.json_out:
        args.json_out.write_text(text + "\n")
    else:
        print(text)
    if args.cleaned_out and rep.is_match:
        write_wav(args.cleaned_out, rep.cleaned_mic, "f32")
    return EXIT_MATCH if rep.is_match else EXIT_NO_MATCH


def read_bank(path: Path):
    """Pairs from a directory holding ``manifest.json`` or ``*_acc.wav``/``*_mic.wav`` files."""
    path = Path(path)
    if not path.is_dir():
        raise CliError(f"bank {path} is not a directory")
    manifest = path / "manifest.json"
    if manifest.exists():
        entries = json.loads(manifest.read_text())["pairs"]
        files = [(path / e["acc"], path / e["mic"]) for e in entries]
    else:
        files = [(a, a.with_name(a.name[:-len("_acc.wav")] + "_mic.wav"))
                 for a in sorted(path.glob("*_acc.wav"))]
    for a, m in files:
        if not m.exists():
            raise CliError(f"{a.name} has no microphone partner {m.name}")
    return [(_read(a), _read(m)) for a, m in files]


def cmd_train(args, config) -> int:
    from .decision import build_training_set, save_model, train_classifier, write_training_csv

    if args.bank is not None:
        pairs = read_bank(args.bank)
        accs, mics = [a for a, _ in pairs], [m for _, m in pairs]
    else:
        from .synth import synth_phoneme_bank

        bank = synth_phoneme_bank(getattr(args, "seed", 0))
        accs, mics = [p.acc for p in bank], [p.mic for p in bank]
    if len(accs) != 44:
        raise CliError(f"a training bank needs 44 recording pairs, found {len(accs)}")
    if args.replication < 1:
        raise CliError("--replication must be at least 1")
    examples = build_training_set(accs, mics, args.replication, config)
    model = train_classifier(examples)
    save_model(model, args.out)
    if args.csv_out:
        write_training_csv(examples, args.csv_out)
    n = len(accs)
    meta = model.meta
    print(f"base feature vectors: {n * n} ({n} positive, {n * n - n} negative)")
    print(f"after replication x{args.replication}: {meta['n_positive']} positive, "
          f"{meta['n_negative']} negative")
    print(f"training accuracy: {100 * meta['train_accuracy']:.2f}%  support vectors: {meta['n_support']}")
    print(f"model written to {args.out}")
    return EXIT_MATCH


def cmd_synth(args, config) -> int:
    from .synth import make_noise, synth_command_corpus, synth_phoneme_bank
    from .wavio import write_wav

    seed = getattr(args, "seed", 0)
    enc = "pcm16" if args.pcm16 else "f32"
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.kind == "noise":
        sig = make_noise(args.noise_kind, args.level, args.duration, seed)
        name = f"noise_{args.noise_kind}.wav"
        write_wav(out / name, sig, enc)
        print(out / name)
        return EXIT_MATCH
    pairs = synth_phoneme_bank(seed) if args.kind == "bank" else synth_command_corpus(seed, args.count)
    entries = []
    for k, p in enumerate(pairs):
        a, m = f"{k:03d}_acc.wav", f"{k:03d}_mic.wav"
        write_wav(out / a, p.acc, enc)
        write_wav(out / m, p.mic, enc)
        entries.append({"acc": a, "mic": m, "label": p.label, "class": p.truth.get("class"),
                        "segments": p.truth.get("segments")})
    (out / "manifest.json").write_text(json.dumps({"kind": args.kind, "seed": seed,
                                                   "pairs": entries}, indent=1, ensure_ascii=False))
    print(f"wrote {len(entries)} pairs to {out}")
    return EXIT_MATCH


def cmd_bench(args, config) -> int:
    from .bench import SUITES, run_suite
    from .pipeline import format_table

    if args.suite not in SUITES:
        raise CliError(f"unknown suite {args.suite!r}; choose from {', '.join(SUITES)}")
    model = _load_model(args.model, config) if args.model else None
    summary = run_suite(args.suite, getattr(args, "seed", 0), args.out, model, config)
    if "table" in summary:
        print(format_table(summary["table"]))
    elif "rows" in summary:
        for r in summary["rows"]:
            print(f"n={r['n']:<3d} empirical={r['empirical_fp']:.5f} bound={r['hoeffding_bound']:.5f}")
    else:
        _print_reports(summary["reports"])
    print(f"results in {args.out}")
    return EXIT_MATCH


def _print_reports(reports):
    for r in reports:
        rate = "-" if r["rejection_rate"] is None else f"{100 * r['rejection_rate']:.1f}%"
        print(f"{r['scenario']:<22}{r['accepted']:>5d}/{r['trials']:<5d} rejected {rate}")


def cmd_attack(args, config) -> int:
    from .bench import attack_suite

    model = _load_model(args.model, config) if args.model else None
    scen = tuple(args.scenario or ("mangled", "replay", "impersonation", "injection"))
    summary = attack_suite(getattr(args, "seed", 0), args.out, model, config, args.utterances, scen)
    _print_reports(summary["reports"])
    return EXIT_MATCH


def cmd_serve(args, config) -> int:
    from .gateway import serve

    if args.model is None and config.decision_mode == "classifier":
        raise CliError("--model is required unless --decision-mode threshold is used")
    serve(args.listen, args.model, config, args.session_timeout)
    return EXIT_MATCH


def cmd_analyze(args, config) -> int:
    from .pipeline import match

    model = _load_model(getattr(args, "model", None), config)
    acc, mic = _read(args.acc), _read(args.mic)
    rep = match(acc, mic, model, config)
    print(f"alignment shift: {rep.alignment_shift} samples")
    print(f"{'seg':>4} {'start':>7} {'end':>7} {'f0 acc':>7} {'f0 mic':>7} {'xcorr':>6}  verdict")
    for s in rep.segments:
        fa = "-" if s["acc_f0_hz"] is None else f"{s['acc_f0_hz']:.0f}"
        fm = "-" if s["mic_f0_hz"] is None else f"{s['mic_f0_hz']:.0f}"
        xc = "-" if s["max_xcorr"] is None else f"{s['max_xcorr']:.2f}"
        print(f"{s['index']:>4} {s['start_sec']:>7.3f} {s['end_sec']:>7.3f} {fa:>7} {fm:>7} {xc:>6}  "
              f"{s['verdict']}")
    if rep.decision is not None:
        d = rep.decision
        print(f"decision: {'match' if d.is_match else 'no match'} score={d.score:.3f} "
              f"p={d.probability:.3f} center={d.max_xcorr:.3f}")
    else:
        print(f"decision: no match ({rep.reason})")
    if args.plot:
        from . import plotting
        from .pipeline import align_prepared, prepare_channel

        # plot the channels the way the segmenter saw them
        _, a, m = align_prepared(prepare_channel(acc, "acc", config),
                                 prepare_channel(mic, "mic", config), config)
        plotting.pair_overview(a, m, rep, args.plot)
    return EXIT_MATCH if rep.is_match else EXIT_NO_MATCH


COMMANDS = {"match": cmd_match, "train": cmd_train, "synth": cmd_synth, "bench": cmd_bench,
            "attack": cmd_attack, "serve": cmd_serve, "analyze": cmd_analyze}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors already; keep --help/--version at 0
        return int(exc.code or 0)
    verbose = getattr(args, "verbose", 0) or 0
    logging.basicConfig(level=(logging.WARNING, logging.INFO, logging.DEBUG)[min(verbose, 2)],
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = effective_config(args)
        return COMMANDS[args.command](args, config)
    except (CliError, VAuthError, ValueError, OSError) as exc:
        print(f"vauth: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except KeyboardInterrupt:
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())

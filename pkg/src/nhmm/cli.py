"""Command-line interface: ``nhmm {train,synth,align,loglik,inspect,make-toy}``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .data import (
    ToySpec,
    check_feasibility,
    compute_norm_stats,
    generate_toy_corpus,
    load_corpus,
    save_melbin,
    toy_vocabulary,
    write_toy_corpus,
    Vocabulary,
    alignment_accuracy,
)
from .errors import ConfigError, ContractError, FormatError, InputError, NumericalError
from .lattice import batch_loglik, build_lattice, format_alignment, occupancy_posterior, viterbi
from .model import param_count
from .numerics.tensor import no_grad
from .synthesis import SynthesisOptions, format_rate_report, rate_report, synthesize
from .training import RunConfig, Trainer, evaluate_loglik, init_model, log_header

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "NHMM_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _env_seed():
    val = os.environ.get(SEED_ENV)
    if val is None or val == "":
        return None
    try:
        return int(val)
    except ValueError:
        raise ConfigError(f"{SEED_ENV} must be an integer, got {val!r}") from None


def _say(msg):
    print(msg, file=sys.stderr)


def _provenance(ck_path, ck):
    cfg_hash = RunConfig.from_dict(ck.run_config).digest() if ck.run_config else "none"
    return {"checkpoint": ckpt_io.file_hash(ck_path), "config": cfg_hash}


def _prov_line(prov):
    return " ".join(f"{k}={v}" for k, v in prov.items())


def _load_normalized(ck, manifest):
    if ck.vocab is None:
        raise InputError("checkpoint has no vocabulary")
    utts = load_corpus(manifest, ck.vocab)
    if ck.norm is not None:
        utts = ck.norm.normalize(utts)
    return utts


# train -----------------------------------------------------------------------

def cmd_train(args):
    cfg_path = Path(args.config)
    run = RunConfig.from_text(cfg_path.read_text(encoding="utf-8"))
    seed = _env_seed()
    if seed is not None:
        run.seed = seed
    if args.max_updates is not None:
        run.max_updates = args.max_updates
    base = cfg_path.parent
    out_dir = base / run.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)

    vocab = Vocabulary.load(base / run.vocab)
    raw = load_corpus(base / run.train_manifest, vocab)
    K = run.states_per_symbol
    raw, rejected = check_feasibility(raw, K)
    for utt_id in rejected:
        _say(f"rejected {utt_id}: fewer frames than states")
    valid_raw = []
    if run.valid_manifest:
        valid_raw, vrej = check_feasibility(load_corpus(base / run.valid_manifest, vocab), K)
        for utt_id in vrej:
            _say(f"rejected validation item {utt_id}: fewer frames than states")

    if args.resume:
        ck = ckpt_io.load_checkpoint(args.resume)
        model, norm, adam, update = ck.model, ck.norm, ck.adam, ck.update
    else:
        norm = compute_norm_stats(raw)
        model = init_model(run, vocab.size, raw[0].frames.shape[1], norm)
        adam, update = None, 0
    train_utts = norm.normalize(raw)
    valid_utts = norm.normalize(valid_raw)
    trainer = Trainer(model, train_utts, run, adam=adam, update=update)

    log_path = out_dir / "train_log.tsv"
    if not args.resume or not log_path.exists():
        log_path.write_text(log_header() + "\n", encoding="utf-8")
    (out_dir / "run_info.txt").write_text(
        f"config_hash={run.digest()}\n" + run.to_text(), encoding="utf-8"
    )

    def save(name):
        ck = ckpt_io.Checkpoint(model, norm, vocab, trainer.update, trainer.adam, run.to_dict())
        h = ckpt_io.save_checkpoint(out_dir / name, ck)
        return h

    def save_periodic():
        save(f"ckpt_{trainer.update:06d}.nhmc")
        h = save("latest.nhmc")
        if valid_utts:
            ll, fl = evaluate_loglik(model, valid_utts)
            vpath = out_dir / "valid_log.tsv"
            if not vpath.exists():
                vpath.write_text("update\tmean_nll\tnll_per_frame\tcheckpoint\n", encoding="utf-8")
            with open(vpath, "a", encoding="utf-8") as f:
                f.write(f"{trainer.update}\t{float(-ll.mean())!r}\t{float(-ll.sum() / fl.sum())!r}\t{h}\n")

    if trainer.update == 0:
        save_periodic()
    with open(log_path, "a", encoding="utf-8") as log:
        while trainer.update < run.max_updates:
            try:
                rec = trainer.step()
            except NumericalError as e:
                save("diagnostic.nhmc")
                raise NumericalError(f"update {trainer.update + 1}: {e}") from None
            log.write(rec.tsv() + "\n")
            log.flush()
            if trainer.update % run.checkpoint_interval == 0:
                save_periodic()
    if trainer.update % run.checkpoint_interval != 0:
        save_periodic()
    _say(f"trained to update {trainer.update}; checkpoints in {out_dir}")
    return EXIT_OK


# synth -------------------------------------------------------------------------

def _parse_state_q(spec):
    out = {}
    if not spec:
        return out
    for item in spec.split(","):
        try:
            k, v = item.split("=")
            out[int(k)] = float(v)
        except ValueError:
            raise UsageError(f"bad --state-q entry {item!r}, expected STATE=Q") from None
    return out


def cmd_synth(args):
    if args.text is not None:
        text = args.text
    elif args.symbols_file is not None:
        text = Path(args.symbols_file).read_text(encoding="utf-8")
    else:
        raise UsageError("give --text or --symbols-file")
    if not text.split():
        raise UsageError("empty symbol sequence")
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    if ck.vocab is None:
        raise InputError("checkpoint has no vocabulary")
    symbols = ck.vocab.encode(text)
    run = RunConfig.from_dict(ck.run_config) if ck.run_config else RunConfig()
    seed = args.seed if args.seed is not None else _env_seed()
    dropout = run.synth_dropout if args.dropout is None else args.dropout == "on"
    opts = SynthesisOptions(
        acoustic_mode=args.acoustic_mode or run.synth_acoustic_mode,
        duration_mode=args.duration_mode or run.synth_duration_mode,
        q=args.q if args.q is not None else (run.synth_q or None),
        state_q=_parse_state_q(args.state_q),
        max_frames=args.max_frames,
        seed=seed if seed is not None else 0,
        dropout=dropout,
    )
    result = synthesize(ck.model, symbols, opts)
    prov = _provenance(args.checkpoint, ck)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    frames = ck.norm.invert(result.frames) if ck.norm is not None else result.frames
    save_melbin(frames, out / f"{args.name}.melbin")
    (out / f"{args.name}.melbin.meta").write_text(
        "".join(f"{k}={v}\n" for k, v in prov.items()), encoding="utf-8"
    )
    K = ck.model.cfg.states_per_symbol
    (out / f"{args.name}.align").write_text(
        format_alignment(result.alignment, K, header=_prov_line(prov)), encoding="utf-8"
    )
    (out / f"{args.name}.rate.txt").write_text(
        format_rate_report(rate_report(result), extra=prov), encoding="utf-8"
    )
    _say(f"{result.n_frames} frames ({result.reason}) -> {out}")
    return EXIT_OK


# align / loglik ----------------------------------------------------------------

def _split_feasible(utts, K):
    ok, bad = check_feasibility(utts, K)
    for utt_id in bad:
        _say(f"skipping {utt_id}: fewer frames than states")
    return ok, bad


def cmd_align(args):
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    model = ck.model
    K = model.cfg.states_per_symbol
    utts, skipped = _split_feasible(_load_normalized(ck, args.manifest), K)
    prov = _provenance(args.checkpoint, ck)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    accs, f1s, n_gold = [], [], 0
    with no_grad():
        for u in utts:
            lat = build_lattice(model, model.encode(u.symbols), u.frames)
            ali, _ = viterbi(lat)
            (out / f"{u.id}.align").write_text(
                format_alignment(ali, K, header=_prov_line(prov)), encoding="utf-8"
            )
            if args.occupancy:
                save_melbin(occupancy_posterior(lat), out / f"{u.id}.gamma.melbin")
            if u.gold is not None:
                a, f = alignment_accuracy(ali, u.gold, K)
                accs.append(a)
                f1s.append(f)
                n_gold += 1
    report = dict(prov)
    report["aligned"] = len(utts)
    report["skipped"] = ",".join(skipped) if skipped else ""
    if n_gold:
        report["gold_items"] = n_gold
        report["frame_accuracy"] = repr(float(np.mean(accs)))
        report["boundary_f1"] = repr(float(np.mean(f1s)))
    else:
        report["gold_items"] = "0 (no gold alignments available)"
    text = "".join(f"{k}={v}\n" for k, v in report.items())
    (out / "report.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_loglik(args):
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    model = ck.model
    utts, skipped = _split_feasible(_load_normalized(ck, args.manifest), model.cfg.states_per_symbol)
    if not utts:
        raise InputError("no feasible utterances")
    if args.dropout:
        rng = np.random.default_rng(args.seed or 0)
        lls, fls = [], []
        with no_grad():
            for u in utts:
                ll, fl = batch_loglik(model, [(u.symbols, u.frames)], dropout_on=True, rng=rng)
                lls.append(ll.data[0])
                fls.append(fl[0])
        ll, fl = np.array(lls), np.array(fls)
    else:
        ll, fl = evaluate_loglik(model, utts)
    prov = _provenance(args.checkpoint, ck)
    lines = [f"# {_prov_line(prov)}", "id\tloglik\tframes\tloglik_per_frame"]
    for u, v, n in zip(utts, ll, fl):
        lines.append(f"{u.id}\t{float(v)!r}\t{n}\t{float(v / n)!r}")
    lines.append(f"# total_loglik={float(ll.sum())!r}")
    lines.append(f"# mean_loglik={float(ll.mean())!r}")
    lines.append(f"# loglik_per_frame={float(ll.sum() / fl.sum())!r}")
    if skipped:
        lines.append(f"# skipped={','.join(skipped)}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_inspect(args):
    ck = ckpt_io.load_checkpoint(args.checkpoint)
    prov = _provenance(args.checkpoint, ck)
    lines = [f"{k}={v}" for k, v in prov.items()]
    lines.append(f"update={ck.update}")
    lines.append(f"initial_tau={ck.model.initial_tau!r}")
    for k, v in ck.model.cfg.to_dict().items():
        lines.append(f"model.{k}={v}")
    for name, n in param_count(ck.model).items():
        lines.append(f"params.{name}={n}")
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_make_toy(args):
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    spec = ToySpec.random(
        vocab_size=args.vocab_size, acoustic_dim=args.dim, segments=args.segments,
        duration=(args.min_duration, args.max_duration), noise_scale=args.noise, seed=seed,
        states_per_symbol=args.states_per_symbol,
    )
    vocab = toy_vocabulary(args.vocab_size)
    utts = generate_toy_corpus(spec, args.count + args.valid_count)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    vocab.save(out / "vocab.txt")
    write_toy_corpus(utts[: args.count], out, vocab, "train.tsv")
    if args.valid_count:
        write_toy_corpus(utts[args.count:], out, vocab, "valid.tsv")
    config = RunConfig(
        vocab="vocab.txt", train_manifest="train.tsv",
        valid_manifest="valid.tsv" if args.valid_count else "", out_dir="run", seed=seed,
        states_per_symbol=args.states_per_symbol,
    )
    (out / "config.txt").write_text(config.to_text(), encoding="utf-8")
    _say(f"wrote {len(utts)} utterances and config.txt to {out}")
    return EXIT_OK


# entry point -------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="nhmm", description="Neural HMM sequence-to-sequence acoustic model.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train from a key=value config file")
    t.add_argument("--config", required=True, help="run config (key=value lines)")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--max-updates", type=int, help="override max_updates from the config")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("synth", help="generate frames for a symbol sequence")
    s.add_argument("--checkpoint", required=True)
    g = s.add_mutually_exclusive_group()
    g.add_argument("--text", help="whitespace-separated symbols")
    g.add_argument("--symbols-file", help="file holding whitespace-separated symbols")
    s.add_argument("--out-dir", required=True)
    s.add_argument("--name", default="synth", help="basename of output files")
    s.add_argument("--acoustic-mode", choices=("mean", "sampled"))
    s.add_argument("--duration-mode", choices=("quantile", "sampled"))
    s.add_argument("--q", type=float, help="duration quantile threshold in (0, 1)")
    s.add_argument("--state-q", help="per-state thresholds, e.g. 0=0.3,5=0.8")
    s.add_argument("--max-frames", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--dropout", choices=("on", "off"), help="pre-net dropout (default from config: on)")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("align", help="Viterbi-align a manifest")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--manifest", required=True)
    a.add_argument("--out-dir", required=True)
    a.add_argument("--occupancy", action="store_true",
                   help="also write state occupancy posteriors as <id>.gamma.melbin (T x N)")
    a.set_defaults(func=cmd_align)

    ll = sub.add_parser("loglik", help="exact log-likelihood of a manifest")
    ll.add_argument("--checkpoint", required=True)
    ll.add_argument("--manifest", required=True)
    ll.add_argument("--out", help="also write the report here")
    ll.add_argument("--dropout", action="store_true", help="keep pre-net dropout on (default off)")
    ll.add_argument("--seed", type=int)
    ll.set_defaults(func=cmd_loglik)

    i = sub.add_parser("inspect", help="print checkpoint metadata and parameter counts")
    i.add_argument("--checkpoint", required=True)
    i.set_defaults(func=cmd_inspect)

    m = sub.add_parser("make-toy", help="write a synthetic corpus and a starter config")
    m.add_argument("--out-dir", required=True)
    m.add_argument("--count", type=int, default=160)
    m.add_argument("--valid-count", type=int, default=40)
    m.add_argument("--vocab-size", type=int, default=8)
    m.add_argument("--dim", type=int, default=4)
    m.add_argument("--segments", type=int, default=1)
    m.add_argument("--min-duration", type=int, default=3)
    m.add_argument("--max-duration", type=int, default=8)
    m.add_argument("--noise", type=float, default=0.1)
    m.add_argument("--states-per-symbol", type=int, default=2, help="K written into config.txt")
    m.add_argument("--seed", type=int)
    m.set_defaults(func=cmd_make_toy)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, ContractError) as e:
        _say(f"nhmm {args.command}: error: {e}")
        return EXIT_USAGE
    except NumericalError as e:
        _say(f"nhmm {args.command}: numerical failure: {e}")
        return EXIT_NUMERIC
    except (InputError, FormatError, FileNotFoundError, IsADirectoryError) as e:
        _say(f"nhmm {args.command}: data error: {e}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

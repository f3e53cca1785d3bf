"""Command line entry point: ``ganstego <command> ...``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import codec, io, pipeline
from .codec import CodecError
from .config import ConfigError, derive_seed, load_config
from .engine.checkpoint import CheckpointError

log = logging.getLogger("ganstego")


class CommandError(Exception):
    pass


def _manifest(directory: Path, command: str, seed, **extra) -> None:
    data = {"command": command, "seed": seed}
    data.update(extra)
    (directory / "run.json").write_text(json.dumps(data, indent=2, sort_keys=True, default=str) + "\n")


def _read_text(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise CommandError(f"text file {p} not found")
    try:
        return p.read_bytes().decode("utf-8")
    except UnicodeDecodeError as exc:
        raise CommandError(f"{p} is not UTF-8: {exc}") from None


def _load_dict(path) -> codec.CodeDictionary:
    if not Path(path).is_file():
        raise CommandError(f"dictionary {path} not found")
    return codec.CodeDictionary.load(path)


def _load_ckpt(loader, path):
    if not Path(path).is_file():
        raise CommandError(f"checkpoint {path} not found")
    return loader(path)


def cmd_train(args) -> int:
    from .acgan.train import PROBE_LABELS, generate, sample_noise, train
    from . import plots

    cfg = load_config(args.config)
    cfg.require("images", "labels")
    dataset = io.load_mnist(cfg.images, cfg.labels)
    if cfg.limit:
        dataset = dataset.head(cfg.limit)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    log.info("training on %d images for %d steps, seed %d", len(dataset), cfg.training.steps, cfg.seed)

    lines = []

    def progress(row):
        lines.append(f"step {row.step}, d_loss {row.d_loss:g}, g_loss {row.g_loss:g}")
        if row.probe_accuracy is not None:
            log.info("%s, probe %d/64", lines[-1], round(row.probe_accuracy * 64))

    gen, disc, metrics = train(dataset, cfg.training, checkpoint_dir=cfg.checkpoints, on_step=progress)
    metrics.write_csv(out / "metrics.csv")
    (out / "train.log").write_text("".join(line + "\n" for line in lines))

    z = sample_noise(len(PROBE_LABELS), cfg.training.noise_dim,
                     np.random.default_rng(derive_seed(cfg.seed, "probe")))
    probe = pipeline.compose_tiles(generate(gen, PROBE_LABELS, z).data)
    io.write_composite(out / "probe.png", probe)
    report = out / "report"
    report.mkdir(exist_ok=True)
    plots.training_curves(metrics, report / "training.png")
    plots.composite_preview(probe, report / "probe_preview.png", title="probe, row r = digit r")
    counts = plots.pixel_histogram([probe], report / "probe_histogram.png")
    _manifest(out, "train", cfg.seed, config=cfg.as_dict(), dataset_size=len(dataset),
              checkpoints=str(cfg.checkpoints))
    final = metrics.probes()[-1][1] if metrics.probes() else None
    print(f"steps\t{len(metrics)}")
    print(f"final_probe_accuracy\t{'' if final is None else f'{final:.4f}'}")
    print(f"pixel_range\t{int(np.flatnonzero(counts)[0])}\t{int(np.flatnonzero(counts)[-1])}")
    return 0


def cmd_dict_build(args) -> int:
    lines = [ln.rstrip("\r") for ln in _read_text(args.tokens).split("\n")]
    tokens = [ln for ln in lines if ln]
    d = codec.build_dictionary(tokens, reserve_padding=not args.no_padding)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    d.save(out)
    print(f"entries\t{len(d)}")
    print(f"padding_code\t{codec.PAD_CODE if d.has_padding else ''}")
    return 0


def cmd_hide(args) -> int:
    from .acgan.train import load_generator

    text = _read_text(args.text)
    if not text:
        raise CommandError(f"{args.text} is empty")
    d = _load_dict(args.dict)
    message = codec.split_message(text, d, ecc=args.ecc)
    for frag in message.fragments:
        codec.encode_fragment(frag, d, ecc=args.ecc)
    gen = _load_ckpt(load_generator, args.gen)

    rng = np.random.default_rng(derive_seed(args.seed, "hide"))
    images = pipeline.hide(text, d, gen=gen, rng=rng, ecc=args.ecc)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for img in images:
        # content-addressed names: the order lives only in the in-band marker
        tmp = out / ".tmp.png"
        io.write_composite(tmp, img)
        name = hashlib.sha256(tmp.read_bytes()).hexdigest()[:16] + ".png"
        tmp.replace(out / name)
        names.append(name)
    if args.report:
        from . import plots

        report = out / "report"
        report.mkdir(exist_ok=True)
        plots.pixel_histogram(images, report / "histogram.png")
        for k, img in enumerate(images):
            plots.composite_preview(img, report / f"preview-{k:04d}.png", title=f"fragment {k}")
    _manifest(out, "hide", args.seed, ecc=args.ecc, images=len(images),
              tokens=len(message.tokens), dictionary=str(args.dict), generator=str(args.gen))
    print(f"images\t{len(images)}")
    print(f"tokens\t{len(message.tokens)}")
    for n in sorted(names):
        print(f"wrote\t{out / n}")
    return 0


def cmd_extract(args) -> int:
    from .acgan.train import load_discriminator

    src = Path(args.inp)
    if not src.is_dir():
        raise CommandError(f"input directory {src} not found")
    files = sorted(p for p in src.iterdir() if p.suffix.lower() == ".png" and p.is_file())
    if not files:
        raise CommandError(f"no PNG composites in {src}")
    d = _load_dict(args.dict)
    images = [io.read_composite(p) for p in files]
    disc = _load_ckpt(load_discriminator, args.disc)
    dtype = disc.params["conv0.kernel"].dtype.type
    classify = pipeline.discriminator_classifier(disc)
    reports = [pipeline.read_fragment(classify(pipeline.split_tiles(img, dtype=dtype)), d, ecc=args.ecc)
               for img in images]

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    rows = sorted(zip(files, reports), key=lambda fr: (fr[1].seq_no, fr[0].name))
    with open(str(out) + ".reports.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["file", "seq_no", "status", "substituted", "min_confidence", "text"])
        for p, r in rows:
            w.writerow([p.name, r.seq_no, r.status, " ".join(map(str, r.substituted)),
                        f"{float(np.min(r.confidences)):.6f}", r.text])
    text = pipeline.assemble(reports)
    out.write_bytes(text.encode("utf-8"))

    problems = [f"{p.name}: {r.status} ({r.error})" for p, r in rows if not r.decoded]
    seqs = sorted(r.seq_no for r in reports)
    if seqs != list(range(len(seqs))):
        problems.append(f"sequence numbers {seqs} are not 0..{len(seqs) - 1}")
    print(f"images\t{len(images)}")
    print(f"decoded\t{sum(r.decoded for r in reports)}")
    print(f"corrected\t{sum(r.status == 'corrected' for r in reports)}")
    for msg in problems:
        print(f"error: {msg}", file=sys.stderr)
    return 1 if problems else 0


def cmd_bench_capacity(args) -> int:
    text = _read_text(args.text)
    if not text:
        raise CommandError(f"{args.text} is empty")
    rows = []
    for path in args.dict:
        d = _load_dict(path)
        rep = codec.measure_capacity(text, d, ecc=args.ecc)
        avg_len = float(np.mean([len(t) for t in d.tokens()]))
        rows.append((Path(path).name, len(d), avg_len, rep))
    print("dictionary\tentries\tavg_token_length\tfragments\ttokens_per_image\tchars_per_image")
    for name, n, avg_len, rep in rows:
        print(f"{name}\t{n}\t{avg_len:.4g}\t{rep.fragments}\t{rep.tokens_per_image:.4g}\t{rep.chars_per_image:.4g}")
    if args.out:
        from . import plots

        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "capacity.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["dictionary", "entries", "avg_token_length", "fragments", "chars_per_image"])
            for name, n, avg_len, rep in rows:
                w.writerow([name, n, f"{avg_len:.6f}", rep.fragments, f"{rep.chars_per_image:.6f}"])
        plots.capacity_chart([(name, rep.chars_per_image) for name, _, _, rep in rows], out / "capacity.png")
    return 0


def cmd_channel_test(args) -> int:
    from .acgan.train import load_discriminator, load_generator
    from .channel import evaluate_reliability
    from . import plots

    cfg = load_config(args.config)
    cfg.require("dictionary", "text")
    d = _load_dict(cfg.dictionary)
    text = _read_text(cfg.text)
    if not text:
        raise CommandError(f"{cfg.text} is empty")
    codec.split_message(text, d, ecc=cfg.ecc)
    if cfg.oracle:
        kwargs = {"renderer": pipeline.stamp_renderer, "classifier": pipeline.stamp_classifier}
    else:
        cfg.require("generator", "discriminator")
        kwargs = {"gen": load_generator(cfg.generator), "disc": load_discriminator(cfg.discriminator)}
    stats = evaluate_reliability(text, d, cfg.channel, cfg.trials, ecc=cfg.ecc, **kwargs)

    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    stats.write_csv(out / "reliability.csv")
    (out / "summary.txt").write_text(stats.summary() + "\n")
    report = out / "report"
    report.mkdir(exist_ok=True)
    plots.reliability_chart(stats, report / "reliability.png")
    _manifest(out, "channel-test", cfg.seed, config=cfg.as_dict())
    print(stats.summary())
    return 0


def cmd_grad_check(args) -> int:
    from collections import defaultdict

    from .engine.gradcheck import TOLERANCE, run_suite

    results = run_suite(range(args.seeds))
    worst = defaultdict(float)
    failed = defaultdict(int)
    for r in results:
        worst[r.case] = max(worst[r.case], r.rel_error if not r.expect_zero else 0.0)
        failed[r.case] += not r.ok
    print("case\tworst_rel_error\tfailures")
    for case in worst:
        print(f"{case}\t{worst[case]:.3e}\t{failed[case]}")
    bad = sum(failed.values())
    print(f"{'FAIL' if bad else 'PASS'}\t{len(results)} checks over {args.seeds} seeds, tolerance {TOLERANCE:g}")
    return 1 if bad else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ganstego", description="Label-driven stego image synthesis.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train the ACGAN")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("dict-build", help="number a token list into a code dictionary")
    s.add_argument("--tokens", required=True, help="UTF-8 file, one token per line")
    s.add_argument("--out", required=True)
    s.add_argument("--no-padding", action="store_true", help="allow code 9999 to be assigned")
    s.set_defaults(func=cmd_dict_build)

    s = sub.add_parser("hide", help="write one composite per fragment of a message")
    s.add_argument("--text", required=True)
    s.add_argument("--dict", required=True)
    s.add_argument("--gen", required=True)
    s.add_argument("--ecc", action="store_true")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--report", action="store_true", help="also render previews and a histogram")
    s.set_defaults(func=cmd_hide)

    s = sub.add_parser("extract", help="recover a message from composites")
    s.add_argument("--dict", required=True)
    s.add_argument("--disc", required=True)
    s.add_argument("--ecc", action="store_true")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("bench-capacity", help="characters per image for each dictionary")
    s.add_argument("--dict", required=True, action="append")
    s.add_argument("--text", required=True)
    s.add_argument("--ecc", action="store_true")
    s.add_argument("--out", help="directory for capacity.csv and capacity.png")
    s.set_defaults(func=cmd_bench_capacity)

    s = sub.add_parser("channel-test", help="hide, scramble and extract repeatedly")
    s.add_argument("--config", required=True)
    s.set_defaults(func=cmd_channel_test)

    s = sub.add_parser("grad-check", help="finite-difference gradient suite")
    s.add_argument("--seeds", type=int, default=20)
    s.set_defaults(func=cmd_grad_check)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (CommandError, ConfigError, CodecError, CheckpointError, io.MnistError,
            io.ImageFormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

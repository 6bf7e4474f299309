"""``llast`` command line: synth-data, train, eval, translate, merge-lora."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import defaultdict
from pathlib import Path

import numpy as np

from . import autograd as ag
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, load_config, write_resolved
from .data import ST, ST_TEMPLATE, build_prompt, load_manifest, parse_pair, synth_corpus, vocab_texts
from .errors import ConfigError, LlastError, NumericError, OutputExistsError
from .frontend import load_audio
from .inference import DecodeConfig, decode_features, hypothesis_text, translate
from .lora import L_LORA, S_LORA, adapters, merge_all, prepare_adaptation, strip_adapters
from .metrics import corpus_bleu, write_report
from .model import SpeechTranslator
from .trainer import FeatureStore, train
from .vocab import Vocabulary

log = logging.getLogger("llast")

LORA_FLAGS = {"dual_lora": "dual", "s_lora": "s", "l_lora": "l", "no_lora": "none"}


def _setup_logging():
    level = os.environ.get("LLAST_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def cmd_synth_data(args):
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise OutputExistsError(f"{out} is not empty; pass --force to overwrite")
    langs = [p.strip() for p in args.langs.split(",") if p.strip()]
    for p in langs:
        parse_pair(p)
    records = synth_corpus(out, args.seed, args.n, langs)
    print(f"wrote {len(records)} items to {out / 'manifest.tsv'}")
    return 0


def _model_config(cfg: RunConfig):
    mc = cfg.model_config()
    mc.check()
    return mc


def cmd_train(args):
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.asr_ratio is not None:
        cfg.train.asr_ratio = args.asr_ratio
    if args.max_steps is not None:
        cfg.train.max_steps = args.max_steps
    flagged = [mode for flag, mode in LORA_FLAGS.items() if getattr(args, flag)]
    if flagged:
        cfg.lora.mode = flagged[0]
    cfg.train.__post_init__()
    records = load_manifest(args.data)
    if not records:
        raise ConfigError(f"{args.data} holds no records")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.init:
        model, _, _ = load_checkpoint(args.init)
        if adapters(model):
            raise ConfigError(f"{args.init} already carries adapters; merge them first")
        lc = cfg.lora
        n = prepare_adaptation(
            model, lc.mode,
            ranks={S_LORA: lc.s_rank, L_LORA: lc.l_rank},
            alphas={S_LORA: lc.s_alpha or None, L_LORA: lc.l_alpha or None},
            targets=lc.target_list, seed=cfg.train.seed,
        )
        stage = f"adapt:{lc.mode}"
        log.info("frozen base from %s, %d adapters (%s)", args.init, n, lc.mode)
    else:
        if flagged:
            raise ConfigError("LoRA flags need a frozen base; pass --init CKPT")
        texts = vocab_texts(records)
        for extra in args.vocab_from or ():
            texts += vocab_texts(load_manifest(extra))
        model = SpeechTranslator(_model_config(cfg), Vocabulary.build(texts), seed=cfg.train.seed)
        stage = "full"
    cfg.lm = model.cfg.lm
    write_resolved(cfg, out)
    meta = {"seed": cfg.train.seed, "stage": stage, "asr_ratio": cfg.train.asr_ratio}
    state = train(model, records, cfg.optim, cfg.train, out_dir=out, meta=meta,
                  language_weights=cfg.data.weights())
    print(f"trained {state.step} steps, final loss {state.trace[-1][1]:.6f}; checkpoint {out / 'final.llst'}")
    return 0


def cmd_eval(args):
    model, _, _ = load_checkpoint(args.ckpt)
    records = sorted((r for r in load_manifest(args.data) if r.task == ST), key=lambda r: r.id)
    if not records:
        raise ConfigError(f"{args.data} holds no records")
    dcfg = DecodeConfig(beam_size=args.beam, max_new_tokens=args.max_new_tokens)
    features = FeatureStore(model.cfg.frontend)
    hyps = []
    for r in records:
        prompt, _ = build_prompt(r, "infer", args.include_transcript)
        best = decode_features(model, features(r.audio_path), prompt, dcfg)[0]
        hyps.append((r, hypothesis_text(model, best)))
    by_pair = defaultdict(lambda: ([], []))
    for r, h in hyps:
        by_pair[r.pair][0].append(h)
        by_pair[r.pair][1].append(r.tgt_text)
    scores = {pair: corpus_bleu(h, ref) for pair, (h, ref) in by_pair.items()}
    write_report(args.report, scores)
    hyp_path = Path(args.hyps) if args.hyps else Path(str(args.report) + ".hyps.tsv")
    with open(hyp_path, "w", encoding="utf-8") as fh:
        fh.write("id\tpair\thyp\tref\n")
        for r, h in hyps:
            fh.write(f"{r.id}\t{r.pair}\t{h}\t{r.tgt_text}\n")
    for pair in sorted(scores):
        print(f"{pair}\t{scores[pair]}")
    return 0


def cmd_translate(args):
    model, _, _ = load_checkpoint(args.ckpt)
    wave = load_audio(args.audio)
    print(translate(model, wave, args.src, args.tgt, DecodeConfig(beam_size=args.beam, max_new_tokens=args.max_new_tokens)))
    return 0


def probe_logits(model, n_probes=5, seed=0):
    """Logits on fixed random feature probes, for merge-equivalence checks."""
    rng = np.random.default_rng(seed)
    prompt = ST_TEMPLATE.format(src="French", tgt="English")
    out = []
    with ag.no_grad():
        for _ in range(n_probes):
            feats = rng.normal(size=(int(rng.integers(20, 60)), model.cfg.frontend.n_mels)).astype(np.float32)
            p = model.prompts([(feats, prompt, None)])
            out.append(model.lm(p).data[0].astype(np.float64))
    return out


def cmd_merge_lora(args):
    model, _, meta = load_checkpoint(args.ckpt)
    if not adapters(model):
        print(f"{args.ckpt} has no LoRA adapters; nothing to merge")
        return 0
    before = probe_logits(model)
    n = merge_all(model)
    after = probe_logits(model)
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(before, after))
    if worst >= 1e-5:
        raise NumericError(f"merged logits drift by {worst:.3g} (limit 1e-5); not writing {args.out}")
    strip_adapters(model)
    for _, p in model.named_parameters():
        p.trainable = True
    save_checkpoint(args.out, model, meta={**meta, "merged_from": Path(args.ckpt).name})
    print(f"merged {n} adapters (max logit change {worst:.2e}); wrote {args.out}")
    return 0


def build_parser():
    ap = argparse.ArgumentParser(prog="llast", description="Desk-scale speech translation with dual LoRA.")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a tone-coded synthetic corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--langs", default="fr-en")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_synth_data)

    t = sub.add_parser("train", help="train from scratch or adapt a frozen base")
    t.add_argument("--config")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    g = t.add_mutually_exclusive_group()
    for flag in LORA_FLAGS:
        g.add_argument("--" + flag.replace("_", "-"), dest=flag, action="store_true")
    t.add_argument("--asr-ratio", type=float)
    t.add_argument("--init", help="frozen base checkpoint for adaptation")
    t.add_argument("--seed", type=int)
    t.add_argument("--max-steps", type=int)
    t.add_argument("--vocab-from", action="append", help="extra manifest whose texts join the vocabulary")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="decode a manifest and write a BLEU report")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--hyps")
    e.add_argument("--beam", type=int, default=5)
    e.add_argument("--max-new-tokens", type=int, default=32)
    e.add_argument("--include-transcript", action="store_true")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("translate", help="translate one audio file")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--audio", required=True)
    r.add_argument("--src", required=True)
    r.add_argument("--tgt", required=True)
    r.add_argument("--beam", type=int, default=5)
    r.add_argument("--max-new-tokens", type=int, default=32)
    r.set_defaults(func=cmd_translate)

    m = sub.add_parser("merge-lora", help="fold adapters into base weights")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_merge_lora)
    return ap


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except LlastError as e:
        print(f"llast: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"llast: error: {e}", file=sys.stderr)
        return 3
    except FloatingPointError as e:
        print(f"llast: error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

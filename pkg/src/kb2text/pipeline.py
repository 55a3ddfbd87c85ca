"""End-to-end experiment driver: corpus, tokenizer, training, decoding, reports.

Every stage is a pure function of the RunConfig and the files already in the
run directory, with stage-specific seeds derived from the config seed, so a
rerun reproduces every artifact byte for byte.  The CLI is a thin wrapper
over these functions; tests call them directly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import statistics
from pathlib import Path

from . import bpe as bpe_mod
from .bpe import BPEModel, load_bpe, save_bpe, train_bpe
from .config import RunConfig, config_hash, derive_seed, save_config
from .decoding import beam_search, rebalanced_beam_search, strip_eos, write_decodes
from .errors import ConfigError, MissingInputError
from .estimator import SupportEstimator, train_se, write_support_dump
from .generator import GenModel, train_gen
from .harvest import (
    Record,
    entity_recall,
    harvest_sentence,
    linearize,
    load_store,
    read_corpus,
    write_corpus,
)
from .metrics import EvalReport, bleu, overgen_ngrams, rouge_l
from .nncore import ParamSet, TrainConfig, load_checkpoint, save_checkpoint
from .synth import SynthConfig, synth_corpus

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


def _corpus_dir(run_dir) -> Path:
    return Path(run_dir) / "corpus"


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------------------
# Corpus


def build_corpus(cfg: RunConfig, run_dir) -> dict:
    """Write train/dev/test corpus files plus a stats summary; returns the stats."""
    run_dir = Path(run_dir)
    need = cfg.split.train + cfg.split.dev + cfg.split.test
    if cfg.corpus.mode == "synthetic":
        if cfg.corpus.n_records < need:
            raise ConfigError(
                f"n_records={cfg.corpus.n_records} smaller than split total {need}"
            )
        synth_cfg = SynthConfig(
            n_records=cfg.corpus.n_records,
            n_entities=cfg.corpus.n_entities,
            n_relations=cfg.corpus.n_relations,
            triples_min=cfg.corpus.triples_min,
            triples_max=cfg.corpus.triples_max,
            noise_rate=cfg.corpus.noise_rate,
            noise_pool_size=cfg.corpus.noise_pool_size,
        )
        records = synth_corpus(synth_cfg, derive_seed(cfg.seed, "corpus"))
    elif cfg.corpus.mode == "store":
        store = load_store(
            _require(Path(cfg.corpus.store_path), "triple store file"),
            Path(cfg.corpus.alias_path) if cfg.corpus.alias_path else None,
        )
        texts = _require(Path(cfg.corpus.texts_path), "texts file")
        records = []
        with open(texts, encoding="utf-8") as fh:
            for line in fh:
                tokens = line.split()
                if not tokens:
                    continue
                rec = harvest_sentence(tokens, store, cfg.corpus.kappa)
                if rec is not None and rec.entity_recall >= cfg.corpus.min_recall:
                    records.append(rec)
        if len(records) < need:
            raise ConfigError(
                f"harvested {len(records)} records, split needs {need}"
            )
    else:
        raise ConfigError(f"unknown corpus mode {cfg.corpus.mode!r}")

    out = _corpus_dir(run_dir)
    out.mkdir(parents=True, exist_ok=True)
    bounds = {
        "train": (0, cfg.split.train),
        "dev": (cfg.split.train, cfg.split.train + cfg.split.dev),
        "test": (cfg.split.train + cfg.split.dev, need),
    }
    for name, (lo, hi) in bounds.items():
        write_corpus(out / f"{name}.jsonl", records[lo:hi])

    used = records[:need]
    lengths = [len(r.text) for r in used]
    kb_counts = [len(r.triples) for r in used]
    stats = {
        "config_hash": config_hash(cfg),
        "size": len(used),
        "splits": {name: hi - lo for name, (lo, hi) in bounds.items()},
        "relation_types": len({t.relation for r in used for t in r.triples}),
        "entity_types": len(
            {t.head for r in used for t in r.triples}
            | {t.tail for r in used for t in r.triples}
        ),
        "text_length": _dist_stats(lengths),
        "triples_per_record": _dist_stats(kb_counts),
        "vocabulary": len({w for r in used for w in r.text}),
        "entity_recall_mean": sum(r.entity_recall for r in used) / len(used),
    }
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    save_config(cfg, run_dir / "config.toml")
    return stats


def _dist_stats(values: list[int]) -> dict:
    return {
        "mean": sum(values) / len(values),
        "median": float(statistics.median(values)),
        "min": min(values),
        "max": max(values),
    }


def load_split(run_dir, name: str) -> list[Record]:
    return read_corpus(_require(_corpus_dir(run_dir) / f"{name}.jsonl", f"{name} split"))


# ---------------------------------------------------------------------------
# Tokenizer


def build_tokenizer(cfg: RunConfig, run_dir) -> BPEModel:
    """Train BPE on the train split's texts and linearized triples."""
    train = load_split(run_dir, "train")
    sentences = [r.text for r in train] + [linearize(r.triples) for r in train]
    model = train_bpe(sentences, cfg.tokenizer.num_merges)
    tok_dir = Path(run_dir) / "tokenizer"
    tok_dir.mkdir(parents=True, exist_ok=True)
    save_bpe(model, tok_dir / "merges.txt", tok_dir / "vocab.txt")
    return model


def ensure_tokenizer(cfg: RunConfig, run_dir) -> BPEModel:
    tok_dir = Path(run_dir) / "tokenizer"
    if (tok_dir / "merges.txt").exists() and (tok_dir / "vocab.txt").exists():
        return load_bpe(tok_dir / "merges.txt", tok_dir / "vocab.txt")
    return build_tokenizer(cfg, run_dir)


def tokenizer_hash(run_dir) -> str:
    tok_dir = Path(run_dir) / "tokenizer"
    blob = (tok_dir / "merges.txt").read_bytes() + (tok_dir / "vocab.txt").read_bytes()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Training


def _write_loss_csv(path, history: list[float]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n")
        for i, loss in enumerate(history, start=1):
            fh.write(f"{i},{loss:.6f}\n")


def train_estimator_cmd(cfg: RunConfig, run_dir) -> Path:
    run_dir = Path(run_dir)
    train = load_split(run_dir, "train")
    bpe = ensure_tokenizer(cfg, run_dir)
    model = SupportEstimator.create(
        bpe.vocab_size, cfg.estimator.dim, cfg.estimator.hidden,
        seed=derive_seed(cfg.seed, "se-init"),
    )
    tc = TrainConfig(
        learning_rate=cfg.estimator.learning_rate,
        batch_size=cfg.estimator.batch_size,
        epochs=cfg.estimator.epochs,
        seed=derive_seed(cfg.seed, "se-train"),
        clip_norm=cfg.estimator.clip_norm,
    )
    train_se(train, model, tc, bpe,
             weight_word=cfg.estimator.weight_word,
             weight_conc=cfg.estimator.weight_conc,
             lw_axis=cfg.estimator.lw_axis)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    path = ckpt_dir / "se.ckpt"
    save_checkpoint(path, model.params, model.config(),
                    meta={"config_hash": config_hash(cfg),
                          "tokenizer_hash": tokenizer_hash(run_dir)})
    logs = run_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    _write_loss_csv(logs / "se_loss.csv", model.loss_history)
    write_support_dump(logs / "se_support_train.txt", model, train, bpe)
    return path


def load_estimator(run_dir) -> SupportEstimator:
    path = _require(Path(run_dir) / "checkpoints" / "se.ckpt", "estimator checkpoint")
    params, conf, _ = load_checkpoint(path)
    return SupportEstimator(params, conf["vocab_size"], conf["dim"], conf["hidden"])


def train_generator_cmd(cfg: RunConfig, run_dir, adaptor: str | None = None) -> Path:
    run_dir = Path(run_dir)
    adaptor = adaptor or cfg.generator.adaptor
    train = load_split(run_dir, "train")
    bpe = ensure_tokenizer(cfg, run_dir)
    se_model = load_estimator(run_dir) if adaptor in ("hard", "soft") else None
    model = GenModel.create(
        bpe.vocab_size, cfg.generator.dim, cfg.generator.heads,
        cfg.generator.enc_layers, cfg.generator.dec_layers, cfg.generator.ffn_dim,
        seed=derive_seed(cfg.seed, "gen-init"),
    )
    tc = TrainConfig(
        learning_rate=cfg.generator.learning_rate,
        batch_size=cfg.generator.batch_size,
        epochs=cfg.generator.epochs,
        seed=derive_seed(cfg.seed, "gen-train"),
        clip_norm=cfg.generator.clip_norm,
    )
    train_gen(train, model, tc, bpe, adaptor=adaptor, se_model=se_model)
    ckpt_dir = run_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    path = ckpt_dir / f"gen-{adaptor}.ckpt"
    save_checkpoint(path, model.params, model.config(),
                    meta={"adaptor": adaptor,
                          "config_hash": config_hash(cfg),
                          "tokenizer_hash": tokenizer_hash(run_dir)})
    logs = run_dir / "logs"
    logs.mkdir(parents=True, exist_ok=True)
    _write_loss_csv(logs / f"gen-{adaptor}_loss.csv", model.loss_history)
    return path


def load_generator(run_dir, adaptor: str) -> GenModel:
    path = _require(
        Path(run_dir) / "checkpoints" / f"gen-{adaptor}.ckpt",
        f"generator checkpoint ({adaptor})",
    )
    params, conf, _ = load_checkpoint(path)
    return GenModel(params, conf["vocab_size"], conf["dim"], conf["heads"],
                    conf["enc_layers"], conf["dec_layers"], conf["ffn_dim"])


# ---------------------------------------------------------------------------
# Decoding and evaluation


def decode_cmd(
    cfg: RunConfig,
    run_dir,
    adaptor: str | None = None,
    rbs: bool | None = None,
    split: str = "test",
) -> Path:
    run_dir = Path(run_dir)
    adaptor = adaptor or cfg.generator.adaptor
    rbs = cfg.decode.rbs if rbs is None else rbs
    records = load_split(run_dir, split)
    bpe = ensure_tokenizer(cfg, run_dir)
    model = load_generator(run_dir, adaptor)
    se_model = load_estimator(run_dir) if rbs else None
    rows = []
    for rec_id, rec in enumerate(records):
        k_ids = bpe.encode(" ".join(linearize(rec.triples)))
        if rbs:
            hyps = rebalanced_beam_search(
                model, k_ids, se_model, cfg.decode.beam, cfg.decode.max_len,
                alpha=cfg.decode.alpha,
            )
        else:
            hyps = beam_search(model, k_ids, cfg.decode.beam, cfg.decode.max_len)
        best = hyps[0]
        text = bpe.decode(strip_eos(best.tokens, model.eos_id))
        rows.append((rec_id, text, best.normalized_score))
    dec_dir = run_dir / "decodes"
    dec_dir.mkdir(parents=True, exist_ok=True)
    path = dec_dir / f"{split}-{adaptor}-{'rbs' if rbs else 'beam'}.tsv"
    write_decodes(path, rows)
    return path


def read_decodes(path) -> list[list[str]]:
    hyps = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            hyps.append(parts[1].split() if len(parts) > 1 else [])
    return hyps


def references_for(records: list[Record]) -> list[list[str]]:
    """Gold references: synthetic noise tokens are stripped via the sidecar mask."""
    refs = []
    for r in records:
        if r.noise_mask is not None:
            refs.append([w for w, m in zip(r.text, r.noise_mask) if not m])
        else:
            refs.append(list(r.text))
    return refs


def _report_for(hyps: list[list[str]], records: list[Record], cfg: RunConfig) -> EvalReport:
    refs = references_for(records)
    triples = [r.triples for r in records]
    recalls = [entity_recall(t, h) if h else 0.0 for t, h in zip(triples, hyps)]
    return EvalReport(
        bleu=bleu(hyps, refs),
        rouge_l=rouge_l(hyps, refs),
        entity_recall_mean=sum(recalls) / len(recalls),
        overgen_counts=overgen_ngrams(hyps, triples),
        extra={
            "self_test_bleu": bleu(refs, refs),
            "config_hash": config_hash(cfg),
            "n_records": len(records),
        },
    )


def evaluate_cmd(cfg: RunConfig, run_dir, adaptor: str | None = None) -> dict[str, Path]:
    """Decode the test split with and without rebalancing (as configured) and report."""
    run_dir = Path(run_dir)
    adaptor = adaptor or cfg.generator.adaptor
    records = load_split(run_dir, "test")
    variants = [False, True] if cfg.decode.rbs else [False]
    rep_dir = run_dir / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    out: dict[str, Path] = {}
    for rbs in variants:
        decode_path = decode_cmd(cfg, run_dir, adaptor=adaptor, rbs=rbs)
        hyps = read_decodes(decode_path)
        report = _report_for(hyps, records, cfg)
        report.extra["variant"] = f"{adaptor}+{'rbs' if rbs else 'beam'}"
        name = f"eval-{adaptor}-{'rbs' if rbs else 'beam'}"
        with open(rep_dir / f"{name}.json", "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
        with open(rep_dir / f"{name}.txt", "w", encoding="utf-8") as fh:
            fh.write(report.render_table() + "\n")
        out[report.extra["variant"]] = rep_dir / f"{name}.json"
    return out


def audit_overgen_cmd(cfg: RunConfig, run_dir, decode_paths: list | None = None) -> Path:
    """Tabulate over-generated n-gram counts for each decode file of the test split."""
    run_dir = Path(run_dir)
    records = load_split(run_dir, "test")
    triples = [r.triples for r in records]
    if decode_paths is None:
        decode_paths = sorted((run_dir / "decodes").glob("test-*.tsv"))
    if not decode_paths:
        raise MissingInputError("no decode files to audit")
    table = {}
    for path in decode_paths:
        path = Path(path)
        hyps = read_decodes(_require(path, "decode file"))
        if len(hyps) != len(records):
            raise ConfigError(f"{path.name}: {len(hyps)} rows for {len(records)} records")
        counts = overgen_ngrams(hyps, triples)
        table[path.stem] = {str(n): c for n, c in sorted(counts.items())}
    rep_dir = run_dir / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    out_path = rep_dir / "overgen.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"config_hash": config_hash(cfg), "counts": table}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")
    return out_path


# ---------------------------------------------------------------------------
# Dataset-size sweep


def sweep_cmd(cfg: RunConfig, run_dir, sizes: tuple[int, ...] = (500, 1000, 2000)) -> Path:
    """Retrain baseline and guided pipelines on train-set prefixes; tabulate BLEU/ROUGE.

    "baseline" is adaptor-free training decoded with plain beam search;
    "guided" is soft-adaptor training decoded with rebalancing.  Epoch counts
    are scaled inversely with the prefix size so every row gets the same
    optimization budget and only the amount of data varies.
    """
    run_dir = Path(run_dir)
    parent_train = load_split(run_dir, "train")
    rows = []
    for size in sizes:
        if size > len(parent_train):
            raise ConfigError(f"sweep size {size} exceeds train split {len(parent_train)}")
        sub_dir = run_dir / "sweep" / str(size)
        sub_cfg = RunConfig.from_dict(cfg.to_dict())
        sub_cfg.split.train = size
        budget = cfg.split.train / size
        sub_cfg.estimator.epochs = max(1, round(cfg.estimator.epochs * budget))
        sub_cfg.generator.epochs = max(1, round(cfg.generator.epochs * budget))
        _write_sub_corpus(run_dir, sub_dir, size)
        save_config(sub_cfg, sub_dir / "config.toml")
        build_tokenizer(sub_cfg, sub_dir)
        train_generator_cmd(sub_cfg, sub_dir, adaptor="none")
        train_estimator_cmd(sub_cfg, sub_dir)
        train_generator_cmd(sub_cfg, sub_dir, adaptor="soft")
        records = load_split(sub_dir, "test")
        base_hyps = read_decodes(decode_cmd(sub_cfg, sub_dir, adaptor="none", rbs=False))
        guided_hyps = read_decodes(decode_cmd(sub_cfg, sub_dir, adaptor="soft", rbs=True))
        refs = references_for(records)
        rows.append({
            "size": size,
            "baseline": {"bleu": bleu(base_hyps, refs), "rouge_l": rouge_l(base_hyps, refs)},
            "guided": {"bleu": bleu(guided_hyps, refs), "rouge_l": rouge_l(guided_hyps, refs)},
        })
    rep_dir = run_dir / "reports"
    rep_dir.mkdir(parents=True, exist_ok=True)
    out_path = rep_dir / "sweep.json"
    with open(out_path, "w", encoding="utf-8") as fh:
        json.dump({"config_hash": config_hash(cfg), "rows": rows}, fh,
                  sort_keys=True, indent=2)
        fh.write("\n")
    with open(rep_dir / "sweep.txt", "w", encoding="utf-8") as fh:
        fh.write(f"{'size':>8} {'base BLEU':>10} {'base ROUGE':>11} "
                 f"{'guided BLEU':>12} {'guided ROUGE':>13}\n")
        for row in rows:
            fh.write(f"{row['size']:>8} {row['baseline']['bleu']:>10.4f} "
                     f"{row['baseline']['rouge_l']:>11.4f} "
                     f"{row['guided']['bleu']:>12.4f} "
                     f"{row['guided']['rouge_l']:>13.4f}\n")
    return out_path


def _write_sub_corpus(parent_dir, sub_dir: Path, train_size: int) -> None:
    corpus = Path(sub_dir) / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    train = load_split(parent_dir, "train")
    write_corpus(corpus / "train.jsonl", train[:train_size])
    for name in ("dev", "test"):
        write_corpus(corpus / f"{name}.jsonl", load_split(parent_dir, name))

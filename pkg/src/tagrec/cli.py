"""Command-line pipeline: ingest -> features -> train-encoder -> embed ->
train-mf -> evaluate, plus single-user recommendation.

Every stage reads its inputs from, and writes its outputs to, the output
directory (``paths.out`` in the config, or ``--out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .corpus import (
    InteractionMatrix,
    RawDocument,
    SplitConfig,
    WordVocabulary,
    build_tag_vocabulary,
    encode_documents,
    parse_interactions,
    read_raw_documents,
    read_raw_tags,
    split_leave_p_in,
    write_interactions,
    write_raw_documents,
    write_tag_vocabulary,
)
from .encoder import EncoderConfig, export_embeddings, train_encoder
from .encoder.training import load_encoder, save_encoder
from .errors import ConfigError, DataError, TagrecError
from .evaluation import evaluate, paired_ttest, rank_candidates
from .factorization import FactorizationModel, TrainConfig, identity_user_features, train
from .features import (
    build_identity_features,
    build_tag_features,
    build_tfidf_features,
    read_embeddings,
    read_features,
    write_embeddings,
    write_features,
)
from .plotting import plot_recall_curves, plot_training_log

logger = logging.getLogger("tagrec")

LOSS_LABELS = {"bpr": "BPR", "warp": "WARP"}
FEATURE_LABELS = {"identity": "", "tags": " + Tags", "tfidf": " + TFIDF", "han": " + HAN"}


# -- canonical dataset --------------------------------------------------------


def _require(path: Path, what: str, hint: str = "") -> Path:
    if not path.exists():
        raise ConfigError(f"{what} not found: {path}" + (f" ({hint})" if hint else ""))
    return path


def _load_stats(out: Path) -> dict:
    stats_path = _require(out / "stats.json", "dataset summary", "run `tagrec ingest` first")
    return json.loads(stats_path.read_text(encoding="utf-8"))


def _load_interactions(out: Path) -> InteractionMatrix:
    stats = _load_stats(out)
    path = _require(out / "interactions.tsv", "canonical interactions", "run `tagrec ingest` first")
    return parse_interactions(path, "pairs", n_users=stats["users"], n_items=stats["items"])


def _load_raw_documents(out: Path) -> tuple[list[RawDocument], list[str]]:
    raw_tags = read_raw_tags(_require(out / "tags.txt", "tag list", "run `tagrec ingest` first"))
    docs = read_raw_documents(_require(out / "documents.jsonl", "canonical documents"), n_raw_tags=len(raw_tags))
    return docs, raw_tags


def _format_stats(stats: dict) -> str:
    return (
        f"{stats['users']} users, {stats['items']} items, {stats['pairs']} pairs, "
        f"density {100 * stats['density']:.2f}%"
    )


def _write_log(path: Path, losses) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch\tloss\n")
        for epoch, loss in enumerate(losses, start=1):
            fh.write(f"{epoch}\t{loss!r}\n")


# -- commands -----------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    p = cfg.paths
    interactions_path = _require(cfg.resolve(p.interactions), "interaction file")
    documents_path = _require(cfg.resolve(p.documents), "document file")
    item_tags_path = _require(cfg.resolve(p.item_tags), "item-tag file")
    tags_path = _require(cfg.resolve(p.tags), "tags file")

    raw_tags = read_raw_tags(tags_path)
    docs = read_raw_documents(documents_path, item_tags_path, n_raw_tags=len(raw_tags))
    m = parse_interactions(interactions_path, p.interactions_format)
    n_items = max(m.n_items, max((d.item_id for d in docs), default=-1) + 1)
    m = InteractionMatrix.from_rows(m.rows, m.n_users, n_items)

    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(m, out / "interactions.tsv")
    write_raw_documents(docs, out / "documents.jsonl")
    (out / "tags.txt").write_text("".join(t + "\n" for t in raw_tags), encoding="utf-8")
    stats = {**m.stats(), "tags": len(raw_tags), "documents": len(docs)}
    (out / "stats.json").write_text(json.dumps(stats, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    print(_format_stats(stats))
    return 0


def _corpus_documents(cfg: PipelineConfig, truncate: bool):
    out = cfg.out_dir
    raw, raw_tags = _load_raw_documents(out)
    vocab = WordVocabulary.build((r.sentences for r in raw), cfg.corpus.vocab_size)
    s_max, w_max = (cfg.corpus.s_max, cfg.corpus.w_max) if truncate else (None, None)
    docs = encode_documents(raw, vocab, s_max, w_max)
    try:
        tag_vocab, docs = build_tag_vocabulary(docs, raw_tags, cfg.corpus.n_tags)
    except DataError as exc:
        raise ConfigError(f"corpus.n_tags={cfg.corpus.n_tags}: {exc}") from None
    return docs, vocab, tag_vocab


def cmd_features(cfg: PipelineConfig, args) -> int:
    out = cfg.out_dir
    n_items = _load_stats(out)["items"]
    docs, vocab, tag_vocab = _corpus_documents(cfg, truncate=False)
    write_tag_vocabulary(tag_vocab, out / "tag_vocabulary.tsv")
    tags = build_tag_features(docs, tag_vocab, include_identity=True, n_items=n_items)
    tfidf = build_tfidf_features(docs, cfg.corpus.vocab_size, include_identity=True, n_items=n_items)
    write_features(tags, out / "features_tags.tsv")
    write_features(tfidf, out / "features_tfidf.tsv")
    print(f"tags: {tags.n_features} features; tfidf: {tfidf.n_features} features; words: {len(vocab) - 2}")
    return 0


def cmd_train_encoder(cfg: PipelineConfig, args) -> int:
    out = cfg.out_dir
    docs, vocab, tag_vocab = _corpus_documents(cfg, truncate=True)
    vocab_file = out / "tag_vocabulary.tsv"
    if vocab_file.exists():
        on_disk = [line.split("\t")[2] for line in vocab_file.read_text(encoding="utf-8").splitlines()]
        if on_disk != list(tag_vocab.tags):
            raise ConfigError(
                f"{vocab_file} holds {len(on_disk)} tags that differ from corpus.n_tags={cfg.corpus.n_tags}; "
                "re-run `tagrec features`"
            )
    e = cfg.encoder
    enc_cfg = EncoderConfig(
        s_max=cfg.corpus.s_max, w_max=cfg.corpus.w_max, embed_dim=e.embed_dim, hidden=e.hidden,
        attn_dim=e.attn_dim, n_tags=len(tag_vocab), learning_rate=e.learning_rate,
        batch_size=e.batch_size, epochs=e.epochs, seed=e.seed,
    )
    params, log = train_encoder(docs, enc_cfg, len(vocab), progress=True)
    model_out = Path(args.model_out) if args.model_out else out / "encoder.ckpt"
    save_encoder(model_out, params, vocab.words, tag_vocab.tags, log)
    _write_log(out / "encoder_log.tsv", log)
    if log:
        plot_training_log(log, out / "encoder_loss.png", "tag prediction", "mean BCE")
    print(f"encoder: {len(log)} epochs, final BCE {log[-1]:.6f}" if log else "encoder: initialisation saved")
    return 0


def cmd_embed(cfg: PipelineConfig, args) -> int:
    out = cfg.out_dir
    ckpt = Path(args.encoder) if args.encoder else out / "encoder.ckpt"
    params, words, tags, _ = load_encoder(_require(ckpt, "encoder checkpoint", "run `tagrec train-encoder` first"))
    if params.config.n_tags != cfg.corpus.n_tags:
        raise ConfigError(f"encoder predicts {params.config.n_tags} tags but corpus.n_tags={cfg.corpus.n_tags}")
    n_items = _load_stats(out)["items"]
    raw, _ = _load_raw_documents(out)
    docs = encode_documents(raw, WordVocabulary.from_words(words), params.config.s_max, params.config.w_max)
    emb = export_embeddings(docs, params, n_items=n_items)
    write_embeddings(emb, out / "embeddings.txt")
    print(f"embeddings: {emb.n_items} items x {emb.dim}")
    return 0


def _item_channel(cfg: PipelineConfig, args, n_items: int):
    out = cfg.out_dir
    kind = cfg.mf.features
    if kind == "identity":
        return build_identity_features(n_items).matrix, None
    if kind in ("tags", "tfidf"):
        path = _require(out / f"features_{kind}.tsv", f"{kind} features", "run `tagrec features` first")
        feats = read_features(path)
        if feats.n_items != n_items:
            raise ConfigError(f"{path} covers {feats.n_items} items, dataset has {n_items}")
        return feats.matrix, None
    path = Path(args.embeddings) if args.embeddings else out / "embeddings.txt"
    _require(path, "dense embeddings", "metadata features need `tagrec embed` output")
    emb = read_embeddings(path)
    if emb.n_items != n_items:
        raise ConfigError(f"{path} covers {emb.n_items} items, dataset has {n_items}")
    return build_identity_features(n_items).matrix, emb.vectors


def cmd_train_mf(cfg: PipelineConfig, args) -> int:
    out = cfg.out_dir
    full = _load_interactions(out)
    m = split_leave_p_in(full, SplitConfig(cfg.split.p, cfg.split.seed))
    item_features, dense = _item_channel(cfg, args, m.n_items)
    mf = cfg.mf
    model = FactorizationModel(
        identity_user_features(m.n_users), item_features, dense, d=mf.d,
        metadata=mf.metadata if dense is not None else "none", seed=mf.seed,
    )
    tcfg = TrainConfig(mf.loss, mf.epochs, mf.learning_rate, mf.max_warp_trials, mf.seed, mf.l2)
    log = train(model, m, tcfg)
    name = LOSS_LABELS[mf.loss] + FEATURE_LABELS[mf.features]
    stem = f"mf_{mf.loss}_{mf.features}" + (f"_split{cfg.split.seed}" if args.split_seed is not None else "")
    model_out = Path(args.model_out) if args.model_out else out / f"{stem}.ckpt"
    meta = {
        "name": name,
        "features": mf.features,
        "train_config": vars(tcfg),
        "split": {"p": cfg.split.p, "seed": cfg.split.seed},
        "log": log,
    }
    model.save(model_out, meta, train=m.train_matrix())
    _write_log(model_out.with_suffix(".log.tsv"), log)
    if log:
        plot_training_log(log, model_out.with_suffix(".loss.png"), name, "mean pair loss")
    print(f"{name}: {len(log)} epochs" + (f", final loss {log[-1]:.6f}" if log else "") + f" -> {model_out}")
    return 0


def _comparison_table(rows, ks, pvalues) -> str:
    width = max(12, *(len(r["name"]) for r in rows)) + 2
    header = "Models".ljust(width) + "".join(f"@{k}".rjust(9) for k in ks)
    if pvalues:
        header += f"{'p@' + str(ks[-1]):>12}"
    lines = [header, "-" * len(header)]
    for r in rows:
        line = r["name"].ljust(width) + "".join(f"{r['recall'][str(k)]:9.4f}" for k in ks)
        if pvalues:
            p = pvalues.get(r["name"])
            line += f"{p[str(ks[-1])]['p']:12.3g}" if p else f"{'(baseline)':>12}"
        lines.append(line)
    return "\n".join(lines) + "\n"


def cmd_evaluate(cfg: PipelineConfig, args) -> int:
    out = cfg.out_dir
    if not args.checkpoints:
        raise ConfigError("evaluate needs at least one checkpoint")
    ks = sorted(cfg.eval.ks)
    full = _load_interactions(out)
    splits: dict[tuple[int, int], InteractionMatrix] = {}
    # rows: [label, name, {split_key: RecallReport}]; a checkpoint joins the
    # first row of the same model name that has not yet seen its split
    rows_acc: list[list] = []
    for path in args.checkpoints:
        model, meta, train_part = FactorizationModel.load(path)
        if (model.n_users, model.n_items) != (full.n_users, full.n_items):
            raise ConfigError(f"{path}: model shape {model.n_users}x{model.n_items} does not match the dataset")
        key = (int(meta["split"]["p"]), int(meta["split"]["seed"]))
        if key not in splits:
            splits[key] = split_leave_p_in(full, SplitConfig(*key))
        m = splits[key]
        if train_part is not None and train_part != m.train_matrix():
            raise DataError(f"{path}: stored training pairs differ from the recomputed split")
        report = evaluate(model, m, ks, threads=args.threads)
        name = meta.get("name", Path(path).stem)
        row = next((r for r in rows_acc if r[1] == name and key not in r[2]), None)
        if row is None:
            label, n = name, 2
            while any(r[0] == label for r in rows_acc):
                label, n = f"{name} #{n}", n + 1
            row = [label, name, {}]
            rows_acc.append(row)
        row[2][key] = report

    split_keys = sorted(rows_acc[0][2])
    for label, _, per_split in rows_acc:
        if sorted(per_split) != split_keys:
            raise ConfigError(
                f"{label!r} was evaluated on splits {sorted(per_split)} but {rows_acc[0][0]!r} on {split_keys}; "
                "every model needs one checkpoint per split"
            )

    names = [r[0] for r in rows_acc]
    pooled = {}  # label -> (mean recall per k, per-(split, user) recall matrix)
    rows = []
    for label, _, per_split in rows_acc:
        reports = [per_split[key] for key in split_keys]
        mean = {str(k): float(np.mean([rep.mean[k] for rep in reports])) for k in ks}
        pooled[label] = np.vstack([rep.per_user for rep in reports])
        rows.append({
            "name": label,
            "ks": ks,
            "recall": mean,
            "n_users": int(sum(rep.users.size for rep in reports)),
            "n_excluded": int(sum(rep.n_excluded for rep in reports)),
        })

    pvalues = {}
    base_name = None
    if len(rows) > 1:
        base_name = args.baseline or cfg.eval.baseline or names[0]
        if base_name not in names:
            raise ConfigError(f"baseline {base_name!r} is not among the evaluated models {names}")
        for label in names:
            if label == base_name:
                continue
            pvalues[label] = {}
            for c, k in enumerate(ks):
                t = paired_ttest(pooled[label][:, c], pooled[base_name][:, c])
                pvalues[label][str(k)] = {"t": t.statistic, "p": t.pvalue, "degenerate": t.degenerate}
        for row in rows:
            row["ttest_vs_baseline"] = pvalues.get(row["name"])
    report = {
        "ks": ks,
        "splits": [{"p": p, "seed": seed} for p, seed in split_keys],
        "baseline": base_name,
        "models": rows,
    }

    report_dir = Path(args.report_dir) if args.report_dir else out
    report_dir.mkdir(parents=True, exist_ok=True)
    (report_dir / "report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    with open(report_dir / "report.tsv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("model\t" + "\t".join(f"recall@{k}" for k in ks) + "\tp_vs_baseline@" + str(ks[-1]) + "\n")
        for row in rows:
            p = pvalues.get(row["name"])
            fh.write(row["name"] + "\t" + "\t".join(repr(row["recall"][str(k)]) for k in ks)
                     + "\t" + (repr(p[str(ks[-1])]["p"]) if p else "") + "\n")
    table = _comparison_table(rows, ks, pvalues)
    (report_dir / "report.txt").write_text(table, encoding="utf-8")
    plot_recall_curves({r["name"]: {k: r["recall"][str(k)] for k in ks} for r in rows}, ks,
                       report_dir / "recall_at_k.png")
    print(table, end="")
    return 0


def cmd_recommend(cfg: PipelineConfig, args) -> int:
    model, meta, train_part = FactorizationModel.load(args.checkpoint)
    if not 0 <= args.user < model.n_users:
        raise ConfigError(f"unknown user id {args.user} (model has {model.n_users} users)")
    if args.k < 1:
        raise ConfigError("k must be >= 1")
    if train_part is None:
        train_part = InteractionMatrix.from_rows([], model.n_users, model.n_items)
    seen = InteractionMatrix(
        train_part.n_users, train_part.n_items, train_part.indptr, train_part.indices,
        np.ones(train_part.n_pairs, dtype=bool), np.zeros(train_part.n_users, dtype=bool),
    )
    ranking = rank_candidates(model, args.user, seen, args.k)
    titles = {}
    docs_path = cfg.out_dir / "documents.jsonl"
    if docs_path.exists():
        titles = {d.item_id: d.title for d in read_raw_documents(docs_path)}
    for rank, (item, score) in enumerate(zip(ranking.ranked_items, ranking.scores), start=1):
        print(f"{rank}\t{item}\t{score:.6f}\t{titles.get(int(item), '')}")
    return 0


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML pipeline configuration")
    common.add_argument("--seed", type=int, help="override the seed of the stage being run")
    common.add_argument("--threads", type=int, default=1, help="worker threads (1 = deterministic default)")
    common.add_argument("--out", help="override paths.out")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="tagrec", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common], help="convert raw data to the canonical format").set_defaults(
        func=cmd_ingest)
    sub.add_parser("features", parents=[common], help="build tag and tf-idf item features").set_defaults(
        func=cmd_features)

    p = sub.add_parser("train-encoder", parents=[common], help="train the tag-prediction network")
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_train_encoder, seed_target="encoder")

    p = sub.add_parser("embed", parents=[common], help="export document embeddings")
    p.add_argument("--encoder", help="encoder checkpoint (default: <out>/encoder.ckpt)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train-mf", parents=[common], help="train a factorization model")
    p.add_argument("--loss", choices=["bpr", "warp"])
    p.add_argument("--features", choices=["identity", "tags", "tfidf", "han"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--split-seed", type=int, help="override split.seed (one checkpoint per split for averaging)")
    p.add_argument("--embeddings", help="dense embedding file (default: <out>/embeddings.txt)")
    p.add_argument("--model-out")
    p.set_defaults(func=cmd_train_mf, seed_target="mf")

    p = sub.add_parser("evaluate", parents=[common], help="compare checkpoints by Recall@K")
    p.add_argument("checkpoints", nargs="+",
                   help="model checkpoints; checkpoints of one model on different splits are averaged")
    p.add_argument("--baseline", help="row name the t-tests compare against (default: first)")
    p.add_argument("--report-dir", help="where to write report.* (default: <out>)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("recommend", parents=[common], help="top-k items for one user")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--user", type=int, required=True)
    p.add_argument("--k", type=int, default=10)
    p.set_defaults(func=cmd_recommend)
    return parser


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if args.out:
        cfg.paths.out = str(Path(args.out).resolve())
    target = getattr(args, "seed_target", None)
    if args.seed is not None and target:
        getattr(cfg, target).seed = args.seed
    if getattr(args, "loss", None):
        cfg.mf.loss = args.loss
    if getattr(args, "features", None):
        cfg.mf.features = args.features
    if getattr(args, "split_seed", None) is not None:
        cfg.split.seed = args.split_seed
    if getattr(args, "epochs", None) is not None:
        cfg.mf.epochs = args.epochs
    if args.threads < 1:
        raise ConfigError("--threads must be >= 1")
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
        return args.func(cfg, args)
    except TagrecError as exc:
        print(f"tagrec {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:
        print(f"tagrec {args.command}: error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())

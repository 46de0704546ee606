"""Command-line entry points for every pipeline stage.

Every stage reads the canonical JSON config plus ``--set path.to.key=value``
overrides; exit codes are 0 on success, 1 on domain errors, 2 on usage
errors.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import synthetic
from .backends import (HttpGenerationBackend, HttpTextGenBackend, StubGenerationBackend,
                       StubTextGenBackend)
from .config import apply_overrides, load_config
from .corpus import AugmentationStore, DatasetIndex, ingest_directory
from .errors import PipelineError
from .filtering import (FilterReport, HashEmbedder, HttpEmbedder, ParamsEmbedder,
                        apply_filter, rank_report, score_store)
from .metrics import SetStatistics, duplication_report, frechet_distance, save_report
from .pipeline import GenerationKnobs, pregenerate
from .prompts import (LECache, build_plan, expand_handcrafted, generate_language_enhanced,
                      load_catalog, render_minimal)
from .trainer import TrainConfig, evaluate, run_rrsf_protocol, run_sdg_protocol, train, save_parameters
from .service import create_app, save_metric_run


def _config_from(args) -> dict:
    cfg = load_config(args.config)
    return apply_overrides(cfg, args.set or [])


def _workdir(cfg) -> Path:
    path = Path(cfg["workdir"])
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_index(cfg) -> DatasetIndex:
    path = _workdir(cfg) / "index.jsonl"
    if not path.exists():
        raise PipelineError(f"no index at {path}; run `idapipe ingest` first")
    return DatasetIndex.load(path)


def _load_store(cfg, k: int) -> AugmentationStore:
    path = _workdir(cfg) / "augmentations.jsonl"
    if path.exists():
        return AugmentationStore.load(path)
    return AugmentationStore(dataset_name=cfg["dataset"]["name"], k=k)


def _gen_backend(cfg, index: DatasetIndex | None):
    gen = cfg["generation"]
    if gen["backend"] == "http":
        return HttpGenerationBackend(gen["base_url"])
    return StubGenerationBackend(classes=index.classes if index else None)


def _embedder(cfg, index: DatasetIndex | None):
    kind = cfg["filter"]["embedder"]
    if kind == "http":
        return HttpEmbedder(cfg["filter"]["base_url"])
    if kind == "hash":
        return HashEmbedder()
    return ParamsEmbedder(index.classes if index else None)


def _textgen(cfg):
    if cfg["prompts"]["textgen"] == "stub":
        return StubTextGenBackend()
    return HttpTextGenBackend(cfg["prompts"]["textgen"])


def _train_config(cfg) -> TrainConfig:
    t = cfg["train"]
    return TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                       learning_rate=t["learning_rate"], seed=t["seed"],
                       image_side=t["image_side"],
                       use_augmentations=t["use_augmentations"],
                       filter_fraction=t.get("filter_fraction"))


def _knobs(cfg) -> GenerationKnobs:
    g = cfg["generation"]
    return GenerationKnobs(mode=g["mode"], strength=g["strength"],
                           guidance_scale=g["guidance_scale"], steps=g["steps"],
                           base_seed=g["base_seed"])


def cmd_ingest(args) -> int:
    cfg = _config_from(args)
    root = Path(args.root or cfg["dataset"]["root"])
    layout = args.layout or cfg["dataset"]["layout"]
    result = ingest_directory(root, layout, name=cfg["dataset"]["name"],
                              domain=cfg["dataset"]["domain"])
    workdir = _workdir(cfg)
    result.index.save(workdir / "index.jsonl")
    (workdir / "ingest-rejects.json").write_text(
        json.dumps([{"path": r.path, "reason": r.reason} for r in result.rejects],
                   indent=2) + "\n", encoding="utf-8")
    print(f"ingested {len(result.index.samples)} samples "
          f"({len(result.index.domains)} domains, {len(result.index.classes)} classes, "
          f"{len(result.rejects)} rejected) -> {workdir / 'index.jsonl'}")
    return 0


def cmd_prompts(args) -> int:
    cfg = _config_from(args)
    strategy = args.strategy or cfg["prompts"]["strategy"]
    if args.prompts_cmd == "le":
        prompts = generate_language_enhanced(args.domain, args.class_label, args.n,
                                             strategy if strategy.startswith("LE") else "LE_C",
                                             _textgen(cfg), seed=cfg["prompts"]["le_seed"])
    else:
        catalog = load_catalog(args.catalog or cfg["prompts"]["catalog"], strategy)
        if args.prompts_cmd == "render":
            prompts = [render_minimal(args.domain, args.class_label, catalog)]
        else:
            prompts = expand_handcrafted(args.domain, args.class_label, catalog, args.n)
    if args.json:
        print(json.dumps([p.to_dict() for p in prompts], indent=2))
    else:
        for p in prompts:
            print(p.text)
    return 0


def cmd_pregenerate(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    strategy = args.strategy or cfg["prompts"]["strategy"]
    k = args.k if args.k is not None else cfg["generation"]["k"]
    if strategy in ("LE_C", "LE_M"):
        cache = LECache.build(index.domains, index.classes, max(k, 1), strategy,
                              _textgen(cfg), seed=cfg["prompts"]["le_seed"])
        catalog = cache
    else:
        catalog = load_catalog(args.catalog or cfg["prompts"]["catalog"], strategy)
    mode = args.plan_mode
    excluded = set(args.exclude or ())
    plan = build_plan(index, args.source, catalog, k, mode,
                      excluded_domains=excluded, rng_seed=cfg["generation"]["base_seed"])
    store = _load_store(cfg, k)
    workdir = _workdir(cfg)
    report = pregenerate(index, plan, _gen_backend(cfg, index), store,
                         Path(cfg["dataset"]["root"]), knobs=_knobs(cfg),
                         store_path=workdir / "augmentations.jsonl",
                         mask_provider=synthetic.foreground_mask
                         if cfg["generation"]["mode"] == "inpaint" else None)
    report.save(workdir / "pregenerate-report.json")
    print(f"requested={report.requested} ok={report.ok} failed={report.failed} "
          f"skipped={report.skipped} wall_time_s={report.wall_time_s}")
    return 0


def cmd_filter(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    store = _load_store(cfg, cfg["generation"]["k"])
    fraction = args.fraction if args.fraction is not None else cfg["filter"]["fraction"]
    scored, errors = score_store(store, index, Path(cfg["dataset"]["root"]),
                                 _embedder(cfg, index))
    report = apply_filter(rank_report(scored, errors), fraction)
    workdir = _workdir(cfg)
    report.save(workdir / "filter-report.jsonl")
    retained = sum(1 for e in report.entries if e.retained)
    print(f"scored={len(report.entries)} retained={retained} "
          f"dropped={len(report.entries) - retained} fraction={fraction}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    config = _train_config(cfg)
    store = _load_store(cfg, cfg["generation"]["k"])
    samples = index.subset(domain=args.source) if args.source else list(index.samples)
    sub = DatasetIndex(name=index.name, domains=index.domains, classes=index.classes,
                       samples=samples)
    model = train(sub, store, config, images_root=Path(cfg["dataset"]["root"]))
    workdir = _workdir(cfg)
    model.save_log(workdir / "train-log.jsonl")
    save_parameters(model.backend, workdir / "model.bin", n_classes=len(model.classes),
                    feature_dim=model.backend.feature_dim, seed=config.seed)
    print(f"trained on {len([s for s in samples if s.split == 'train'])} samples; "
          f"final mean loss {model.log[-1]['mean_loss']:.4f}")
    if args.eval_domain:
        acc = evaluate(model, index.subset(domain=args.eval_domain),
                       Path(cfg["dataset"]["root"]))
        print(f"accuracy on {args.eval_domain}: {acc:.2f}")
    return 0


def cmd_sdg(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    strategy = args.strategy or cfg["prompts"]["strategy"]
    catalog = load_catalog(args.catalog or cfg["prompts"]["catalog"], strategy)
    config = _train_config(cfg)
    reports = run_sdg_protocol(index, catalog, config,
                               images_root=Path(cfg["dataset"]["root"]),
                               workdir=_workdir(cfg) / "sdg",
                               gen_backend=_gen_backend(cfg, index),
                               k=args.k, excluded_domains=set(args.exclude or ()),
                               knobs=_knobs(cfg))
    payload = {source: r.to_dict() for source, r in sorted(reports.items())}
    workdir = _workdir(cfg)
    save_report(payload, workdir / "sdg-report.json")
    run_id = save_metric_run(workdir, "sdg", payload)
    for source, report in sorted(reports.items()):
        print(f"{source}: average {report.average:.2f}")
    print(f"saved sdg-report.json (run {run_id})")
    return 0


def cmd_rrsf(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    strategy = args.strategy or f"RRSF_{args.kind.upper()}"
    catalog = load_catalog(args.catalog or cfg["prompts"]["catalog"], strategy)
    config = _train_config(cfg)
    report = run_rrsf_protocol(index, args.kind, config, catalog,
                               images_root=Path(cfg["dataset"]["root"]),
                               workdir=_workdir(cfg) / "rrsf",
                               gen_backend=_gen_backend(cfg, index), knobs=_knobs(cfg))
    workdir = _workdir(cfg)
    save_report(report.to_dict(), workdir / "bias-report.json")
    run_id = save_metric_run(workdir, "rrsf", report.to_dict())
    print(json.dumps(report.to_dict(), indent=2))
    print(f"saved bias-report.json (run {run_id})")
    return 0


def _embed_samples(samples, images_root: Path, embedder) -> np.ndarray:
    return np.stack([embedder.embed_image((images_root / s.path).read_bytes())
                     for s in samples])


def cmd_fid(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    images_root = Path(cfg["dataset"]["root"])
    embedder = _embedder(cfg, index)
    side_a = index.subset(domain=args.domain_a)
    side_b = index.subset(domain=args.domain_b)
    if not side_a or not side_b:
        raise PipelineError("both domains need samples for the distribution shift check")
    feats_a = _embed_samples(side_a, images_root, embedder)
    if args.with_augmentations:
        store = _load_store(cfg, cfg["generation"]["k"])
        ids = {s.id for s in side_a}
        aug = [r for r in store.records.values() if r.status == "ok" and r.source_id in ids]
        if aug:
            rows = np.stack([embedder.embed_image((images_root / r.image_path).read_bytes())
                             for r in aug])
            feats_a = np.vstack([feats_a, rows])
    feats_b = _embed_samples(side_b, images_root, embedder)
    value = frechet_distance(SetStatistics.from_features(feats_a),
                             SetStatistics.from_features(feats_b))
    payload = {"frechet_distance": value, "domain_a": args.domain_a,
               "domain_b": args.domain_b, "n_a": int(feats_a.shape[0]),
               "n_b": int(feats_b.shape[0]),
               "with_augmentations": bool(args.with_augmentations)}
    save_report(payload, _workdir(cfg) / "fid-report.json")
    print(f"frechet distance {args.domain_a} vs {args.domain_b}: {value:.6f}")
    return 0


def cmd_dedup(args) -> int:
    cfg = _config_from(args)
    index = _load_index(cfg)
    images_root = Path(cfg["dataset"]["root"])
    embedder = _embedder(cfg, index)
    store = _load_store(cfg, cfg["generation"]["k"])
    candidates = [r for r in store.records.values() if r.status == "ok"]
    tests = index.subset(domain=args.against_domain)
    if not candidates or not tests:
        raise PipelineError("need generated candidates and a non-empty test domain")
    cand_rows = np.stack([embedder.embed_image((images_root / r.image_path).read_bytes())
                          for r in sorted(candidates, key=lambda r: r.key)])
    test_rows = _embed_samples(tests, images_root, embedder)
    threshold = args.threshold if args.threshold is not None else cfg["metrics"]["dedup_threshold"]
    report = duplication_report(cand_rows, test_rows, threshold=threshold)
    save_report(report.to_dict(), _workdir(cfg) / "dedup-report.json")
    print(f"fraction_flagged={report.fraction_flagged:.4f} "
          f"({report.n_flagged}/{report.n_candidates} at threshold {threshold})")
    return 0


def cmd_report(args) -> int:
    cfg = _config_from(args)
    workdir = _workdir(cfg)
    names = ["pregenerate-report.json", "sdg-report.json", "bias-report.json",
             "fid-report.json", "dedup-report.json"]
    found = False
    for name in names:
        path = workdir / name
        if path.exists():
            found = True
            print(f"== {name}")
            print(path.read_text(encoding="utf-8").rstrip())
    filt = workdir / "filter-report.jsonl"
    if filt.exists():
        found = True
        header = json.loads(filt.read_text(encoding="utf-8").splitlines()[0])
        print(f"== filter-report.jsonl\n{json.dumps(header, indent=2)}")
    if not found:
        print("no reports in workdir yet")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    cfg = _config_from(args)
    host = args.host or cfg["service"]["host"]
    port = args.port or cfg["service"]["port"]
    uvicorn.run(create_app(cfg), host=host, port=int(port))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idapipe",
                                     description="Interventional data augmentation pipeline")
    parser.add_argument("--config", help="path to the canonical JSON config")
    parser.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override a config field by dotted path")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="build the dataset index from a directory tree")
    p.add_argument("--root")
    p.add_argument("--layout", choices=["domain_class", "class_only"])
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("prompts", help="render or generate interventional prompts")
    psub = p.add_subparsers(dest="prompts_cmd", required=True)
    for name in ("render", "expand", "le"):
        pp = psub.add_parser(name)
        pp.add_argument("--domain", required=True)
        pp.add_argument("--class", dest="class_label", required=True)
        pp.add_argument("--catalog")
        pp.add_argument("--strategy")
        pp.add_argument("--n", type=int, default=3)
        pp.add_argument("--json", action="store_true")
        pp.set_defaults(func=cmd_prompts)

    p = sub.add_parser("pregenerate", help="generate k variants per source sample")
    p.add_argument("--source", help="source domain (default: all train samples)")
    p.add_argument("--k", type=int)
    p.add_argument("--strategy")
    p.add_argument("--catalog")
    p.add_argument("--plan-mode", default="sdg_one_per_target",
                   choices=["sdg_one_per_target", "sdg_leave_one_out", "rrsf_random"])
    p.add_argument("--exclude", action="append", help="leave-one-out excluded domain")
    p.set_defaults(func=cmd_pregenerate)

    p = sub.add_parser("filter", help="dual-prompt percentile-rank filtering")
    p.add_argument("--fraction", type=float)
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("train", help="train the reference classifier")
    p.add_argument("--source", help="train on this domain only")
    p.add_argument("--eval-domain", help="evaluate on this domain after training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sdg", help="single-domain generalization protocol")
    p.add_argument("--k", type=int)
    p.add_argument("--strategy")
    p.add_argument("--catalog")
    p.add_argument("--exclude", action="append")
    p.set_defaults(func=cmd_sdg)

    p = sub.add_parser("rrsf", help="spurious-feature reliance protocol")
    p.add_argument("--kind", required=True, choices=["background", "texture", "demographic"])
    p.add_argument("--strategy")
    p.add_argument("--catalog")
    p.set_defaults(func=cmd_rrsf)

    p = sub.add_parser("fid", help="distribution shift between two domains")
    p.add_argument("--domain-a", required=True)
    p.add_argument("--domain-b", required=True)
    p.add_argument("--with-augmentations", action="store_true")
    p.set_defaults(func=cmd_fid)

    p = sub.add_parser("dedup", help="duplication check of generated images vs a test domain")
    p.add_argument("--against-domain", required=True)
    p.add_argument("--threshold", type=float)
    p.set_defaults(func=cmd_dedup)

    p = sub.add_parser("report", help="print the reports present in the workdir")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

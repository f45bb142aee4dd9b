"""Command-line entry point.

One binary, eight pipeline subcommands (plus the opt-in background fetcher),
reproducible by construction: fixed seeds, sorted outputs, atomic writes.
Exit codes: 0 success, 1 internal error, 2 bad input, 3 missing prerequisite
artifact.
"""

from __future__ import annotations

import functools
import json
import sys
import urllib.parse
import urllib.request
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import click

from . import corpus as corpus_mod
from . import embed as embed_mod
from . import evalkit, featcorr, genprompt, mapping
from .corpus import AspectKind, Corpus, Source, TvdRecord
from .errors import FeedFormatError, MissingPrerequisite, VulnaugError
from .ioutil import atomic_write_text
from .pipeline import AugmentPipeline

EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
EXIT_MISSING_PREREQ = 3


@dataclass
class RunConfig:
    """Defaults for every stage; a JSON config file and flags override them."""

    output_dir: str = "."
    seed: int = 42
    decode_seed: int = 1000
    jobs: int = 1
    backend: str = "mock"
    backend_config: str | None = None
    oracle_answers: str | None = None
    audit: str | None = None
    aggregation: str = "mean"
    example_limit: int = 30
    example_strategy: str = "cluster"
    rounds: int = 5
    long_tail_threshold: int = 50
    neg_ratio: int = featcorr.NEG_RATIO
    temperature: float = 0.7

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def override(self, **kwargs) -> "RunConfig":
        for key, value in kwargs.items():
            if value is not None:
                setattr(self, key, value)
        return self


def _fmt_num(value: float) -> str:
    text = f"{value:.12g}"
    if "." not in text and "e" not in text and "n" not in text:
        text += ".0"
    return text


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _guard(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except MissingPrerequisite as exc:
            _fail(EXIT_MISSING_PREREQ, str(exc))
        except (FeedFormatError, FileNotFoundError, ValueError) as exc:
            _fail(EXIT_BAD_INPUT, str(exc))
        except VulnaugError as exc:
            _fail(EXIT_INTERNAL, str(exc))

    return wrapper


def _prereq(path: str | None, artifact: str) -> Path:
    if path is None:
        raise MissingPrerequisite(artifact, "<not given>")
    p = Path(path)
    if not p.exists():
        raise MissingPrerequisite(artifact, str(p))
    return p


def _load_records(path: Path) -> list[TvdRecord]:
    result = corpus_mod.parse_feed(path.read_bytes())
    for diag in result.diagnostics:
        click.echo(f"warning: {path}:{diag.line}: {diag.message}", err=True)
    return result.records


def _load_corpus(path: Path) -> Corpus:
    return Corpus.from_records(_load_records(path))


def _make_backend(cfg: RunConfig) -> genprompt.LlmBackend:
    if cfg.backend == "mock":
        backend: genprompt.LlmBackend = genprompt.MockBackend()
    elif cfg.backend == "echo":
        backend = genprompt.EchoBackend()
    elif cfg.backend == "oracle":
        answers: dict[str, str] = {}
        if cfg.oracle_answers:
            answers = json.loads(Path(cfg.oracle_answers).read_text(encoding="utf-8"))
        backend = genprompt.OracleBackend(answers=answers)
    elif cfg.backend == "http":
        conf_path = _prereq(cfg.backend_config, "backend config")
        backend = genprompt.HttpBackend(genprompt.BackendConfig.from_file(conf_path))
    else:
        raise ValueError(f"unknown backend: {cfg.backend!r}")
    if cfg.audit:
        backend = genprompt.AuditingBackend(backend, cfg.audit)
    return backend


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON config file; flags override it.")
@click.option("--seed", type=int, default=None, help="Global training/sampling seed.")
@click.option("--decode-seed", type=int, default=None, help="Base seed for backend rounds.")
@click.option("--jobs", type=int, default=None, help="Worker threads for per-target stages.")
@click.option("--output-dir", type=str, default=None)
@click.option("--backend", type=click.Choice(["mock", "echo", "oracle", "http"]), default=None)
@click.pass_context
def cli(ctx, config_path, seed, decode_seed, jobs, output_dir, backend):
    """Augment missing key aspects in textual vulnerability descriptions."""
    try:
        cfg = RunConfig.from_file(config_path) if config_path else RunConfig()
    except (ValueError, TypeError) as exc:
        _fail(EXIT_BAD_INPUT, f"bad config file: {exc}")
    cfg.override(seed=seed, decode_seed=decode_seed, jobs=jobs,
                 output_dir=output_dir, backend=backend)
    ctx.obj = cfg


@cli.command()
@click.argument("feeds", nargs=-1, required=True)
@click.option("--source", default="CVE", help="Source for feed lines lacking one.")
@click.option("-o", "--output", default=None)
@click.pass_obj
@_guard
def ingest(cfg: RunConfig, feeds, source, output):
    """Normalize raw feed files into one corpus file."""
    default_source = Source(source)
    merged: dict[tuple[str, str, str | None], TvdRecord] = {}
    diagnostics = 0
    dedup = 0
    for feed in feeds:
        path = Path(feed)
        if not path.exists():
            _fail(EXIT_BAD_INPUT, f"feed file not found: {path}")
        result = corpus_mod.parse_feed(path.read_bytes(), source=default_source)
        diagnostics += len(result.diagnostics)
        for diag in result.diagnostics:
            click.echo(f"warning: {path}:{diag.line}: {diag.message}", err=True)
        for rec in result.records:
            key = (rec.cve_id, rec.source.value, rec.revision_tag)
            if key in merged:
                dedup += 1
            else:
                merged[key] = rec
    out = Path(output) if output else Path(cfg.output_dir) / "corpus.jsonl"
    lines = [
        merged[key].to_json_line()
        for key in sorted(merged, key=lambda k: (k[0], k[1], k[2] or ""))
    ]
    atomic_write_text(out, "\n".join(lines) + ("\n" if lines else ""))
    click.echo(
        f"ingested {len(merged)} records from {len(feeds)} feeds"
        f" (rejected {diagnostics}, deduplicated {dedup}) -> {out}"
    )


@cli.command("build-map")
@click.option("--corpus", "corpus_path", default=None)
@click.option("--no-fallback", is_flag=True, help="Skip raw-name fallback indexing.")
@click.option("-o", "--output", default=None)
@click.pass_obj
@_guard
def build_map(cfg: RunConfig, corpus_path, no_fallback, output):
    """Build the software-CVE mapping from government-source records."""
    records = _load_records(_prereq(corpus_path, "corpus file"))
    gov = [r for r in records if r.source.is_gov]
    db = mapping.build_mapping(gov)
    fallback = 0
    if not no_fallback:
        fallback = mapping.extend_with_fallback(db, [r for r in records if not r.source.is_gov])
    out = Path(output) if output else Path(cfg.output_dir) / "mapping.tsv"
    mapping.save_mapping(db, out)
    stats = mapping.mapping_stats(db)
    click.echo(
        f"mapped {stats['total_links']} cve links to {stats['distinct_names']} names"
        f" (unresolved {stats['unresolved']}, conflicts {len(db.conflicts)},"
        f" fallback {fallback}) -> {out}"
    )


@cli.command("train-embed")
@click.option("--corpus", "corpus_path", default=None)
@click.option("--dim", type=int, default=64)
@click.option("--window", type=int, default=5)
@click.option("--epochs", type=int, default=5)
@click.option("--negative", type=int, default=5)
@click.option("--export-text", default=None)
@click.option("-o", "--output", default=None)
@click.pass_obj
@_guard
def train_embed(cfg: RunConfig, corpus_path, dim, window, epochs, negative, export_text, output):
    """Train corpus word embeddings."""
    corpus = _load_corpus(_prereq(corpus_path, "corpus file"))
    config = embed_mod.TrainConfig(
        window=window, epochs=epochs, negative_samples=negative, seed=cfg.seed
    )
    model = embed_mod.train_embeddings(corpus, config, dim=dim)
    out = Path(output) if output else Path(cfg.output_dir) / "embed.bin"
    model.save(out)
    if export_text:
        model.export_text(export_text)
    click.echo(f"trained {len(model.vocab)}x{model.dim} embeddings over {len(corpus)} records -> {out}")


@cli.command("train-corr")
@click.option("--corpus", "corpus_path", default=None)
@click.option("--embed", "embed_path", default=None)
@click.option("--background", "background_path", default=None)
@click.option("--lr", type=float, default=0.5)
@click.option("--epochs", type=int, default=300)
@click.option("--export-text", default=None)
@click.option("-o", "--output", default=None)
@click.pass_obj
@_guard
def train_corr(cfg: RunConfig, corpus_path, embed_path, background_path, lr, epochs, export_text, output):
    """Train the feature-correlation model from aspect co-occurrence."""
    corpus = _load_corpus(_prereq(corpus_path, "corpus file"))
    embedding = embed_mod.EmbeddingModel.load(_prereq(embed_path, "embedding model"))
    store = None
    if background_path:
        store = featcorr.BackgroundStore.from_file(_prereq(background_path, "background store"))
    pairs = featcorr.build_training_pairs(corpus, seed=cfg.seed)
    config = featcorr.CorrTrainConfig(learning_rate=lr, epochs=epochs, seed=cfg.seed)
    model = featcorr.train_correlation(pairs, store, embedding, config)
    out = Path(output) if output else Path(cfg.output_dir) / "corr.bin"
    model.save(out)
    if export_text:
        model.export_text(export_text)
    positives = sum(1 for p in pairs if p.label == 1)
    click.echo(
        f"trained correlation model on {positives} positive / {len(pairs) - positives}"
        f" negative pairs, final loss {model.loss_history[-1]:.6f} -> {out}"
    )


def _build_pipeline(cfg: RunConfig, corpus_path, map_path, embed_path, corr_path,
                    background_path) -> tuple[AugmentPipeline, Corpus]:
    corpus = _load_corpus(_prereq(corpus_path, "corpus file"))
    db = mapping.load_mapping(_prereq(map_path, "mapping file"))
    embedding = embed_mod.EmbeddingModel.load(_prereq(embed_path, "embedding model"))
    correlation = featcorr.CorrelationModel.load(_prereq(corr_path, "correlation model"), embedding)
    store = None
    if background_path:
        store = featcorr.BackgroundStore.from_file(_prereq(background_path, "background store"))
    pipeline = AugmentPipeline(
        corpus=corpus,
        db=db,
        embedding=embedding,
        correlation=correlation,
        backend=_make_backend(cfg),
        store=store,
        example_limit=cfg.example_limit,
        rounds=cfg.rounds,
        seed=cfg.seed,
        decode_seed=cfg.decode_seed,
        temperature=cfg.temperature,
        aggregation=cfg.aggregation,
        example_strategy=cfg.example_strategy,
    )
    return pipeline, corpus


def _parse_aspect(name: str) -> AspectKind:
    try:
        return AspectKind.from_key(name)
    except ValueError as exc:
        raise ValueError(str(exc)) from exc


@cli.command()
@click.option("--corpus", "corpus_path", default=None)
@click.option("--map", "map_path", default=None)
@click.option("--embed", "embed_path", default=None)
@click.option("--corr", "corr_path", default=None)
@click.option("--background", "background_path", default=None)
@click.option("--targets", "targets_path", default=None,
              help="Feed-format file of records to augment; defaults to corpus records with gaps.")
@click.option("--aspect", default=None, help="Only augment this aspect.")
@click.option("--backend", type=click.Choice(["mock", "echo", "oracle", "http"]), default=None)
@click.option("--backend-config", default=None, help="JSON settings for the http backend.")
@click.option("--oracle-answers", default=None, help="JSON answer table for the oracle backend.")
@click.option("--rounds", type=int, default=None)
@click.option("--limit", "example_limit", type=int, default=None)
@click.option("--example-strategy", type=click.Choice(["cluster", "similarity"]), default=None,
              help="Example selection; similarity is the evaluation baseline.")
@click.option("--audit", default=None, help="Append prompts/completions to this JSONL file.")
@click.option("--dump-examples", is_flag=True,
              help="Include the chosen in-context example cve_ids in the output.")
@click.option("-o", "--output", default=None)
@click.pass_obj
@_guard
def augment(cfg: RunConfig, corpus_path, map_path, embed_path, corr_path, background_path,
            targets_path, aspect, backend, backend_config, oracle_answers, rounds,
            example_limit, example_strategy, audit, dump_examples, output):
    """Fill missing aspects for every target record."""
    cfg.override(backend=backend, backend_config=backend_config,
                 oracle_answers=oracle_answers, rounds=rounds,
                 example_limit=example_limit, example_strategy=example_strategy, audit=audit)
    pipeline, corpus = _build_pipeline(
        cfg, corpus_path, map_path, embed_path, corr_path, background_path
    )
    if targets_path:
        targets = _load_records(_prereq(targets_path, "targets file"))
    else:
        targets = [rec for rec in corpus if rec.missing_aspects()]
    only = _parse_aspect(aspect) if aspect else None

    tasks: list[tuple[TvdRecord, AspectKind]] = []
    for rec in sorted(targets, key=lambda r: r.cve_id):
        for kind in rec.missing_aspects():
            if only is None or kind == only:
                tasks.append((rec, kind))

    def run(task: tuple[TvdRecord, AspectKind]):
        rec, kind = task
        return pipeline.augment(rec, kind)

    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
            outcomes = list(pool.map(run, tasks))
    else:
        outcomes = [run(task) for task in tasks]

    lines = []
    for out in sorted(outcomes, key=lambda o: (o.cve_id, o.aspect.json_key)):
        obj = {
            "cve_id": out.cve_id,
            "aspect": out.aspect.json_key,
            "answer": out.answer,
            "score": out.score,
            "pool_size": out.pool_size,
            "examples": out.example_count,
            "candidates": [
                {
                    "text": rc.candidate.text,
                    "score": rc.score,
                    "round": rc.candidate.round,
                    "strategy": rc.candidate.strategy.value,
                }
                for rc in out.ranked
            ],
        }
        if dump_examples:
            obj["example_cves"] = out.example_cves
        lines.append(json.dumps(obj, ensure_ascii=False, sort_keys=True))
    out_path = Path(output) if output else Path(cfg.output_dir) / "augmented.jsonl"
    atomic_write_text(out_path, "\n".join(lines) + ("\n" if lines else ""))
    click.echo(f"augmented {len(lines)} (record, aspect) slots -> {out_path}")


def _load_testset(path: Path) -> list[tuple[TvdRecord, AspectKind, str]]:
    testset = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        record = TvdRecord.from_json_obj(obj)
        kind = AspectKind.from_key(obj["masked_aspect"])
        testset.append((record, kind, obj["label"]))
    return testset


@cli.command()
@click.option("--corpus", "corpus_path", default=None)
@click.option("--map", "map_path", default=None)
@click.option("--embed", "embed_path", default=None)
@click.option("--corr", "corr_path", default=None)
@click.option("--background", "background_path", default=None)
@click.option("--testset", "testset_path", default=None,
              help="Masked-testset JSONL; omit to mask --aspect over the corpus.")
@click.option("--aspect", default=None)
@click.option("--backend", type=click.Choice(["mock", "echo", "oracle", "http"]), default=None)
@click.option("--backend-config", default=None, help="JSON settings for the http backend.")
@click.option("--oracle-answers", default=None, help="JSON answer table for the oracle backend.")
@click.option("--threshold", type=int, default=None, help="Long-tail threshold.")
@click.option("--example-strategy", type=click.Choice(["cluster", "similarity"]), default=None,
              help="Example selection; similarity is the evaluation baseline.")
@click.option("-o", "--output", "out_prefix", default=None,
              help="Prefix for report files (.txt, .jsonl, .csv).")
@click.pass_obj
@_guard
def evaluate(cfg: RunConfig, corpus_path, map_path, embed_path, corr_path, background_path,
             testset_path, aspect, backend, backend_config, oracle_answers, threshold,
             example_strategy, out_prefix):
    """Score the pipeline on a masked test set."""
    cfg.override(backend=backend, backend_config=backend_config,
                 oracle_answers=oracle_answers,
                 long_tail_threshold=threshold, example_strategy=example_strategy)
    pipeline, corpus = _build_pipeline(
        cfg, corpus_path, map_path, embed_path, corr_path, background_path
    )
    if testset_path:
        testset = _load_testset(_prereq(testset_path, "testset file"))
        dataset_id = str(testset_path)
    elif aspect:
        kind = _parse_aspect(aspect)
        testset = []
        for rec in corpus:
            try:
                masked, label = corpus_mod.mask_aspect(rec, kind)
            except VulnaugError:
                continue
            testset.append((masked, kind, label))
        dataset_id = f"masked:{kind.json_key}"
    else:
        raise ValueError("evaluate needs --testset or --aspect")

    if cfg.backend == "oracle" and not cfg.oracle_answers:
        pipeline.backend = genprompt.OracleBackend(
            answers={rec.cve_id: label for rec, _, label in testset}
        )

    report = evalkit.evaluate(
        pipeline,
        testset,
        pipeline.embedding,
        db=pipeline.db,
        threshold=cfg.long_tail_threshold,
        pipeline_id=pipeline.identity,
        dataset_id=dataset_id,
    )
    prefix = Path(out_prefix) if out_prefix else Path(cfg.output_dir) / "eval-report"
    atomic_write_text(prefix.with_suffix(".txt"), report.to_text())
    atomic_write_text(prefix.with_suffix(".jsonl"), report.to_jsonl())
    atomic_write_text(prefix.with_suffix(".csv"), report.to_csv())
    click.echo(report.to_text(), nl=False)
    click.echo(f"reports -> {prefix}.txt .jsonl .csv")


@cli.command()
@click.option("--n", "n", type=int, required=True, help="Reference TVDs a maintainer would consult.")
@click.option("--x", "x", type=float, required=True, help="Augmentation accuracy in [0,1].")
@_guard
def cost(n, x):
    """Expected-lookup cost of augmenting versus manual search."""
    params = evalkit.CostParams(n=n, x=x)
    result = evalkit.expected_lookups(params)
    e_not, e_aug = result["e_not_augment"], result["e_augment"]
    if e_aug < e_not:
        verdict = "effective"
    elif e_aug == e_not:
        verdict = "break-even"
    else:
        verdict = "not-effective"
    thresh = evalkit.effectiveness_threshold(n)
    click.echo(
        f"e_not={_fmt_num(e_not)} e_aug={_fmt_num(e_aug)}"
        f" threshold={_fmt_num(thresh)} verdict={verdict}"
    )


@cli.command()
@click.option("--corpus", "corpus_path", default=None)
@click.option("--map", "map_path", default=None)
@click.option("--threshold", type=int, default=None)
@click.option("-o", "--output", default=None, help="Also write the report as JSON.")
@click.pass_obj
@_guard
def stats(cfg: RunConfig, corpus_path, map_path, threshold, output):
    """Gini coefficient and long-tail partition of the corpus."""
    cfg.override(long_tail_threshold=threshold)
    corpus = _load_corpus(_prereq(corpus_path, "corpus file"))
    db = mapping.load_mapping(_prereq(map_path, "mapping file")) if map_path else None
    counts: dict[str, int] = {}
    unnamed = 0
    for rec in corpus:
        name = db.cve_to_name.get(rec.cve_id) if db else None
        if name is None and rec.raw_software_names:
            name = mapping.canonicalize_name(rec.raw_software_names[0])
        if name is None:
            unnamed += 1
            continue
        counts[name] = counts.get(name, 0) + 1
    if not counts:
        raise ValueError("no record carries a software name; cannot compute stats")
    report = corpus_mod.classify_long_tail(counts, cfg.long_tail_threshold)
    click.echo(
        f"records={len(corpus)} software={len(counts)} unnamed={unnamed}\n"
        f"gini={_fmt_num(report.gini)} threshold={report.threshold}\n"
        f"long_tail={len(report.long_tail)} non_long_tail={len(report.non_long_tail)}"
    )
    if output:
        atomic_write_text(Path(output), json.dumps(
            {
                "gini": report.gini,
                "threshold": report.threshold,
                "counts": dict(sorted(counts.items())),
                "long_tail": sorted(report.long_tail),
                "non_long_tail": sorted(report.non_long_tail),
                "unnamed": unnamed,
            },
            ensure_ascii=False,
            sort_keys=True,
        ) + "\n")


@cli.command("fetch-background")
@click.option("--terms", "terms_path", required=True,
              help="File with one search term per line.")
@click.option("--endpoint", default="https://en.wikipedia.org/api/rest_v1/page/summary/{term}",
              help="URL template with a {term} placeholder.")
@click.option("--rate", type=float, default=1.0, help="Requests per second.")
@click.option("-o", "--output", default=None)
@click.pass_obj
@_guard
def fetch_background(cfg: RunConfig, terms_path, endpoint, rate, output):
    """Populate a background store from a live encyclopedia API (network opt-in)."""
    terms = [
        line.strip()
        for line in Path(terms_path).read_text(encoding="utf-8").splitlines()
        if line.strip()
    ]
    limiter = genprompt.RateLimiter(rate_per_s=rate)
    store = featcorr.BackgroundStore()
    fetched = 0
    for term in terms:
        limiter.acquire()
        url = endpoint.format(term=urllib.parse.quote(term))
        try:
            with urllib.request.urlopen(url, timeout=30) as resp:
                body = resp.read().decode("utf-8")
        except Exception as exc:  # noqa: BLE001 - skip unfetchable terms
            click.echo(f"warning: {term}: {exc}", err=True)
            continue
        try:
            obj = json.loads(body)
            text = obj.get("extract") or obj.get("description") or ""
        except json.JSONDecodeError:
            text = body
        if text:
            store.add(term, " ".join(text.split()))
            fetched += 1
    out = Path(output) if output else Path(cfg.output_dir) / "background.tsv"
    store.save(out)
    click.echo(f"fetched {fetched}/{len(terms)} articles -> {out}")


def main() -> None:
    cli(prog_name="vulnaug")


if __name__ == "__main__":
    main()

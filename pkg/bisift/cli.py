"""Command-line entry point for the BiSIFT copy-retrieval pipeline."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, get_args

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator

from . import __version__
from .binarize import Scheme, binarize_set
from .config import LogLevel, settings
from .descriptor import DescriptorSet, DescriptorType
from .distance import DistanceKind
from .errors import BisiftError, InvalidInputError
from .evaluation import evaluate, format_table, read_ground_truth, write_ground_truth, write_report
from .retrieval import (
    Representation,
    RetrievalConfig,
    build_manifest,
    first_stage_rank,
    load_index,
    query,
    read_rank_lists,
    rerank_top_x,
    write_rank_lists,
)
from .storage import (
    load_descriptors,
    load_vecs,
    load_vocabulary,
    save_descriptors,
    save_vocabulary,
    write_manifest,
)
from .synthbench import (
    CONFIGURATIONS,
    CorpusConfig,
    PlantedCorpus,
    SynthConfig,
    compare_configurations,
    gain_curves,
    gen_planted_corpus,
    gen_synth_descriptors,
    run_timing,
    write_comparison,
    write_gain_curves,
    write_timing,
)
from .vocabulary import build_histogram, train_kmeans

logger = logging.getLogger(__name__)

LOG_LEVELS = list(get_args(LogLevel))


class RunConfig(BaseModel):
    """Validated parameters of one command invocation."""

    command: str
    inputs: List[Path] = Field(default_factory=list)
    output: Optional[Path] = None
    k: int = Field(default=settings.vocabulary_size, ge=1)
    top_x: int = Field(default=settings.top_x, ge=1)
    ratio: float = Field(default=settings.ratio, gt=0.0, le=1.0)
    kind: Optional[DistanceKind] = None
    seed: int = Field(default=settings.seed, ge=0)
    cutoffs: Tuple[int, ...] = settings.cutoffs
    workers: int = Field(default=settings.workers, ge=1)

    @field_validator("inputs")
    @classmethod
    def inputs_exist(cls, v: List[Path]) -> List[Path]:
        for path in v:
            if not path.is_file():
                raise ValueError(f"Input file not found: {path}")
        return v

    @field_validator("output")
    @classmethod
    def output_dir_exists(cls, v: Optional[Path]) -> Optional[Path]:
        if v is not None and not v.parent.is_dir():
            raise ValueError(f"Output directory does not exist: {v.parent}")
        return v

    @field_validator("cutoffs")
    @classmethod
    def cutoffs_positive(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v or any(k < 1 for k in v):
            raise ValueError(f"Cutoffs must be positive integers, got: {v}")
        return v

    @model_validator(mode="after")
    def output_not_input(self) -> "RunConfig":
        if self.output is not None and any(self.output.resolve() == p.resolve() for p in self.inputs):
            raise ValueError(f"Output {self.output} would overwrite an input file")
        return self


def _int_list(text: str) -> Tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from e


def _kind_list(text: str) -> Tuple[DistanceKind, ...]:
    try:
        return tuple(DistanceKind(part.strip()) for part in text.split(",") if part.strip())
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def _run_config(args: argparse.Namespace, inputs: Sequence[Path], output: Optional[Path] = None) -> RunConfig:
    values = {
        name: getattr(args, name)
        for name in ("k", "top_x", "ratio", "kind", "seed", "cutoffs", "workers")
        if getattr(args, name, None) is not None
    }
    return RunConfig(command=args.command, inputs=list(inputs), output=output, **values)


def cmd_binarize(args: argparse.Namespace) -> None:
    run = _run_config(args, [args.input], args.output)
    sets = load_descriptors(run.inputs[0])
    binary = [binarize_set(s, args.scheme) for s in sets]
    save_descriptors(run.output, binary, DescriptorType.BINARY128)


def cmd_import_vecs(args: argparse.Namespace) -> None:
    run = _run_config(args, [args.input], args.output)
    save_descriptors(run.output, [load_vecs(run.inputs[0], args.image_id)])


def cmd_train_vocab(args: argparse.Namespace) -> None:
    run = _run_config(args, args.inputs, args.output)
    pool = [s for path in run.inputs for s in load_descriptors(path)]
    vocabulary = train_kmeans(
        pool,
        run.k,
        max_iters=args.max_iters,
        seed=run.seed,
        sample_cap=args.sample_cap,
        workers=run.workers,
    )
    save_vocabulary(run.output, vocabulary)


def cmd_index(args: argparse.Namespace) -> None:
    run = _run_config(args, list(args.inputs) + [args.vocab], args.output)
    # Fail before writing anything if the vocabulary is unreadable.
    load_vocabulary(args.vocab)
    manifest = build_manifest(args.inputs, args.vocab, args.representation)
    write_manifest(run.output, manifest)
    logger.info(f"Indexed {len(manifest.entries)} image(s) into {run.output}")


def _retrieval_config(run: RunConfig, representation: Representation) -> RetrievalConfig:
    kind = run.kind
    if kind is None and representation is not Representation.SIFT:
        kind = settings.distance_kind
    return RetrievalConfig(
        top_x=run.top_x, ratio=run.ratio, representation=representation, kind=kind, workers=run.workers
    )


def cmd_query(args: argparse.Namespace) -> None:
    run = _run_config(args, [args.index, args.queries], args.output)
    index = load_index(args.index)
    queries = load_descriptors(args.queries)
    if args.no_rerank:
        lists = [first_stage_rank(build_histogram(raw, index.vocabulary), index) for raw in queries]
    else:
        config = _retrieval_config(run, index.representation)
        lists = [query(raw, index, config) for raw in queries]
    write_rank_lists(run.output, lists)


def cmd_rerank(args: argparse.Namespace) -> None:
    run = _run_config(args, [args.index, args.queries, args.results], args.output)
    index = load_index(args.index)
    config = _retrieval_config(run, index.representation)
    raw_by_id: Dict[str, DescriptorSet] = {raw.image_id: raw for raw in load_descriptors(args.queries)}
    lists = []
    for first in read_rank_lists(args.results):
        raw = raw_by_id.get(first.query_id)
        if raw is None:
            raise InvalidInputError(f"No descriptors for query {first.query_id!r} in {args.queries}")
        lists.append(
            rerank_top_x(
                first,
                index.representation.represent(raw),
                index,
                top_x=config.top_x,
                ratio=config.ratio,
                kind=config.kind,
                workers=config.workers,
            )
        )
    write_rank_lists(run.output, lists)


def cmd_eval(args: argparse.Namespace) -> None:
    run = _run_config(args, [args.results, args.ground_truth], args.output)
    report = evaluate(read_rank_lists(args.results), read_ground_truth(args.ground_truth), run.cutoffs)
    write_report(run.output, report)
    if args.table_out is not None:
        args.table_out.write_text(format_table(report), encoding="utf-8")


def cmd_bench(args: argparse.Namespace) -> None:
    run = _run_config(args, [], args.output)
    cfg = SynthConfig(
        sizes=args.sizes,
        queries=args.queries,
        repeats=args.repeats,
        seed=run.seed,
        kinds=args.kinds,
    )
    report = run_timing(cfg)
    write_timing(run.output, report)
    if args.gain_out is not None:
        write_gain_curves(args.gain_out, gain_curves(report))


def cmd_gen_synth(args: argparse.Namespace) -> None:
    run = _run_config(args, [])
    args.out_dir.mkdir(parents=True, exist_ok=True)
    synth = gen_synth_descriptors(args.count, run.seed)
    save_descriptors(args.out_dir / "synth-float.bsft", [DescriptorSet("synth", synth.float_values)])
    save_descriptors(args.out_dir / "synth-int.bsft", [DescriptorSet("synth", synth.int_values)])
    save_descriptors(
        args.out_dir / "synth-bisift.bsft",
        [DescriptorSet("synth", synth.fingerprints, scheme=Scheme.BISIFT)],
    )


def _corpus_config(args: argparse.Namespace, run: RunConfig) -> CorpusConfig:
    return CorpusConfig(
        base_images=args.base_images,
        queries=args.queries,
        copies_per_query=args.copies,
        keypoints=args.keypoints,
        noise_sigma=args.noise,
        dropout=args.dropout,
        distractor_rate=args.distractors,
        seed=run.seed,
        workers=run.workers,
    )


def cmd_gen_corpus(args: argparse.Namespace) -> None:
    run = _run_config(args, [])
    corpus = gen_planted_corpus(_corpus_config(args, run))
    args.out_dir.mkdir(parents=True, exist_ok=True)
    save_descriptors(args.out_dir / "database.bsft", corpus.database)
    save_descriptors(args.out_dir / "queries.bsft", corpus.queries)
    write_ground_truth(args.out_dir / "ground_truth.tsv", corpus.ground_truth)


def cmd_compare(args: argparse.Namespace) -> None:
    run = _run_config(args, [args.database, args.queries, args.ground_truth, args.vocab], args.output)
    corpus = PlantedCorpus(
        database=load_descriptors(args.database),
        queries=load_descriptors(args.queries),
        ground_truth=read_ground_truth(args.ground_truth),
    )
    report = compare_configurations(
        corpus,
        load_vocabulary(args.vocab),
        top_x=run.top_x,
        ratio=run.ratio,
        workers=run.workers,
        configurations=args.configurations,
    )
    write_comparison(run.output, report)


def _add_matching_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--top-x", type=int, help=f"Candidates to re-rank (default {settings.top_x})")
    parser.add_argument("--ratio", type=float, help=f"Ratio-test threshold S (default {settings.ratio})")
    parser.add_argument(
        "--kind",
        choices=[kind.value for kind in DistanceKind],
        help="Distance kernel (default depends on the index representation)",
    )
    parser.add_argument("--workers", type=int, help=f"Worker threads (default {settings.workers})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bisift", description="BiSIFT image copy retrieval")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--log-level",
        type=str.upper,
        choices=LOG_LEVELS,
        default=settings.log_level,
        help="Logging level (default %(default)s)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("binarize", help="Binarize a raw descriptor file")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--scheme", choices=[scheme.value for scheme in Scheme], default=Scheme.BISIFT.value)
    p.set_defaults(handler=cmd_binarize)

    p = sub.add_parser("import-vecs", help="Convert a .fvecs/.bvecs file into a descriptor file")
    p.add_argument("input", type=Path)
    p.add_argument("output", type=Path)
    p.add_argument("--image-id", help="Image id (default: the input file stem)")
    p.set_defaults(handler=cmd_import_vecs)

    p = sub.add_parser("train-vocab", help="Learn a visual vocabulary with k-means")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--k", type=int, help=f"Vocabulary size (default {settings.vocabulary_size})")
    p.add_argument("--max-iters", type=int, default=settings.kmeans_max_iters)
    p.add_argument("--sample-cap", type=int, default=settings.kmeans_sample_cap)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_train_vocab)

    p = sub.add_parser("index", help="Write an index manifest over raw descriptor files")
    p.add_argument("inputs", type=Path, nargs="+")
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument(
        "--representation",
        choices=[rep.value for rep in Representation],
        default=settings.representation.value,
    )
    p.set_defaults(handler=cmd_index)

    p = sub.add_parser("query", help="Rank the index for every image of a query file")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--no-rerank", action="store_true", help="Emit the first-stage ranking only")
    _add_matching_flags(p)
    p.set_defaults(handler=cmd_query)

    p = sub.add_parser("rerank", help="Re-rank existing rank lists by keypoint matching")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    _add_matching_flags(p)
    p.set_defaults(handler=cmd_rerank)

    p = sub.add_parser("eval", help="Compute precision, recall and mAP")
    p.add_argument("--results", type=Path, required=True)
    p.add_argument("--ground-truth", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--cutoffs", type=_int_list, help="Comma-separated rank cutoffs")
    p.add_argument("--table-out", type=Path, help="Also write a human-readable table")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("bench", help="Time nearest-neighbor search over synthetic descriptors")
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument("--sizes", type=_int_list, default=settings.bench_sizes)
    p.add_argument("--queries", type=int, default=settings.bench_queries)
    p.add_argument("--repeats", type=int, default=settings.bench_repeats)
    p.add_argument("--kinds", type=_kind_list, default=tuple(DistanceKind))
    p.add_argument("--seed", type=int)
    p.add_argument("--gain-out", type=Path, help="Also write pairwise gain curves")
    p.set_defaults(handler=cmd_bench)

    p = sub.add_parser("gen-synth", help="Generate uniform random descriptors")
    p.add_argument("count", type=int)
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_gen_synth)

    p = sub.add_parser("gen-corpus", help="Generate a planted near-duplicate corpus")
    p.add_argument("--out-dir", type=Path, required=True)
    p.add_argument("--base-images", type=int, default=settings.corpus_base_images)
    p.add_argument("--queries", type=int, default=settings.corpus_queries)
    p.add_argument("--copies", type=int, default=settings.corpus_copies_per_query)
    p.add_argument("--keypoints", type=int, default=settings.corpus_keypoints)
    p.add_argument("--noise", type=float, default=settings.corpus_noise_sigma)
    p.add_argument("--dropout", type=float, default=settings.corpus_dropout)
    p.add_argument("--distractors", type=float, default=settings.corpus_distractor_rate)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(handler=cmd_gen_corpus)

    p = sub.add_parser("compare", help="Compare retrieval configurations on a corpus")
    p.add_argument("--database", type=Path, required=True)
    p.add_argument("--queries", type=Path, required=True)
    p.add_argument("--ground-truth", type=Path, required=True)
    p.add_argument("--vocab", type=Path, required=True)
    p.add_argument("--out", dest="output", type=Path, required=True)
    p.add_argument(
        "--configurations",
        type=lambda text: [part for part in text.split(",") if part],
        help=f"Subset of {','.join(name for name, _, _ in CONFIGURATIONS)}",
    )
    _add_matching_flags(p)
    p.set_defaults(handler=cmd_compare)

    return parser


def _one_line(error: Exception) -> str:
    return " ".join(str(error).split())


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit status."""
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handler: Callable[[argparse.Namespace], None] = args.handler
    try:
        handler(args)
    except (BisiftError, ValidationError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"bisift: error: {_one_line(e)}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: gen-data, gen-supports, analyze, export-icl,
permute, paraphrase, plus serve-oracle (the line-protocol solver server).

Every generating command takes a mandatory --seed and writes a manifest
(config digest, seed, library version, output digests) next to its outputs,
so reruns are byte-comparable. Exit codes: 0 success, 2 usage, 3 data error,
4 external-service error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import (
    Dataset,
    DatasetConfig,
    Example,
    Split,
    TEST_SPLITS,
    export_dataset,
    export_icl_records,
    generate_dataset,
    import_dataset,
    parse_target_string,
)
from .engines import (
    ExternalSolver,
    OracleSolver,
    Support,
    SupportSet,
    build_covr_retriever,
    build_gandr_retriever,
    build_instruction_index,
    covr_supports,
    demogen_supports,
    gandr_supports,
    heuristic_supports,
    other_states_supports,
    random_supports,
    serve_solver,
)
from .errors import (
    DataFormatError,
    ExternalServiceError,
    ProtocolError,
    SolverTimeout,
    SupportgenError,
)
from .grammar import realize
from .instruction_model import fit as fit_instruction_model
from .metrics import (
    NAMED_PATTERNS,
    nn_profile,
    pattern_frequency,
    support_criteria,
    validity_correctness,
    zipf_fit,
)
from .world import WorldState

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_EXTERNAL = 4

STRATEGY_ALIASES = {
    "demogen": "demogen", "dg": "demogen",
    "covr": "covr", "cr": "covr",
    "gandr": "gandr", "gr": "gandr",
    "heuristic": "heuristic",
    "random": "random", "rd": "random", "rand-instrs": "random",
    "other-states": "other_states", "other_states": "other_states", "os": "other_states",
}


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            digest.update(block)
    return digest.hexdigest()


def write_manifest(command: str, config: dict, seed: int | None,
                   outputs: list[Path], manifest_path: Path) -> dict:
    config_digest = hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()
    manifest = {
        "command": command,
        "config": config,
        "config_digest": config_digest,
        "seed": seed,
        "version": __version__,
        "outputs": {out.name: _sha256(out) for out in outputs},
    }
    manifest_path.write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    return manifest


def _parse_object_range(spec: str) -> tuple[int, int]:
    try:
        if ".." in spec:
            lo, hi = spec.split("..", 1)
            return int(lo), int(hi)
        value = int(spec)
        return value, value
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad object range {spec!r}, expected e.g. 3..10")


def _parse_split_list(spec: str) -> list[Split]:
    if spec == "all":
        return [Split.TRAIN, *TEST_SPLITS]
    out = []
    for part in spec.split(","):
        part = part.strip().lower()
        if not part:
            continue
        try:
            out.append(Split(part))
        except ValueError:
            raise argparse.ArgumentTypeError(f"unknown split {part!r}")
    return out


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(args: argparse.Namespace) -> int:
    lo, hi = args.objects
    split_counts = {s: args.per_split for s in TEST_SPLITS}
    for part in (args.split_counts or "").split(","):
        if part.strip():
            name, _, count = part.partition("=")
            split_counts[Split(name.strip().lower())] = int(count)
    config = DatasetConfig(
        seed=args.seed,
        train_count=args.train,
        split_counts=split_counts,
        grid_size=args.grid,
        min_objects=lo,
        max_objects=hi,
    )
    dataset = generate_dataset(config)
    out = Path(args.out)
    export_dataset(dataset, out)
    write_manifest("gen-data", config.to_dict(), args.seed, [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    counts = {s.value: len(dataset.split(s)) for s in (Split.TRAIN, *TEST_SPLITS)}
    print(f"wrote {len(dataset)} examples to {out} {json.dumps(counts, sort_keys=True)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen-supports
# ---------------------------------------------------------------------------

def _support_to_record(support: Support) -> dict:
    rec = support.state.to_record()
    rec["command"] = ",".join(realize(support.instruction))
    rec["target"] = ",".join(a.name for a in support.actions) if support.actions is not None else None
    rec["valid"] = support.actions is not None
    if "score" in support.meta:
        rec["score"] = round(float(support.meta["score"]), 9)
    return rec


def read_support_file(path: str | Path) -> list[tuple[Example, SupportSet]]:
    from .grammar import parse_command_string as _parse_cmd

    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                query = Example.from_record(rec["query"])
                supports = []
                for srec in rec["supports"]:
                    actions = (parse_target_string(srec["target"])
                               if srec.get("target") is not None else None)
                    supports.append(Support(
                        state=WorldState.from_record(srec),
                        instruction=_parse_cmd(srec["command"]),
                        actions=actions,
                        meta={k: srec[k] for k in ("score", "valid") if k in srec},
                    ))
                out.append((query, SupportSet(strategy=rec.get("strategy", "?"),
                                              supports=supports)))
            except (KeyError, ValueError, TypeError, DataFormatError) as exc:
                raise DataFormatError(f"line {lineno}: {exc}") from None
    return out


def cmd_gen_supports(args: argparse.Namespace) -> int:
    strategy = STRATEGY_ALIASES.get(args.strategy.lower())
    if strategy is None:
        raise DataFormatError(f"unknown strategy {args.strategy!r}")
    dataset = import_dataset(args.data)
    train = dataset.split(Split.TRAIN)
    wanted = set(_parse_split_list(args.splits))
    queries = [ex for ex in dataset.examples if ex.split in wanted]
    if args.limit is not None:
        by_split: dict[Split, int] = {}
        filtered = []
        for ex in queries:
            if by_split.get(ex.split, 0) < args.limit:
                by_split[ex.split] = by_split.get(ex.split, 0) + 1
                filtered.append(ex)
        queries = filtered

    solver = OracleSolver()
    external = None
    if args.solver == "external":
        if not args.solver_cmd:
            raise DataFormatError("--solver external requires --solver-cmd")
        external = ExternalSolver(args.solver_cmd.split(), timeout=args.solver_timeout)
        solver = external

    model = None
    covr = None
    gandr = None
    train_index = None
    if strategy == "demogen":
        if args.model_file and Path(args.model_file).exists():
            from .instruction_model import InstructionModel

            model = InstructionModel.load(args.model_file)
        else:
            if not train:
                raise DataFormatError("demogen needs a train split in the data file")
            model = fit_instruction_model(ex.instruction for ex in train)
            if args.model_file:
                model.save(args.model_file)
    elif strategy == "covr":
        covr = build_covr_retriever(train, cells=args.cells, pca_dim=args.pca_dim,
                                    alpha=args.alpha if args.alpha is not None else 0.125,
                                    rng=args.seed)
    elif strategy == "gandr":
        gandr = build_gandr_retriever(train, cells=args.cells,
                                      alpha=args.alpha if args.alpha is not None else 0.5,
                                      rng=args.seed)
    elif strategy == "other_states":
        train_index = build_instruction_index(train)

    def run_one(item: tuple[int, Example]) -> dict:
        idx, query = item
        rng = np.random.default_rng([args.seed, idx])
        if strategy == "heuristic":
            sset = heuristic_supports(query, solver, n=args.n)
        elif strategy == "random":
            sset = random_supports(query, solver, rng, n=args.n)
        elif strategy == "other_states":
            sset = other_states_supports(query, train_index, rng, n=args.n)
        elif strategy == "demogen":
            sset = demogen_supports(query, model, solver, rng, k=args.k, n=args.n,
                                    mask_rate=args.mask_rate,
                                    keep_invalid=not args.replace_invalid)
        elif strategy == "covr":
            sset = covr_supports(query, covr, n=args.n, probes=args.probes)
        else:
            sset = gandr_supports(query, solver if external is None else external,
                                  gandr, n=args.n, probes=args.probes)
        return {
            "query": query.to_record(),
            "strategy": sset.strategy,
            "supports": [_support_to_record(s) for s in sset.supports],
        }

    items = list(enumerate(queries))
    if args.workers > 1:
        with ThreadPoolExecutor(max_workers=args.workers) as pool:
            records = list(pool.map(run_one, items))
    else:
        records = [run_one(item) for item in items]
    if external is not None:
        external.close()

    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")
    config = {
        "strategy": strategy, "n": args.n, "k": args.k, "mask_rate": args.mask_rate,
        "alpha": args.alpha, "cells": args.cells, "probes": args.probes,
        "splits": sorted(s.value for s in wanted), "limit": args.limit,
        "solver": args.solver, "data": Path(args.data).name,
    }
    write_manifest("gen-supports", config, args.seed, [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote supports for {len(records)} queries to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze
# ---------------------------------------------------------------------------

def cmd_analyze(args: argparse.Namespace) -> int:
    report: dict = {}
    if args.criteria or args.validity:
        if not args.supports:
            raise DataFormatError("--criteria/--validity need --supports FILE")
        pairs = read_support_file(args.supports)
        if args.criteria:
            crit = support_criteria(pairs)
            report["criteria"] = {name: round(value, 6) for name, value in crit.as_row_list()}
            report["criteria"]["queries"] = crit.queries
            report["criteria"]["supports"] = crit.supports
            for name, value in crit.as_row_list():
                print(f"{name:24s} {value:.2f}")
        if args.validity:
            flat = [s for _, sset in pairs for s in sset.supports]
            rep = validity_correctness(flat, OracleSolver())
            report["validity"] = {
                "valid": round(rep.valid, 6), "correct": round(rep.correct, 6),
                "correct_and_valid": round(rep.correct_and_valid, 6),
                "correct_given_valid": round(rep.correct_given_valid, 6),
                "total": rep.total,
            }
            print(f"valid {rep.valid:.2f}  correct {rep.correct:.2f}  "
                  f"C&V {rep.correct_and_valid:.2f}  C|V {rep.correct_given_valid:.2f}")

    dataset: Dataset | None = None
    if args.nn_profile or args.pattern or args.zipf_commands:
        if not args.data:
            raise DataFormatError("this metric needs --data FILE")
        dataset = import_dataset(args.data)

    if args.nn_profile:
        train_states = [ex.state for ex in dataset.split(Split.TRAIN)]
        split_states = [ex.state for ex in dataset.split(Split(args.split))]
        ranks = [int(r) for r in args.ranks.split(",") if r]
        profile = nn_profile(split_states, train_states, ranks=ranks,
                             sample=args.sample, rng=args.seed or 0)
        report["nn_profile"] = {str(r): round(v, 6) for r, v in profile}
        print("rank " + " ".join(f"{r}:{v:.3f}" for r, v in profile))

    if args.pattern:
        split = Split(args.split)
        sequences = [[int(a) for a in ex.actions] for ex in dataset.split(split)]
        rep = pattern_frequency(sequences, args.pattern,
                                over_permutations=args.permutations)
        report.setdefault("pattern", {})[args.pattern] = {
            "fraction": rep.fraction, "matched": rep.matched, "total": rep.total,
            "over_permutations": rep.over_permutations,
        }
        print(f"pattern {args.pattern!r} on split {split.value}: "
              f"{rep.matched}/{rep.total} = {rep.fraction:.6f}"
              f"{' (any permutation)' if rep.over_permutations else ''}")

    corpus_tokens: list[str] | None = None
    if args.zipf:
        corpus_tokens = Path(args.zipf).read_text(encoding="utf-8").split()
    elif args.zipf_commands:
        corpus_tokens = []
        for ex in dataset.examples:
            corpus_tokens.extend(t for t in ex.to_record()["command"].split(","))
    if corpus_tokens is not None:
        fit = zipf_fit(corpus_tokens)
        report["zipf"] = {"alpha": round(fit.alpha, 6), "rmse": round(fit.rmse, 6),
                          "vocabulary": fit.vocabulary, "tokens": fit.tokens}
        print(f"zipf alpha {fit.alpha:.3f} rmse {fit.rmse:.4f} "
              f"vocab {fit.vocabulary} tokens {fit.tokens}")

    if not report:
        raise DataFormatError("no metric requested")
    if args.out:
        Path(args.out).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n",
                                  encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# export-icl / permute
# ---------------------------------------------------------------------------

def cmd_export_icl(args: argparse.Namespace) -> int:
    pairs = read_support_file(args.supports)
    entries = ((query, [s.triple() for s in sset.supports]) for query, sset in pairs)
    out = Path(args.out)
    count = 0
    with open(out, "w", encoding="utf-8") as fh:
        for record in export_icl_records(entries, policy=args.policy, seed=args.seed,
                                         permute_words=args.permute_words):
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            count += 1
    config = {"policy": args.policy, "permute_words": args.permute_words,
              "supports": Path(args.supports).name}
    write_manifest("export-icl", config, args.seed, [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {count} icl records to {out}")
    return EXIT_OK


def cmd_permute(args: argparse.Namespace) -> int:
    from .permuter import sample_permutation, apply as apply_permutation
    from .world import ACTION_TABLE_SIZE

    dataset = import_dataset(args.data)
    out = Path(args.out)
    with open(out, "w", encoding="utf-8") as fh:
        for idx, ex in enumerate(dataset.examples):
            perm = sample_permutation(np.random.default_rng([args.seed, idx]),
                                      ACTION_TABLE_SIZE)
            codes = [int(a) for a in ex.actions]
            fh.write(json.dumps({
                "target_codes": codes,
                "permuted_codes": list(apply_permutation(perm, codes)),
                "permutation": perm.to_codes(),
                "split": ex.split.value,
            }, sort_keys=True, separators=(",", ":")) + "\n")
    write_manifest("permute", {"data": Path(args.data).name}, args.seed, [out],
                   out.with_suffix(out.suffix + ".manifest.json"))
    print(f"wrote {len(dataset)} permuted records to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# paraphrase / serve-oracle
# ---------------------------------------------------------------------------

def cmd_paraphrase(args: argparse.Namespace) -> int:
    from .paraphrase import HttpTransport, ParaphraseClient, build_prompt

    queries = []
    if args.query:
        queries.append(args.query)
    if args.input:
        queries.extend(line.strip() for line in
                       Path(args.input).read_text(encoding="utf-8").splitlines()
                       if line.strip())
    if not queries:
        raise DataFormatError("paraphrase needs --query or --input")

    if args.dry_run:
        out_dir = Path(args.out or "prompts")
        out_dir.mkdir(parents=True, exist_ok=True)
        for i, query in enumerate(queries):
            prompt = build_prompt(args.mode, query, template_mode=args.template)
            (out_dir / f"prompt_{i:05d}.txt").write_text(prompt, encoding="utf-8")
        print(f"wrote {len(queries)} prompts to {out_dir}")
        return EXIT_OK

    client = ParaphraseClient(HttpTransport(), cache_path=args.cache,
                              max_workers=args.workers)
    records = client.paraphrase_many(args.mode, queries, template_mode=args.template)
    out = Path(args.out or "paraphrases.jsonl")
    with open(out, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
    retained = sum(sum(r.retained) for r in records)
    total = sum(len(r.retained) for r in records)
    print(f"wrote {len(records)} records to {out}; retention {retained}/{total}")
    return EXIT_OK


def cmd_serve_oracle(args: argparse.Namespace) -> int:
    serve_solver(OracleSolver(), sys.stdin, sys.stdout)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="supportgen",
        description="Grid-world instruction dataset and support-set toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset with compositional splits")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--train", type=int, default=50_000)
    p.add_argument("--per-split", type=int, default=2_000)
    p.add_argument("--split-counts", default="",
                   help="override per-split counts, e.g. 'h=100,c=50'")
    p.add_argument("--grid", type=int, default=6)
    p.add_argument("--objects", type=_parse_object_range, default=(3, 10),
                   help="object count range, e.g. 3..10")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("gen-supports", help="attach support sets to dataset examples")
    p.add_argument("--data", required=True)
    p.add_argument("--strategy", required=True,
                   help="demogen|covr|gandr|heuristic|random|other-states (or DG/CR/GR/RD/OS)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--splits", default="all", help="comma list of splits or 'all'")
    p.add_argument("--limit", type=int, default=None, help="max queries per split")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--k", type=int, default=2048)
    p.add_argument("--mask-rate", type=float, default=0.2)
    p.add_argument("--alpha", type=float, default=None,
                   help="hybrid weight (covr default 0.125, gandr default 0.5)")
    p.add_argument("--cells", type=int, default=512)
    p.add_argument("--probes", type=int, default=10)
    p.add_argument("--pca-dim", type=int, default=320)
    p.add_argument("--solver", choices=("oracle", "external"), default="oracle")
    p.add_argument("--solver-cmd", default=None)
    p.add_argument("--solver-timeout", type=float, default=30.0)
    p.add_argument("--model-file", default=None,
                   help="count-table file: loaded if present, else fit and saved")
    p.add_argument("--replace-invalid", action="store_true",
                   help="replace unsolvable demogen candidates instead of keeping them")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_gen_supports)

    p = sub.add_parser("analyze", help="run metrics over datasets or support files")
    p.add_argument("--data", default=None)
    p.add_argument("--supports", default=None)
    p.add_argument("--criteria", action="store_true")
    p.add_argument("--validity", action="store_true")
    p.add_argument("--nn-profile", action="store_true")
    p.add_argument("--ranks", default="1,2,4,8,16,32,64,128,256,512,1024,2048,4096,8192")
    p.add_argument("--sample", type=int, default=1000)
    p.add_argument("--split", default="h")
    p.add_argument("--pattern", default=None,
                   help=f"named pattern ({', '.join(NAMED_PATTERNS)}) or expression")
    p.add_argument("--permutations", action="store_true")
    p.add_argument("--zipf", default=None, help="token corpus file")
    p.add_argument("--zipf-commands", action="store_true",
                   help="fit the zipf law on the dataset's command tokens")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("export-icl", help="serialize (supports, query) records")
    p.add_argument("--supports", required=True)
    p.add_argument("--policy", choices=("permute", "identity"), default="permute")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--permute-words", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_icl)

    p = sub.add_parser("permute", help="relabel dataset targets per record")
    p.add_argument("--data", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_permute)

    p = sub.add_parser("paraphrase", help="build prompts / call a paraphrase endpoint")
    p.add_argument("--mode", default="simple",
                   choices=("simple", "adverb", "relational", "reascan-style"))
    p.add_argument("--query", default=None)
    p.add_argument("--input", default=None)
    p.add_argument("--template", action="store_true")
    p.add_argument("--dry-run", action="store_true")
    p.add_argument("--cache", default=None)
    p.add_argument("--workers", type=int, default=4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_paraphrase)

    p = sub.add_parser("serve-oracle", help="serve the oracle over the line protocol")
    p.set_defaults(func=cmd_serve_oracle)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ExternalServiceError, ProtocolError, SolverTimeout) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_EXTERNAL
    except (SupportgenError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

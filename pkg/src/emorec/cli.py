"""``emorec`` command line: ingest, emotion, train, evaluate, compare, viz.

Every artifact-producing subcommand writes its outputs plus a
``manifest.json`` (flags, seeds, input digests, output digests) into
``--out``.  Exit codes: 0 ok, 1 I/O error, 2 validation/config error,
3 numerical failure.
"""

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .emotion import RANK_MODES, build_emotion_matrix, rank_emotional_items, write_es_csv, write_ranking_csv
from .errors import ConfigError, EmorecError, NumericalError
from .evaluation import (ALGORITHMS, ComparisonError, degree_of_matthew_effect, mae, run_comparison,
                         write_comparison_csv, write_comparison_jsonl, EvalReport)
from .factorization import TrainConfig, load_model, save_model, train_emf, train_mf
from .ingest import ColumnSpec, SplitSpec, parse_csv_ratings, parse_movielens, split, subsample, write_triples_csv
from .item_stats import PopularityThresholds, classify, compute_item_stats, write_stats_csv
from .render import COLORMAPS, RasterSpec, emit_comparison_plot_data, render_heatmap
from .seeding import sub_seed

logger = logging.getLogger("emorec")

EXIT_OK, EXIT_IO, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(args, out_dir, inputs, outputs, seeds):
    manifest = {
        "subcommand": args.command,
        "flags": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "command")},
        "seeds": seeds,
        "inputs": {str(p): _sha256(p) for p in inputs if p},
        "outputs": {Path(p).name: _sha256(p) for p in outputs},
        "tool_version": __version__,
    }
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _load(args):
    if args.format == "movielens":
        dataset, catalog = parse_movielens(args.ratings, args.movies)
    else:
        columns = ColumnSpec(args.user_col, args.item_col, args.rating_col,
                             args.max_rating, args.delimiter.encode().decode("unicode_escape"))
        dataset, catalog = parse_csv_ratings(args.ratings, columns), None
    if getattr(args, "subsample", None):
        dataset = subsample(dataset, args.subsample, sub_seed(args.seed, "subsample"))
        catalog = None
    return dataset, catalog


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _thresholds(args):
    return PopularityThresholds(args.score_quantile, args.count_quantile)


def _train_config(args, emotion_weight=None):
    return TrainConfig(dim=args.dim, learning_rate=args.lr,
                       emotion_weight=args.lam if emotion_weight is None else emotion_weight,
                       epochs=args.epochs, seed=args.seed, cosine_floor=args.cosine_floor)


def _split(args, dataset):
    return split(dataset, SplitSpec(args.test_fraction, sub_seed(args.seed, "split")))


def _seeds(args):
    return {"master": args.seed,
            **{name: sub_seed(args.seed, name) for name in ("split", "subsample", "random")}}


def cmd_ingest(args):
    dataset, _ = _load(args)
    out = _out_dir(args)
    triples = out / "triples.csv"
    write_triples_csv(dataset, triples)
    _write_manifest(args, out, [args.ratings, args.movies], [triples], _seeds(args))
    logger.info("wrote %d triples (%d users, %d items) to %s",
                len(dataset), dataset.n_users, dataset.n_items, triples)
    if dataset.duplicates_dropped:
        logger.warning("%d duplicate ratings were dropped", dataset.duplicates_dropped)


def cmd_emotion(args):
    if args.top <= 0:
        raise ConfigError(f"--top must be positive, got {args.top}")
    dataset, catalog = _load(args)
    stats = classify(compute_item_stats(dataset), _thresholds(args))
    matrix = build_emotion_matrix(dataset, stats)
    ranking = rank_emotional_items(matrix, catalog, args.top, by=args.rank_by)
    out = _out_dir(args)
    paths = [out / "es.csv", out / "ranking.csv", out / "item_stats.csv"]
    write_es_csv(matrix, paths[0])
    write_ranking_csv(ranking, paths[1])
    write_stats_csv(stats, dataset.item_ids, paths[2])
    _write_manifest(args, out, [args.ratings, args.movies], paths, _seeds(args))
    for pos, item in enumerate(ranking, 1):
        logger.info("%2d. %s (%s) %.4f", pos, item.title or item.item_id, item.year, item.mean_es)


def cmd_train(args):
    dataset, _ = _load(args)
    train, _ = _split(args, dataset)
    if args.algo == "mf":
        model = train_mf(train, _train_config(args, 0.0))
    else:
        stats = classify(compute_item_stats(train), _thresholds(args))
        model = train_emf(train, stats, _train_config(args))
    out = _out_dir(args)
    path = out / "model.bin"
    save_model(model, path)
    _write_manifest(args, out, [args.ratings], [path], _seeds(args))
    logger.info("final training loss %.6f", model.history[-1])


def cmd_evaluate(args):
    dataset, _ = _load(args)
    train, test = _split(args, dataset)
    model = load_model(args.model)
    if (model.n_users, model.n_items) != (train.n_users, train.n_items):
        raise ConfigError("model shape does not match the dataset")
    users = test.user_idx if args.dme_users == "test" else range(train.n_users)
    report = EvalReport(args.label, mae(model, test),
                        degree_of_matthew_effect(model, users, train, args.top_k),
                        args.top_k, args.seed, args.dataset_id, model.config.emotion_weight,
                        json.dumps(model.config.to_dict(), sort_keys=True))
    out = _out_dir(args)
    paths = [out / "report.csv", out / "report.jsonl"]
    write_comparison_csv([report], paths[0])
    write_comparison_jsonl([report], paths[1])
    _write_manifest(args, out, [args.ratings, args.model], paths, _seeds(args))
    logger.info("MAE %.4f DME %.4f", report.mae, report.dme)


def cmd_compare(args):
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    grid = [float(x) for x in args.lambda_grid.split(",")] if args.lambda_grid else None
    dataset, _ = _load(args)
    train, test = _split(args, dataset)
    failure = None
    try:
        reports = run_comparison(train, test, algos, _train_config(args), args.top_k, grid,
                                 _thresholds(args), args.dataset_id, args.dme_users)
    except ComparisonError as exc:
        reports, failure = exc.reports, exc
    out = _out_dir(args)
    paths = [out / "comparison.csv", out / "comparison.jsonl"]
    write_comparison_csv(reports, paths[0])
    write_comparison_jsonl(reports, paths[1])
    if reports:
        paths += [out / "comparison.svg", out / "comparison_plot.csv"]
        emit_comparison_plot_data(reports, paths[2], paths[3])
    _write_manifest(args, out, [args.ratings], paths, _seeds(args))
    if failure is not None:
        raise failure


def cmd_viz(args):
    dataset, _ = _load(args)
    stats = classify(compute_item_stats(dataset), _thresholds(args))
    matrix = build_emotion_matrix(dataset, stats)
    spec = RasterSpec(args.max_size, args.max_size, args.colormap, args.pooling,
                      args.remap_observed, args.sort_by_count)
    out = _out_dir(args)
    path = out / "heatmap.ppm"
    rgb = render_heatmap(matrix, spec, path)
    _write_manifest(args, out, [args.ratings], [path], _seeds(args))
    logger.info("wrote %dx%d heatmap to %s", rgb.shape[1], rgb.shape[0], path)


def _add_input(p):
    g = p.add_argument_group("input")
    g.add_argument("--format", choices=("movielens", "csv"), default="csv",
                   help="movielens '::' files or a delimited file with a header")
    g.add_argument("--ratings", required=True, help="ratings file")
    g.add_argument("--movies", help="MovieLens movies.dat for titles")
    g.add_argument("--user-col", default="user_id")
    g.add_argument("--item-col", default="item_id")
    g.add_argument("--rating-col", default="rating")
    g.add_argument("--delimiter", default=",", help=r"field delimiter, e.g. ',' or '\t'")
    g.add_argument("--max-rating", type=float, default=5.0)
    g.add_argument("--subsample", type=int, help="seeded subsample of this many ratings")
    p.add_argument("--seed", type=int, default=0, help="master seed for every random choice")
    p.add_argument("--out", default=".", help="output directory")


def _add_thresholds(p):
    p.add_argument("--score-quantile", type=float, default=0.5)
    p.add_argument("--count-quantile", type=float, default=0.5)


def _add_training(p):
    d = TrainConfig()
    p.add_argument("--lambda", dest="lam", type=float, default=d.emotion_weight)
    p.add_argument("--dim", type=int, default=d.dim)
    p.add_argument("--lr", type=float, default=d.learning_rate)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--cosine-floor", type=float, default=d.cosine_floor)
    p.add_argument("--test-fraction", type=float, default=0.2)
    _add_thresholds(p)


def build_parser():
    parser = argparse.ArgumentParser(prog="emorec", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"emorec {__version__}")
    parser.add_argument("--config", help="key=value file of flag defaults (flags win)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse ratings into the canonical triple CSV")
    _add_input(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("emotion", help="Emotional Scores and the most emotional items")
    _add_input(p)
    _add_thresholds(p)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--rank-by", choices=RANK_MODES, default="intensity")
    p.set_defaults(func=cmd_emotion)

    p = sub.add_parser("train", help="train MF or EMF on the train split")
    _add_input(p)
    _add_training(p)
    p.add_argument("--algo", choices=("mf", "emf"), default="emf")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="MAE and DME of a saved model")
    _add_input(p)
    p.add_argument("--model", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--dme-users", choices=("test", "all"), default="test")
    p.add_argument("--label", default="model")
    p.add_argument("--dataset-id", default="")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("compare", help="train and score several algorithms")
    _add_input(p)
    _add_training(p)
    p.add_argument("--algos", default=",".join(ALGORITHMS))
    p.add_argument("--top-k", type=int, default=10)
    p.add_argument("--lambda-grid", help="comma-separated EMF lambdas, e.g. 0,0.01,0.1")
    p.add_argument("--dme-users", choices=("test", "all"), default="test")
    p.add_argument("--dataset-id", default="")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("viz", help="render the emotion matrix as a PPM heatmap")
    _add_input(p)
    _add_thresholds(p)
    p.add_argument("--pooling", choices=("mean", "max"), default="mean")
    p.add_argument("--max-size", type=int, default=1024)
    p.add_argument("--colormap", choices=sorted(COLORMAPS), default="viridis")
    p.add_argument("--remap-observed", action="store_true",
                   help="lift observed cells to [0.05, 1] so they separate from missing ones")
    p.add_argument("--sort-by-count", action="store_true")
    p.set_defaults(func=cmd_viz)
    return parser


def _read_config(path):
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser, argv, path):
    """Install the config file's values as defaults of the chosen subcommand."""
    values = _read_config(path)
    if "lambda" in values:
        values["lam"] = values.pop("lambda")
    subparsers = parser._subparsers._group_actions[0].choices
    command = next((a for a in argv if a in subparsers), None)
    if command is None:
        return
    subparser = subparsers[command]
    known = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, raw in values.items():
        action = known.get(key)
        if action is None:
            raise ConfigError(f"{path}: unknown key {key!r} for '{command}'")
        if action.const is True:
            defaults[key] = raw.lower() in ("1", "true", "yes", "on")
        else:
            try:
                defaults[key] = action.type(raw) if action.type else raw
            except ValueError:
                raise ConfigError(f"{path}: bad value {raw!r} for {key!r}") from None
        action.required = False
    subparser.set_defaults(**defaults)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else [str(a) for a in argv]
    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s",
                        stream=sys.stderr, force=True)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    try:
        if known.config:
            _apply_config(parser, argv, known.config)
        args = parser.parse_args(argv)
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        args.func(args)
    except NumericalError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERIC
    except ComparisonError as exc:
        logger.error("%s", exc)
        numeric = any(isinstance(e, NumericalError) for _, e in exc.failures)
        return EXIT_NUMERIC if numeric else EXIT_CONFIG
    except EmorecError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

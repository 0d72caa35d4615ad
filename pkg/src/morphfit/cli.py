"""``morphfit`` command line: synth, build-model, fit, metrics, classify, evaluate.

Every output file starts with comment lines naming the tool version, an
optional UTC timestamp (``--no-timestamp`` drops it) and the resolved
configuration. Outputs are staged in memory and written with temp+rename
only after the whole command succeeded.
"""

import argparse
import csv
import io
import json
import logging
import os
import sys

import numpy as np

from . import __version__
from . import evalharness as eh
from . import facemetrics as fm
from . import synthkit as sk
from ._io import StagedOutputs, fmt, header_lines
from .errors import MorphfitError, ParseError, ValidationError
from .meshio import (
    LandmarkTrack,
    format_landmark_csv,
    format_mapping,
    format_obj,
    load_landmark_track,
    load_mapping,
    load_mesh_dir,
)
from .morphable import build_model, format_model, load_model
from .shapefit import FitConfig, fit_track

log = logging.getLogger("morphfit")

DEFAULT_SEED = 42


class UsageError(MorphfitError):
    kind = "usage"


class MissingFileError(MorphfitError):
    kind = "missing-file"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{message}; usage: {self.format_usage().strip()}")


def _existing(path, what):
    if not os.path.exists(path):
        raise MissingFileError(f"{what} not found: {path}")
    return path


def _csv_text(rows, header):
    buf = io.StringIO()
    for line in header:
        buf.write(line + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _read_csv_rows(path):
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.lstrip().startswith("#")]
    return list(csv.reader(lines))


# --- subcommands ---------------------------------------------------------------


def cmd_synth(args, out, hdr):
    _existing(args.spec, "subject spec")
    with open(args.spec, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", args.spec, exc.lineno) from None
    if isinstance(raw, dict):
        raw = raw.get("subjects", [raw])
    specs = [sk.SubjectSpec.from_dict(d) for d in raw]
    sentences = sk.SENTENCE_IDS if args.sentences == "all" else tuple(args.sentences.split(","))
    root = args.out
    out.add(os.path.join(root, "mapping.json"), format_mapping(sk.default_mapping(), meta=hdr(prefix="")))
    for spec in specs:
        base = os.path.join(root, spec.subject_id)
        for k, mesh in enumerate(sk.generate_corpus(spec, args.poses)):
            out.add(os.path.join(base, "poses", f"pose_{k:03d}.obj"), format_obj(mesh, hdr()))
        for sid in sentences:
            track = sk.generate_track(spec, sid, args.frames)
            out.add(os.path.join(base, "tracks", f"{sid}.csv"), format_landmark_csv(track, hdr()))
        neutral = sk.neutral_landmarks(spec)
        neutral_track = LandmarkTrack.from_frames(spec.subject_id, [neutral])
        out.add(os.path.join(root, "neutral", f"{spec.subject_id}.csv"), format_landmark_csv(neutral_track, hdr()))
    log.info("event=synth subjects=%d poses=%d frames=%d", len(specs), args.poses, args.frames)


def cmd_build_model(args, out, hdr):
    _existing(args.meshes, "mesh directory")
    model = build_model(load_mesh_dir(args.meshes))
    out.add(args.out, format_model(model, hdr()))
    log.info("event=build_model sources=%d components=%d", model.source_count, model.n_components)


def _fit_config(args):
    return FitConfig(args.sigma2d, args.K, args.alternations)


def cmd_fit(args, out, hdr):
    model = load_model(_existing(args.model, "model"))
    mapping = load_mapping(_existing(args.mapping, "mapping")).validate(model.vertex_count)
    track = load_landmark_track(_existing(args.track, "landmark track"))
    config = _fit_config(args)
    K = config.resolve_K(model)
    fitted = fit_track(model, mapping, track, config)
    rows = [["frame", "residual"] + [f"alpha_{j + 1}" for j in range(K)]]
    cams = [["frame", "p11", "p12", "p13", "p14", "p21", "p22", "p23", "p24"]]
    for fr in fitted:
        if fr.ok:
            rows.append([fr.frame_index, fmt(fr.residual)] + [fmt(a) for a in fr.coeffs])
            cams.append([fr.frame_index] + [fmt(v) for v in fr.camera.matrix[:2].reshape(-1)])
        else:
            rows.append([fr.frame_index, "nan"] + ["nan"] * K)
            cams.append([fr.frame_index] + ["nan"] * 8)
    failed = sum(not fr.ok for fr in fitted)
    out.add(args.out, _csv_text(rows, hdr() + ([f"# failed_frames {failed}"] if failed else [])))
    root, _ = os.path.splitext(args.out)
    out.add(root + ".cameras.csv", _csv_text(cams, hdr()))
    log.info("event=fit frames=%d failed=%d", len(fitted), failed)


def cmd_metrics(args, out, hdr):
    schema = fm.load_schema(_existing(args.schema, "schema") if args.schema else None)
    rows = [["subject"] + list(fm.INDEX_IDS)]
    for path in args.landmarks:
        track = load_landmark_track(_existing(path, "landmark track"))
        prof = fm.profile_from_landmarks(track.frame(args.frame), schema, track.video_id)
        rows.append([prof.subject_id] + [fmt(prof[i]) for i in fm.INDEX_IDS])
    out.add(args.out, _csv_text(rows, hdr()))


def load_indices_csv(path):
    rows = _read_csv_rows(path)
    if not rows or rows[0][:1] != ["subject"]:
        raise ParseError("indices CSV must start with a 'subject,I1,...' header", path)
    head = rows[0]
    missing = [i for i in fm.INDEX_IDS if i not in head]
    if missing:
        raise ParseError(f"indices CSV lacks column {missing[0]}", path)
    profiles = []
    for lineno, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            vals = {h: float(v) for h, v in zip(head[1:], r[1:])}
        except ValueError:
            raise ParseError(f"non-numeric index in row {lineno}", path) from None
        profiles.append(fm.FacialIndexProfile(r[0], {i: vals[i] for i in fm.INDEX_IDS}))
    return profiles


def cmd_classify(args, out, hdr):
    profiles = load_indices_csv(_existing(args.indices, "indices CSV"))
    result = fm.classify_cohort(profiles, args.confidence, seed=args.seed)
    rows = [["subject", "index", "core", "band", "outlier"]]
    for p in profiles:
        for iid in fm.INDEX_IDS:
            lab = result.labels[p.subject_id][iid]
            rows.append([p.subject_id, iid, lab.core, lab.band or "", str(lab.outlier).lower()])
    out.add(args.out, _csv_text(rows, hdr()))
    if args.boundaries:
        brows = [["index", "q1", "q3", "iqr", "lower_fence", "upper_fence",
                  "q1_lo", "q1_hi", "q3_lo", "q3_hi", "low", "middle", "high"]]
        for iid, b in result.boundaries.items():
            c = result.counts(iid)
            brows.append([iid] + [fmt(v) for v in (b.q1, b.q3, b.iqr, b.lower_fence, b.upper_fence,
                                                  *b.q1_interval, *b.q3_interval)]
                         + [c["low"], c["middle"], c["high"]])
        out.add(args.boundaries, _csv_text(brows, hdr()))


def load_experiment(path):
    """Experiment from a JSON config; relative paths resolve against its directory."""
    _existing(path, "experiment config")
    base = os.path.dirname(os.path.abspath(path))
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", path, exc.lineno) from None

    def resolve(p):
        return _existing(os.path.join(base, p), "experiment input")

    try:
        sources = tuple(
            eh.Source(s["subject"], s.get("class", ""), tuple(load_landmark_track(resolve(t)) for t in s["tracks"]))
            for s in cfg["sources"]
        )
        targets = tuple(eh.Target(t["subject"], t["class"], load_model(resolve(t["model"]))) for t in cfg["targets"])
        mapping = load_mapping(resolve(cfg["mapping"]))
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"experiment config missing field {exc}") from None
    fit = cfg.get("fit", {})
    exp = eh.Experiment(
        sources,
        targets,
        mapping,
        FitConfig(float(fit.get("sigma2d", 9.0)), fit.get("K"), int(fit.get("alternations", 3))),
        cfg.get("ttest", "welch"),
    )
    out_dir = cfg.get("output_dir")
    return exp, cfg, (os.path.join(base, out_dir) if out_dir else None)


def report_files(report, hdr):
    """``{relative path: text}`` for every evaluation output."""
    files = {}
    rows = [["source", "target", "sentence", "channel", "rmse"]]
    for c in report.cells:
        for ch in eh.CHANNELS:
            rows.append([c.source, c.target, c.sentence, ch, fmt(c.rmse(ch)) if c.valid else "nan"])
    invalid = [f"# invalid {c.source} {c.target} {c.sentence}: {c.error}" for c in report.cells if not c.valid]
    files["report.csv"] = _csv_text(rows, hdr() + invalid)

    avg = [["source", "target", "target_class", "corresponding", "channel", "mean_rmse", "n_sentences"]]
    for s, t in report.pairs():
        for ch in eh.CHANNELS:
            vals = report.per_sentence(s, t, ch)
            avg.append([s, t, report.target_classes[t], str(s == t).lower(), ch,
                        fmt(float(np.mean(vals))) if vals else "nan", len(vals)])
    files["averages.csv"] = _csv_text(avg, hdr())

    prow = [["source", "comparison_class", "channel", "test", "n_corresponding", "n_other", "p"]]
    for p in report.pvalues:
        prow.append([p.source, p.comparison, p.channel, p.test, p.n_corresponding, p.n_other, fmt(p.p)])
    files["pvalues.csv"] = _csv_text(prow, hdr())

    done_sources = set()
    for c in report.valid_cells():
        if (c.source, c.sentence) not in done_sources:
            done_sources.add((c.source, c.sentence))
            files[os.path.join("trajectories", f"{c.source}__source__{c.sentence}.csv")] = _traj_csv(c.source_traj, hdr)
        files[os.path.join("trajectories", f"{c.source}__{c.target}__{c.sentence}.csv")] = _traj_csv(c.target_traj, hdr)
    return files


def _traj_csv(traj, hdr):
    rows = [["frame", "width", "height"]]
    rows += [[i, fmt(w), fmt(h)] for i, (w, h) in enumerate(zip(traj.width, traj.height))]
    return _csv_text(rows, hdr())


def cmd_evaluate(args, out, hdr):
    exp, cfg, cfg_out = load_experiment(args.config)
    out_dir = args.out or cfg_out
    if not out_dir:
        raise UsageError("evaluate needs --out or output_dir in the config")
    report = eh.run_experiment(exp)
    for rel, text in report_files(report, hdr).items():
        out.add(os.path.join(out_dir, rel), text)
    log.info("event=evaluate cells=%d invalid=%d", len(report.cells), len(report.cells) - len(report.valid_cells()))


# --- parser ----------------------------------------------------------------------


def _add_fit_args(p):
    p.add_argument("--sigma2d", type=float, default=9.0, help="landmark variance in pixels^2")
    p.add_argument("--K", type=int, default=None, help="number of components (default: all)")
    p.add_argument("--alternations", type=int, default=3)


def build_parser():
    parser = _Parser(prog="morphfit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"morphfit {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=DEFAULT_SEED)
    common.add_argument("--no-timestamp", action="store_true", help="omit the timestamp header line")
    common.add_argument("-v", "--verbose", action="store_true", help="key=value progress logging on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("synth", parents=[common], help="generate synthetic corpora and tracks")
    p.add_argument("--spec", required=True)
    p.add_argument("--poses", type=int, default=16)
    p.add_argument("--frames", type=int, default=60)
    p.add_argument("--sentences", default="all", help="comma-separated sentence ids or 'all'")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build-model", parents=[common], help="PCA model from a mesh directory")
    p.add_argument("--meshes", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_model)

    p = sub.add_parser("fit", parents=[common], help="fit a model to a landmark track")
    p.add_argument("--model", required=True)
    p.add_argument("--mapping", required=True)
    p.add_argument("--track", required=True)
    _add_fit_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("metrics", parents=[common], help="anthropometric indices per subject")
    p.add_argument("--landmarks", required=True, action="append", help="landmark CSV (repeatable)")
    p.add_argument("--schema", default=None, help="distance schema JSON (default: built-in)")
    p.add_argument("--frame", type=int, default=0, help="frame position to measure")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("classify", parents=[common], help="classify a cohort of index profiles")
    p.add_argument("--indices", required=True)
    p.add_argument("--confidence", type=float, default=0.8)
    p.add_argument("--boundaries", default=None, help="optional per-index boundaries CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("evaluate", parents=[common], help="run a mapping experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None, help="output directory (overrides the config)")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _resolved_config(args):
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "verbose", "no_timestamp")}
    for k, v in cfg.items():
        if isinstance(v, str) and k not in ("command", "sentences"):
            cfg[k] = os.path.abspath(v)
        elif isinstance(v, list):
            cfg[k] = [os.path.abspath(x) for x in v]
    cfg["MORPHFIT_THREADS"] = os.environ.get("MORPHFIT_THREADS", "1")
    return cfg


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.ERROR,
            format="level=%(levelname)s logger=%(name)s %(message)s",
            stream=sys.stderr,
            force=True,
        )
        config = _resolved_config(args)

        def hdr(prefix="# "):
            lines = header_lines(config, timestamp=not args.no_timestamp, prefix=prefix)
            return lines if prefix else {"lines": lines}

        out = StagedOutputs()
        args.func(args, out, hdr)
        out.commit()
        log.info("event=done command=%s files=%d", args.command, len(out))
        return 0
    except MorphfitError as exc:
        msg = str(exc).replace("\n", " ")
        print(f"morphfit: error kind={exc.kind} message={json.dumps(msg)}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"morphfit: error kind=io message={json.dumps(str(exc))}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line surface tying the library together for batch work:
encode/decode, compilation and export, surface sampling, heuristic
resampling, codebook training, masked-token generation, quantized-lattice
decoding, metric batteries, and the round-trip self-check.

Exit codes: 1 usage, 2 geometric compilation failure, 3 bad input data,
4 unexpected internal error. `--json` switches stdout to a single
machine-readable object. `--config file.toml` supplies defaults (flat
keys apply everywhere, `[command]` tables per command); explicit flags
win. `CADSEQ_SEED` is the seed fallback when no flag or config gives one.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import tomli

from . import canonize, discretediff, geomkernel, metrics, pointops, report, vq
from . import fixtures as fixture_lib
from .cadprog import CadProgram, parse_program, serialize_program
from .errors import (
    CadseqError,
    EmptySolidError,
    GeometryError,
    IoError,
    NestingError,
    OpenLoopError,
    OpenMeshError,
    SchemaError,
    SelfIntersectionError,
    TessellationError,
)

EXIT_USAGE = 1
EXIT_COMPILE = 2
EXIT_DATA = 3
EXIT_INTERNAL = 4

_COMPILE_ERRORS = (
    EmptySolidError,
    GeometryError,
    NestingError,
    OpenLoopError,
    OpenMeshError,
    SelfIntersectionError,
    TessellationError,
)

_LEVELS = (vq.Level.EB, vq.Level.SP, vq.Level.CC)


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2; remap them to 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _seed(args) -> int:
    if args.seed is not None:
        return int(args.seed)
    env = os.environ.get("CADSEQ_SEED")
    return int(env) if env else 0


def _read(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def _write(path, text: str) -> None:
    try:
        Path(path).write_text(text)
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _load_program(path) -> CadProgram:
    """Parse a program document; token envelopes are decoded first."""
    text = _read(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    if isinstance(doc, dict) and {"eb", "sp", "cc"} <= doc.keys():
        return canonize.decode_program(canonize.tokens_from_json(text))
    return parse_program(text)


def _emit(args, payload: dict, human: list[str]) -> None:
    if args.json:
        print(json.dumps(payload, indent=2, default=str))
    else:
        for line in human:
            print(line)


# --------------------------------------------------------------------------
# codebook bundles: three per-level codebooks plus the lattice layout

def _load_level_codebook(dirpath: Path, level: vq.Level):
    cb, meta = vq.load_codebook(dirpath / f"{level.value}.vq")
    proj = vq.make_projection(level, int(meta.get("d_latent", cb.entries.shape[1])),
                              int(meta.get("proj_seed", 0)))
    return cb, proj


def _quantize_tokens(tokens, bundle_dir) -> dict[str, list[int]]:
    """Per-level codebook indices for a token set."""
    out = {}
    feats = {
        vq.Level.EB: tokens.eb_features(),
        vq.Level.SP: tokens.sp_features(),
        vq.Level.CC: tokens.cc_features(),
    }
    for level in _LEVELS:
        cb, proj = _load_level_codebook(Path(bundle_dir), level)
        z = vq.project(level, feats[level], proj)
        idx, _ = vq.quantize_batch(z, cb)
        out[level.value] = [int(i) for i in idx]
    return out


def _structure_sig(t) -> tuple:
    return (len(t.eb), tuple(t.sp_block), tuple(t.cc_sp))


def _corpus_programs(dirpath) -> dict[str, CadProgram]:
    files = sorted(Path(dirpath).glob("*.json"))
    if not files:
        raise IoError(f"no program JSON files in {dirpath}")
    return {f.stem: parse_program(_read(f)) for f in files}


def _build_bundle(programs: dict[str, CadProgram], k: int, d_latent: int,
                  seed: int, outdir: Path) -> dict:
    """Train per-level codebooks over the largest structurally identical
    program group and persist them with the lattice layout."""
    encoded = {n: canonize.encode_program(p) for n, p in programs.items()}
    groups: dict[tuple, list[str]] = {}
    for n, t in encoded.items():
        groups.setdefault(_structure_sig(t), []).append(n)
    sig = max(groups, key=lambda s: (len(groups[s]), groups[s][0]))
    toks = [encoded[n] for n in groups[sig]]

    outdir.mkdir(parents=True, exist_ok=True)
    offsets = {}
    sizes = {}
    offset = 0
    for level in _LEVELS:
        stacked = np.concatenate(
            [getattr(t, f"{level.value}_features")() for t in toks])
        k_level = min(k, len(np.unique(stacked, axis=0)))
        proj = vq.make_projection(level, d_latent, seed)
        cb = vq.train_codebook(vq.project(level, stacked, proj), k_level,
                               seed=seed, level=level)
        vq.save_codebook(cb, outdir / f"{level.value}.vq",
                         sidecar={"d_latent": d_latent, "proj_seed": seed})
        offsets[level.value] = offset
        sizes[level.value] = k_level
        offset += k_level

    n_eb, sp_block, cc_sp = sig
    bundle = {
        "align": {"sp_block": list(sp_block), "cc_sp": list(cc_sp)},
        "n_eb": n_eb,
        "offsets": offsets,
        "sizes": sizes,
        "d_latent": d_latent,
        "proj_seed": seed,
        "L": n_eb + len(sp_block) + len(cc_sp),
        "K": offset,
    }
    _write(outdir / "bundle.json", json.dumps(bundle, indent=2))
    return bundle


def _corpus_sequences(programs: dict[str, CadProgram], bundle: dict,
                      bundle_dir) -> tuple[list[list[int]], list[str]]:
    """Flatten every structurally matching corpus program into an index
    sequence under the bundle's codebooks."""
    sig = (bundle["n_eb"], tuple(bundle["align"]["sp_block"]),
           tuple(bundle["align"]["cc_sp"]))
    books = {level: _load_level_codebook(Path(bundle_dir), level)
             for level in _LEVELS}
    seqs, used = [], []
    for name, p in programs.items():
        t = canonize.encode_program(p)
        if _structure_sig(t) != sig:
            continue
        seq: list[int] = []
        for level in _LEVELS:
            cb, proj = books[level]
            feats = getattr(t, f"{level.value}_features")()
            idx, _ = vq.quantize_batch(vq.project(level, feats, proj), cb)
            seq.extend(int(i) + bundle["offsets"][level.value] for i in idx)
        seqs.append(seq)
        used.append(name)
    if not seqs:
        raise SchemaError("no corpus program matches the bundle's structure")
    return seqs, used


def _load_bundle(dirpath) -> dict:
    bundle = json.loads(_read(Path(dirpath) / "bundle.json"))
    for key in ("align", "n_eb", "offsets", "sizes", "L", "K"):
        if key not in bundle:
            raise SchemaError(f"bundle.json missing field {key!r}")
    return bundle


def _lattice_to_tokens(lattice, bundle_dir) -> str:
    """Map a generated index lattice back to a token envelope through the
    bundle's codebooks (nearest-entry rows, pseudo-inverse projection)."""
    bundle = _load_bundle(bundle_dir)
    counts = {
        "eb": bundle["n_eb"],
        "sp": len(bundle["align"]["sp_block"]),
        "cc": len(bundle["align"]["cc_sp"]),
    }
    if lattice.L != bundle["L"] or lattice.K != bundle["K"]:
        raise SchemaError(
            f"lattice shape (L={lattice.L}, K={lattice.K}) does not match "
            f"bundle (L={bundle['L']}, K={bundle['K']})")
    doc = {"align": bundle["align"]}
    pos = 0
    for level in _LEVELS:
        name = level.value
        ids = lattice.tokens[pos:pos + counts[name]] - bundle["offsets"][name]
        pos += counts[name]
        if (ids < 0).any() or (ids >= bundle["sizes"][name]).any():
            raise SchemaError(
                f"lattice holds ids outside the {name} range at {name} positions")
        cb, proj = _load_level_codebook(Path(bundle_dir), level)
        rows = vq.inverse_project(cb.entries[ids], proj)
        doc[name] = [[float(v) for v in row] for row in rows]
    text = json.dumps(doc, indent=2)
    canonize.tokens_from_json(text)  # validate before handing it out
    return text


# --------------------------------------------------------------------------
# commands

def cmd_encode(args) -> dict:
    p = _load_program(args.program)
    tokens = canonize.encode_program(p)
    text = canonize.tokens_to_json(tokens)
    payload = {"eb": len(tokens.eb), "sp": len(tokens.sp), "cc": len(tokens.cc)}
    if args.codebook_dir:
        doc = json.loads(text)
        doc["indices"] = _quantize_tokens(tokens, args.codebook_dir)
        text = json.dumps(doc, indent=2)
        payload["indices"] = doc["indices"]
    _write(args.out, text)
    payload["out"] = str(args.out)
    _emit(args, payload, [
        f"encoded {args.program}: {payload['eb']} blocks, "
        f"{payload['sp']} loops, {payload['cc']} curve tokens -> {args.out}"])
    return payload


def cmd_decode(args) -> dict:
    tokens = canonize.tokens_from_json(_read(args.tokens))
    residuals = canonize.closure_residuals(tokens)
    p = canonize.decode_program(tokens)
    _write(args.out, serialize_program(p) + "\n")
    payload = {"out": str(args.out),
               "closure_residuals": [float(r) for r in residuals]}
    human = [f"decoded {args.tokens} -> {args.out}"]
    human += [f"  loop {i}: closure residual {r:.3e}"
              for i, r in enumerate(residuals)]
    _emit(args, payload, human)
    return payload


def cmd_compile(args) -> dict:
    p = _load_program(args.program)
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "obj": outdir / "model.obj",
        "step": outdir / "model.step",
        "history": outdir / "history.json",
    }
    geomkernel.export(p, geomkernel.ExportKind.OBJ, paths["obj"])
    geomkernel.export(p, geomkernel.ExportKind.STEP_SKELETON, paths["step"])
    geomkernel.export(p, geomkernel.ExportKind.HISTORY_JSON, paths["history"])
    payload = {k: str(v) for k, v in paths.items()}
    _emit(args, payload, [f"compiled {args.program} -> {outdir}"])
    return payload


def cmd_sample(args) -> dict:
    p = _load_program(args.program)
    s = geomkernel.sample_solid(p, args.n, seed=_seed(args))
    pointops.write_ply(args.out, s.points)
    payload = {"out": str(args.out), "n": int(len(s.points))}
    _emit(args, payload, [f"sampled {args.n} surface points -> {args.out}"])
    return payload


def cmd_resample(args) -> dict:
    cloud = pointops.read_ply(args.cloud)
    scored = pointops.importance_score(cloud.points, k=args.k)
    picked = pointops.resample(scored, args.m, lam=args.lam, beta=args.beta,
                               seed=_seed(args), replacement=args.replacement)
    pointops.write_ply(args.out, picked)
    payload = {"out": str(args.out), "m": int(len(picked)),
               "lam": args.lam, "beta": args.beta}
    _emit(args, payload,
          [f"resampled {len(cloud.points)} -> {args.m} points "
           f"(lam={args.lam}, beta={args.beta}) -> {args.out}"])
    return payload


def cmd_train_codebook(args) -> dict:
    programs = _corpus_programs(args.programs)
    level = vq.Level(args.level)
    feats = np.concatenate([
        getattr(canonize.encode_program(p), f"{level.value}_features")()
        for p in programs.values()])
    proj = vq.make_projection(level, args.d_latent, _seed(args))
    cb = vq.train_codebook(vq.project(level, feats, proj), args.k,
                           mode=vq.TrainMode(args.mode), iters=args.iters,
                           seed=_seed(args), level=level)
    vq.save_codebook(cb, args.out,
                     sidecar={"d_latent": args.d_latent,
                              "proj_seed": _seed(args)})
    payload = {"out": str(args.out), "level": level.value, "k": cb.k,
               "rows": int(len(feats)),
               "final_error": cb.error_history[-1] if cb.error_history else None}
    _emit(args, payload,
          [f"trained {level.value} codebook (K={cb.k}) on "
           f"{len(feats)} rows -> {args.out}"])
    return payload


def cmd_diffuse(args) -> dict:
    schedule = discretediff.linear_schedule(args.T)
    seed = _seed(args)
    payload: dict = {"denoiser": args.denoiser, "T": args.T, "seed": seed}
    if args.denoiser == "oracle":
        if not args.target:
            raise SchemaError("oracle denoiser needs --target lattice JSON")
        target, _ = discretediff.lattice_from_json(_read(args.target))
        den = discretediff.OracleDenoiser(target)
        L, K = target.L, target.K
    elif args.denoiser == "uniform":
        if args.L is None or args.K is None:
            raise SchemaError("uniform denoiser needs --L and --K")
        den = discretediff.UniformDenoiser()
        L, K = args.L, args.K
    else:
        if not args.corpus:
            raise SchemaError("unigram denoiser needs --corpus program dir")
        bundle_dir = Path(args.bundle or (Path(args.out).parent / "bundle"))
        programs = _corpus_programs(args.corpus)
        # reuse an existing bundle so lattices sampled under different
        # seeds stay decodable against the same codebooks
        if (bundle_dir / "bundle.json").exists():
            bundle = _load_bundle(bundle_dir)
        else:
            bundle = _build_bundle(programs, args.k, args.d_latent,
                                   args.bundle_seed, bundle_dir)
        seqs, used = _corpus_sequences(programs, bundle, bundle_dir)
        den = discretediff.FrequencyTableDenoiser.from_corpus(
            seqs, bundle["K"])
        L, K = bundle["L"], bundle["K"]
        payload["bundle"] = str(bundle_dir)
        payload["corpus_used"] = used
    lat = discretediff.sample(den, None, L, K, schedule, seed=seed)
    _write(args.out, discretediff.lattice_to_json(lat, args.T))
    payload.update({"out": str(args.out), "L": L, "K": K})
    _emit(args, payload,
          [f"sampled lattice L={L} K={K} ({args.denoiser}, T={args.T}) "
           f"-> {args.out}"])
    return payload


def cmd_dequantize(args) -> dict:
    lattice, _ = discretediff.lattice_from_json(_read(args.lattice))
    text = _lattice_to_tokens(lattice, args.bundle)
    _write(args.out, text)
    payload = {"out": str(args.out)}
    _emit(args, payload, [f"dequantized {args.lattice} -> {args.out}"])
    return payload


def _eval_pair(name: str, gen_path: str, gt_path: str,
               cfg: metrics.MetricConfig, seed: int):
    row = {"name": name, "compiled": True, "chamfer": None, "acc_err": None,
           "comp_err": None, "seg_acc": None, "precision": None,
           "recall": None, "hanging_faces": None}
    gt_prog = _load_program(gt_path)
    gt_sample = geomkernel.sample_solid(gt_prog, cfg.n_points, seed=seed)
    try:
        gen_prog = _load_program(gen_path)
        gen_sample = geomkernel.sample_solid(gen_prog, cfg.n_points, seed=seed)
        gen_blocks = geomkernel.compile_blocks(gen_prog)
    except _COMPILE_ERRORS:
        row["compiled"] = False
        return row, None, gt_sample.points
    acc, comp = metrics.acc_comp(gen_sample.points, gt_sample.points)
    prec, rec = metrics.primitive_pr(gen_sample, gt_sample, cfg)
    row.update({
        "chamfer": 0.5 * (acc + comp),
        "acc_err": acc,
        "comp_err": comp,
        "seg_acc": metrics.seg_accuracy(gen_sample, gt_sample),
        "precision": prec,
        "recall": rec,
        "hanging_faces": max(metrics.hanging_faces(m) for m, _ in gen_blocks),
    })
    return row, gen_sample.points, gt_sample.points


def cmd_eval(args) -> dict:
    manifest = json.loads(_read(args.manifest))
    if not isinstance(manifest, dict) or "pairs" not in manifest:
        raise SchemaError("manifest must be an object with a 'pairs' array")
    seed = _seed(args)
    cfg = metrics.MetricConfig(
        n_points=args.n_points, match_threshold=args.match_threshold,
        voxel_grid=args.voxel_grid, dup_threshold=args.dup_threshold,
        seed=seed)
    base = Path(args.manifest).parent
    rows, gens, refs = [], [], []
    for i, pair in enumerate(manifest["pairs"]):
        for key in ("gen", "gt"):
            if key not in pair:
                raise SchemaError(f"manifest pair {i} missing {key!r}")
        row, gen_pts, gt_pts = _eval_pair(
            str(pair.get("name", f"pair{i}")), str(base / pair["gen"]),
            str(base / pair["gt"]), cfg, seed)
        rows.append(row)
        gens.append(None if gen_pts is None
                    else metrics.normalize_points(gen_pts))
        refs.append(metrics.normalize_points(gt_pts))
    population = dict(metrics.validity_novelty_uniqueness(gens, refs, cfg))
    valid = [g for g in gens if g is not None]
    if valid:
        population.update(metrics.population_metrics(valid, refs, cfg))
    config = {"n_points": cfg.n_points, "match_threshold": cfg.match_threshold,
              "voxel_grid": cfg.voxel_grid, "dup_threshold": cfg.dup_threshold,
              "seed": seed}
    csv_rows = [{k: ("" if v is None else v) for k, v in r.items()}
                for r in rows]
    payload = report.write_eval_report(args.out_dir, csv_rows, population,
                                       config)
    human = [f"evaluated {len(rows)} pairs -> {args.out_dir}"]
    human += [f"  {k}: {v:.6g}" for k, v in population.items()]
    _emit(args, payload, human)
    return payload


def cmd_roundtrip(args) -> dict:
    seed = _seed(args)
    if args.programs:
        programs = _corpus_programs(args.programs)
    else:
        programs = fixture_lib.corpus()
    rows = []
    for name, p in programs.items():
        t0 = time.time()
        tokens = canonize.encode_program(p)
        residual = max(canonize.closure_residuals(tokens), default=0.0)
        decoded = canonize.decode_program(tokens)
        s_orig = geomkernel.sample_solid(p, args.n, seed=seed)
        s_back = geomkernel.sample_solid(decoded, args.n, seed=seed)
        rows.append({
            "name": name,
            "chamfer": metrics.chamfer(s_orig.points, s_back.points),
            "closure_residual": float(residual),
            "seconds": time.time() - t0,
        })
    config = {"n": args.n, "seed": seed,
              "programs": str(args.programs) if args.programs else "builtin"}
    payload = report.write_roundtrip_report(args.out_dir, rows, config)
    human = [f"{r['name']:24s} chamfer={r['chamfer']:.3e} "
             f"closure={r['closure_residual']:.3e}" for r in rows]
    human.append(
        f"worst chamfer {payload['worst_chamfer']:.3e}, worst closure "
        f"{payload['worst_closure_residual']:.3e}, "
        f"{payload['total_seconds']:.2f}s -> {args.out_dir}")
    _emit(args, payload, human)
    return payload


def cmd_fixtures(args) -> dict:
    outdir = Path(args.out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    names = []
    for name, p in fixture_lib.corpus().items():
        _write(outdir / f"{name}.json", serialize_program(p) + "\n")
        names.append(name)
    payload = {"out_dir": str(outdir), "fixtures": names}
    _emit(args, payload,
          [f"wrote {len(names)} fixture programs -> {outdir}"])
    return payload


# --------------------------------------------------------------------------
# parser assembly

def _build() -> tuple[_Parser, dict[str, argparse.ArgumentParser]]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML config file")
    common.add_argument("--json", action="store_true",
                        help="machine-readable JSON on stdout")
    common.add_argument("--seed", type=int, default=None,
                        help="RNG seed (falls back to CADSEQ_SEED, then 0)")

    parser = _Parser(prog="cadseq", description=__doc__)
    subs_action = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    def sub(name, func, **kw):
        sp = subs_action.add_parser(name, parents=[common], **kw)
        sp.set_defaults(func=func)
        subs[name] = sp
        return sp

    s = sub("encode", cmd_encode, help="program JSON -> token JSON")
    s.add_argument("program")
    s.add_argument("--out", default="tokens.json")
    s.add_argument("--codebook-dir",
                   help="bundle dir with eb/sp/cc codebooks; adds indices")

    s = sub("decode", cmd_decode, help="token JSON -> program JSON")
    s.add_argument("tokens")
    s.add_argument("--out", default="program.json")

    s = sub("compile", cmd_compile,
            help="program JSON -> OBJ + STEP skeleton + history JSON")
    s.add_argument("program")
    s.add_argument("--out-dir", default="compiled")

    s = sub("sample", cmd_sample, help="program JSON -> surface PLY")
    s.add_argument("program")
    s.add_argument("--n", type=int, default=geomkernel.DEFAULT_N_POINTS)
    s.add_argument("--out", default="cloud.ply")

    s = sub("resample", cmd_resample,
            help="PLY -> saliency-resampled PLY")
    s.add_argument("cloud")
    s.add_argument("--m", type=int, required=True)
    s.add_argument("--lam", type=float, default=pointops.DEFAULT_LAMBDA)
    s.add_argument("--beta", type=float, default=pointops.DEFAULT_BETA)
    s.add_argument("--k", type=int, default=pointops.DEFAULT_K)
    s.add_argument("--replacement", action="store_true")
    s.add_argument("--out", default="resampled.ply")

    s = sub("train-codebook", cmd_train_codebook,
            help="program dir -> one level codebook")
    s.add_argument("programs", help="directory of program JSON files")
    s.add_argument("--level", choices=[l.value for l in _LEVELS],
                   required=True)
    s.add_argument("--k", type=int, default=64)
    s.add_argument("--mode", choices=[m.value for m in vq.TrainMode],
                   default="kmeans")
    s.add_argument("--iters", type=int, default=100)
    s.add_argument("--d-latent", type=int, default=16)
    s.add_argument("--out", default="codebook.vq")

    s = sub("diffuse", cmd_diffuse,
            help="sample a token lattice by reverse diffusion")
    s.add_argument("--denoiser", choices=["oracle", "uniform", "unigram"],
                   required=True)
    s.add_argument("--T", type=int, default=discretediff.DEFAULT_STEPS)
    s.add_argument("--L", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--target", help="clean lattice JSON (oracle)")
    s.add_argument("--corpus", help="program dir (unigram)")
    s.add_argument("--bundle", help="bundle dir, reused if present (unigram)")
    s.add_argument("--bundle-seed", type=int, default=0,
                   help="codebook training seed, kept apart from --seed")
    s.add_argument("--k", type=int, default=64,
                   help="codebook size cap per level (unigram)")
    s.add_argument("--d-latent", type=int, default=16)
    s.add_argument("--out", default="lattice.json")

    s = sub("dequantize", cmd_dequantize,
            help="index lattice JSON -> token JSON via a bundle")
    s.add_argument("lattice")
    s.add_argument("--bundle", required=True)
    s.add_argument("--out", default="tokens.json")

    s = sub("eval", cmd_eval, help="manifest -> metric report + figures")
    s.add_argument("manifest")
    s.add_argument("--out-dir", default="eval_report")
    s.add_argument("--n-points", type=int, default=metrics.DEFAULT_N_POINTS)
    s.add_argument("--match-threshold", type=float,
                   default=metrics.DEFAULT_MATCH_THRESHOLD)
    s.add_argument("--voxel-grid", type=int,
                   default=metrics.DEFAULT_VOXEL_GRID)
    s.add_argument("--dup-threshold", type=float,
                   default=metrics.DEFAULT_DUP_THRESHOLD)

    s = sub("roundtrip", cmd_roundtrip,
            help="encode/decode/compile self-check over a corpus")
    s.add_argument("--programs", help="program dir (default: builtin corpus)")
    s.add_argument("--n", type=int, default=2048,
                   help="surface sample size per side")
    s.add_argument("--out-dir", default="roundtrip_report")

    s = sub("fixtures", cmd_fixtures,
            help="write the builtin fixture corpus as program JSON")
    s.add_argument("--out-dir", default="fixtures")

    return parser, subs


def _apply_config(parser, subs, args, argv):
    try:
        data = tomli.loads(_read(args.config))
    except tomli.TOMLDecodeError as e:
        raise SchemaError(f"bad TOML in {args.config}: {e}") from e
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(args.command, {}))
    sub = subs[args.command]
    known = {a.dest for a in sub._actions}
    clean = {k.replace("-", "_"): v for k, v in merged.items()}
    sub.set_defaults(**{k: v for k, v in clean.items() if k in known})
    return parser.parse_args(argv)


def _fail(args, exc: BaseException, code: int) -> int:
    if args.json:
        print(json.dumps({"error": str(exc), "exit": code}))
    else:
        print(f"cadseq {args.command}: {exc}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subs = _build()
    args = parser.parse_args(argv)
    try:
        if args.config:
            args = _apply_config(parser, subs, args, argv)
        args.func(args)
        return 0
    except _COMPILE_ERRORS as exc:
        return _fail(args, exc, EXIT_COMPILE)
    except (CadseqError, OSError, ValueError) as exc:
        return _fail(args, exc, EXIT_DATA)
    except Exception as exc:  # noqa: BLE001  (taxonomy demands a catch-all)
        return _fail(args, exc, EXIT_INTERNAL)


if __name__ == "__main__":
    sys.exit(main())

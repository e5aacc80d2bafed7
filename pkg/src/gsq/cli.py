"""``gsq`` command line: one subcommand per pipeline, TSV plus certificate files out."""

from __future__ import annotations

import argparse
import os
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .amenability import (almost_a_certify, ball_witness, box_folner, folner_set,
                          glue_expander, hyperfinite_partition, lift_partition_to_folner,
                          push_witness_to_schreier)
from .bs import bs_report
from .certificates import (load_graph_for, parse_certificate, parse_rational,
                           partition_from_fields, witness_from_fields)
from .coarse import VertexMap, injectivize, pushforward_graph, read_map, transfer_partition, verify_map
from .cost import (augmented_pair_graph, base_copy_reduction, cost_interval, greedy_thin,
                   multiplicativity_check, torus_thinning)
from .errors import GsqError, InfeasibleError, PreconditionError, ViolationError
from .graph import (EDGE_MODES, GraphSequence, edge_number_table, read_graph, read_manifest,
                    write_graph, write_sequence)
from .groups import (GroupOracle, PermAction, build_family, format_word, read_action,
                     subgroup_pair_sequence, write_action)


def _rational(text):
    try:
        return parse_rational(text)
    except GsqError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _sizes(text):
    return [int(v) for v in text.split(",") if v]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_meta(out: Path, args) -> None:
    skip = {"func", "out"}
    lines = [f"command\t{args.command_path}"]
    lines += [f"{k}\t{v}" for k, v in sorted(vars(args).items()) if k not in skip and k != "command_path"]
    (out / "run.meta").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _emit(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def _rel(path, out: Path) -> str:
    return os.path.relpath(Path(path).resolve(), out.resolve())


def _action_of(g) -> PermAction:
    perms = g.permutations()
    if perms is None:
        raise PreconditionError(f"graph {g.name} is not label-regular, so it carries no action")
    return PermAction(g.vertex_count, {s: perms[s].tolist() for s in sorted(perms)})


def _read_tower(directory) -> list:
    directory = Path(directory)
    listing = directory / "actions.tsv"
    if listing.exists():
        rows = [ln.split() for ln in listing.read_text(encoding="utf-8").splitlines()
                if ln.strip() and not ln.startswith("#")]
        return [read_action(directory / name) for _, name in rows]
    files = sorted(directory.glob("*.action"))
    if not files:
        raise PreconditionError(f"no actions in {directory}")
    return [read_action(f) for f in files]


# ---------------------------------------------------------------- commands

def cmd_build(args):
    out = _out(args)
    tower = _read_tower(args.tower) if args.tower else None
    seq = build_family(args.family, args.sizes, rank=args.rank, seed=args.seed, tower=tower)
    write_sequence(seq, out)
    lines = []
    for k, g in seq:
        perms = g.permutations()
        if perms is not None:
            name = f"{g.name}.action"
            write_action(_action_of(g), out / name)
            lines.append(f"{k} {name}")
    if lines:
        (out / "actions.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "ratios.tsv", edge_number_table(seq, "multi").to_tsv())


def _load_pair(directory):
    directory = Path(directory)
    meta = dict(ln.split("\t", 1) for ln in (directory / "pair.meta").read_text(encoding="utf-8").splitlines()
                if "\t" in ln)
    ambient = GroupOracle.parse(meta["ambient"])
    coset = read_action(directory / "coset.action")
    tower = _read_tower(directory / "tower")
    return subgroup_pair_sequence(ambient, coset, tower)


def cmd_pair(args):
    out = _out(args)
    kind, path = args.subgroup
    if kind != "coset-table":
        raise PreconditionError(f"unknown subgroup description {kind!r}; expected coset-table")
    coset = read_action(path)
    tower = _read_tower(args.tower)
    pair, gamma, lam = subgroup_pair_sequence(GroupOracle.parse(args.ambient), coset, tower)
    write_action(coset, out / "coset.action")
    (out / "tower").mkdir(exist_ok=True)
    names = []
    for k, act in enumerate(tower):
        names.append(f"{k} level_{k}.action")
        write_action(act, out / "tower" / f"level_{k}.action")
    (out / "tower" / "actions.tsv").write_text("\n".join(names) + "\n", encoding="utf-8")
    write_sequence(gamma, out / "gamma")
    write_sequence(lam, out / "lambda")
    meta = [f"ambient\t{args.ambient}", f"index\t{pair.index}"]
    meta += [f"{h}\t{format_word(w)}" for h, w in zip(pair.subgroup_labels, pair.subgroup_generators)]
    (out / "pair.meta").write_text("\n".join(meta) + "\n", encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "pair.tsv", "".join(f"{m}\n" for m in meta))


def cmd_stats(args):
    out = _out(args)
    _write_meta(out, args)
    _emit(out, "ratios.tsv", edge_number_table(read_manifest(args.manifest), args.mode).to_tsv())


def cmd_bs(args):
    out = _out(args)
    seq = read_manifest(args.manifest)
    oracle = GroupOracle.parse(args.group)
    if args.mode == "exact":
        text = bs_report(seq, oracle, args.rmax).to_tsv()
    else:
        from .bs import local_statistic, oracle_code
        lines = ["#index\tradius\tmatching\tsampled\tp"]
        for k, g in seq:
            for r in range(args.rmax + 1):
                est = local_statistic(g, oracle_code(oracle, r), r, "sample", args.count, args.seed)
                lines.append(f"{k}\t{r}\t{est.hits}\t{est.count}\t{est.value}")
        text = "\n".join(lines) + "\n"
    _write_meta(out, args)
    _emit(out, "bs.tsv", text)


def _map_args(args):
    g = read_graph(args.domain)
    h = read_graph(args.codomain)
    return g, h, read_map(args.map, g, h)


def cmd_coarse_verify(args):
    out = _out(args)
    g, h, f = _map_args(args)
    cert = verify_map(f, args.kind, bound=args.bound, seed=args.seed)
    cert.meta.update({"domain": _rel(args.domain, out), "codomain": _rel(args.codomain, out),
                      "map": _rel(args.map, out), "seed": str(args.seed)})
    _write_meta(out, args)
    (out / "distortion.cert").write_text(cert.to_text(), encoding="utf-8")
    _emit(out, "coarse.tsv", f"#kind\tconstant\texhaustive\tpairs\n{cert.kind}\t{cert.constant}"
                             f"\t{int(cert.exhaustive)}\t{cert.pairs_checked}\n")


def cmd_coarse_injectivize(args):
    out = _out(args)
    g, h, f = _map_args(args)
    res = injectivize(f)
    write_graph(res.graph, out / "injective.g")
    (out / "injective.map").write_text(res.map.to_text(), encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "injectivize.tsv", f"#vertices\tadded\tfiber_bound\tA\n{res.graph.vertex_count}"
                                  f"\t{len(res.added)}\t{res.fiber_bound}\t{res.constant}\n")


def cmd_coarse_pushforward(args):
    out = _out(args)
    g, h, f = _map_args(args)
    if not f.injective:
        f = injectivize(f).map
    res = pushforward_graph(g, f)
    write_graph(res.graph, out / "pushforward.g")
    write_graph(f.codomain, out / "codomain.g")
    res.certificate.meta.update({"domain": "codomain.g", "codomain": "pushforward.g", "map": "identity"})
    (out / "distortion.cert").write_text(res.certificate.to_text(), encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "pushforward.tsv", f"#R\tA\tformula_bound\tmeasured\n{res.R}\t{res.A}"
                                  f"\t{res.formula_bound}\t{res.measured}\n")


def cmd_coarse_transfer(args):
    out = _out(args)
    g = read_graph(args.graph)
    g2 = read_graph(args.target)
    p = partition_from_fields(parse_certificate(Path(args.partition).read_text(encoding="utf-8")))
    res = transfer_partition(p, g, g2, args.L)
    (out / "partition.cert").write_text(res.partition.to_text(_rel(args.target, out)), encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "transfer.tsv", f"#L\tdegree\tsource_cut\tcut\tbound\n{res.L}\t{res.degree}"
                               f"\t{len(p.cut)}\t{len(res.partition.cut)}\t{res.bound}\n")


def cmd_hyperfinite(args):
    out = _out(args)
    g = read_graph(args.graph)
    p = hyperfinite_partition(g, args.eps, args.method, b=args.b, k_cap=args.kcap)
    if args.method != "blocks" and not p.eps < args.eps:
        raise InfeasibleError(f"cut fraction {p.eps} is not below {args.eps}", p)
    (out / "partition.cert").write_text(p.to_text(_rel(args.graph, out)), encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "hyperfinite.tsv", f"#method\tvertices\tcut\teps\tK\n{args.method}\t{g.vertex_count}"
                                  f"\t{len(p.cut)}\t{p.eps}\t{p.K}\n")


def _folner(args, oracle):
    if args.box is not None:
        return box_folner(oracle, args.box)
    if args.eps is None:
        raise PreconditionError("give --box or --eps")
    return folner_set(oracle, args.eps)


def cmd_witness(args):
    out = _out(args)
    g = read_graph(args.graph)
    if args.group:
        oracle = GroupOracle.parse(args.group)
        w = push_witness_to_schreier(oracle, _action_of(g), _folner(args, oracle))
    elif args.radius is not None:
        w = ball_witness(g, args.radius)
    else:
        raise PreconditionError("give --group with --box/--eps, or --radius")
    eps = w.measured_eps(g)
    radius = w.support_radius(g)
    (out / "witness.cert").write_text(w.to_text(g, _rel(args.graph, out)), encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "witness.tsv", f"#denominator\teps\tsupport_radius\tnorms_exact\n{w.denominator}"
                              f"\t{eps}\t{radius}\t{int(w.norms_exact())}\n")


def cmd_almost_a(args):
    out = _out(args)
    seq = read_manifest(args.manifest)
    oracle = GroupOracle.parse(args.group)
    rep = almost_a_certify(seq, oracle, _folner(args, oracle))
    for (k, g), w in zip(seq, rep.witnesses):
        write_graph(g, out / f"index_{k}.g")
        (out / f"witness_{k}.cert").write_text(w.to_text(g, f"index_{k}.g"), encoding="utf-8")
    _write_meta(out, args)
    sched = "".join(f"#schedule\t{s}\t{p}\n" for s, p in sorted(rep.schedule.items()))
    _emit(out, "almost_a.tsv", sched + rep.to_tsv())


def cmd_lift(args):
    out = _out(args)
    g = read_graph(args.graph)
    if args.partition:
        p = partition_from_fields(parse_certificate(Path(args.partition).read_text(encoding="utf-8")))
    else:
        p = hyperfinite_partition(g, Fraction(1), "blocks", b=args.b)
    res = lift_partition_to_folner(g, p, GroupOracle.parse(args.group), R=args.R, eps=args.eps)
    elems = "".join("element\t" + " ".join(map(str, e if isinstance(e, tuple) else (e,))) + "\n"
                    for e in res.folner.elements)
    (out / "folner.txt").write_text(f"size\t{res.folner.size}\nboundary\t{res.folner.boundary}\n" + elems,
                                    encoding="utf-8")
    _write_meta(out, args)
    _emit(out, "lift.tsv", f"#root\tR\tsize\tratio\tbad_fraction\ttarget\n{res.root}\t{res.R}"
                           f"\t{res.folner.size}\t{res.graph_ratio}\t{res.bad_fraction}\t{res.target}\n")


def cmd_glue(args):
    out = _out(args)
    res = glue_expander(read_manifest(args.box), read_manifest(args.expander), strict=not args.lenient)
    if len(res.sequence):
        write_sequence(res.sequence, out / "glued")
    _write_meta(out, args)
    _emit(out, "glue.tsv", res.to_tsv())


def _graphs_for(args):
    if args.graph:
        return GraphSequence([read_graph(args.graph)], [0])
    if args.manifest:
        return read_manifest(args.manifest)
    raise PreconditionError("give --graph or --manifest")


def cmd_cost_thin(args):
    out = _out(args)
    lines = ["#index\tmethod\tL\tvertices\tedges\tratio\tmeasured\texhaustive"]
    for k, g in _graphs_for(args):
        cb = greedy_thin(g, args.L, args.mode) if args.method == "greedy" else torus_thinning(g, args.L, args.mode)
        write_graph(cb.graph, out / f"thin_{k}.g")
        (out / f"moves_{k}.log").write_text(cb.log_text(), encoding="utf-8")
        lines.append(f"{k}\t{args.method}\t{cb.L}\t{g.vertex_count}\t{cb.edges}\t{cb.ratio}"
                     f"\t{cb.measured}\t{cb.meta['exhaustive']}")
    _write_meta(out, args)
    _emit(out, "thin.tsv", "\n".join(lines) + "\n")


def cmd_cost_reduce(args):
    out = _out(args)
    pair, _, _ = _load_pair(args.pair)
    levels = range(len(pair.levels)) if args.level is None else [args.level]
    lines = ["#level\tvertices\tbase\tR_max\tphase1_bound\tphase1_measured\tarcs\tdepth\tedges"]
    for lv in levels:
        aug = augmented_pair_graph(pair, lv)
        res = base_copy_reduction(aug.graph, aug.h_labels, aug.g_labels, aug.base, aug.index, args.budget)
        write_graph(aug.graph, out / f"augmented_{lv}.g")
        write_graph(res.graph, out / f"reduced_{lv}.g")
        (out / f"moves_{lv}.log").write_text("".join(f"{m[0]} {m[1]} {m[2]} {m[3]}\n" for m in res.moves),
                                             encoding="utf-8")
        lines.append(f"{lv}\t{aug.graph.vertex_count}\t{len(aug.base)}\t{res.R_max}\t{res.phase1_bound}"
                     f"\t{res.phase1_measured}\t{len(res.arcs)}\t{res.depth}\t{len(res.graph.edges)}")
    _write_meta(out, args)
    _emit(out, "reduce.tsv", "\n".join(lines) + "\n")


def cmd_cost_mult(args):
    out = _out(args)
    pair, gamma, lam = _load_pair(args.pair)
    rep = multiplicativity_check(gamma, lam, pair.index, args.mode)
    _write_meta(out, args)
    _emit(out, "mult.tsv", rep.to_tsv() + f"#identity_holds\t{int(rep.holds)}\n")
    if not rep.holds:
        raise ViolationError("multiplicativity identity fails at some index")


def cmd_cost_interval(args):
    out = _out(args)
    ci = cost_interval(read_manifest(args.manifest), large_girth=args.large_girth, mode=args.mode)
    _write_meta(out, args)
    girths = ",".join(str(x) for x in ci.girths)
    _emit(out, "cost.tsv", f"#lower\tupper\tlarge_girth\tgirths\n{ci.lower}\t{ci.upper}"
                           f"\t{int(ci.large_girth)}\t{girths}\n{ci}\n")


def cmd_verify(args):
    text = Path(args.certificate).read_text(encoding="utf-8")
    fields = parse_certificate(text)
    kind = fields["kind"]
    if kind == "partition":
        p = partition_from_fields(fields)
        p.verify(load_graph_for(fields, args.certificate))
        msg = f"partition ok eps={p.eps} K={p.K}"
    elif kind == "witness":
        g = load_graph_for(fields, args.certificate)
        w = witness_from_fields(fields)
        eps = parse_rational(fields["eps"]) if "eps" in fields else None
        radius = int(fields["support_radius"]) if fields.get("support_radius", "inf") != "inf" else None
        w.verify(g, eps=eps, radius=radius)
        msg = f"witness ok eps={w.measured_eps(g)}"
    elif kind == "distortion":
        meta = {p[1]: " ".join(p[2:]) for p in fields["lines"] if p[0] == "meta"}
        base = Path(args.certificate).parent
        g = read_graph(base / meta["domain"])
        h = read_graph(base / meta["codomain"])
        f = VertexMap.identity(g, h) if meta["map"] == "identity" else read_map(base / meta["map"], g, h)
        cert = verify_map(f, fields["distortion_kind"], seed=int(meta.get("seed", 0)))
        if cert.constant != int(fields["constant"]):
            raise ViolationError(f"recomputed constant {cert.constant} differs from {fields['constant']}")
        msg = f"distortion ok constant={cert.constant}"
    else:
        raise PreconditionError(f"cannot verify certificate kind {kind!r}")
    print(msg)


# ---------------------------------------------------------------- parser

class _Parser(argparse.ArgumentParser):
    """Usage errors exit 1 with a one-line reason; exit 2 is reserved for infeasibility."""

    def error(self, message):
        self.exit(1, f"error: usage: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="gsq", description="graph sequences, cost and hyperfiniteness tools")
    ap.add_argument("--version", action="version", version=f"gsq {__version__}")
    common = _Parser(add_help=False)
    common.add_argument("--out", default="gsq_out", help="output directory")
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1,
                        help="parallelism level (recorded; outputs do not depend on it)")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(parent, name, func, help_text):
        p = parent.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func, command_path=name)
        return p

    p = add(sub, "build", cmd_build, "build a family truncation")
    p.add_argument("--family", required=True)
    p.add_argument("--sizes", type=_sizes, default=[])
    p.add_argument("--rank", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tower", help="directory of actions for box_tower")

    p = add(sub, "pair", cmd_pair, "pair a subgroup with its ambient free group along a tower")
    p.add_argument("--ambient", required=True)
    p.add_argument("--subgroup", nargs=2, metavar=("KIND", "FILE"), required=True)
    p.add_argument("--tower", required=True)

    p = add(sub, "stats", cmd_stats, "edge-number table")
    p.add_argument("--manifest", required=True)
    p.add_argument("--mode", choices=EDGE_MODES, default="multi")

    p = add(sub, "bs", cmd_bs, "local statistics against a Cayley ball")
    p.add_argument("--manifest", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--rmax", type=int, default=2)
    p.add_argument("--mode", choices=("exact", "sample"), default="exact")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)

    coarse = sub.add_parser("coarse", help="maps between graphs").add_subparsers(dest="coarse_command", required=True)
    for name, func in (("verify", cmd_coarse_verify), ("injectivize", cmd_coarse_injectivize),
                       ("pushforward", cmd_coarse_pushforward)):
        p = add(coarse, name, func, f"coarse {name}")
        p.set_defaults(command_path=f"coarse {name}")
        p.add_argument("--domain", required=True)
        p.add_argument("--codomain", required=True)
        p.add_argument("--map", required=True)
        if name == "verify":
            p.add_argument("--kind", choices=("quasi_isometry", "bilipschitz"), default="quasi_isometry")
            p.add_argument("--bound", type=int)
            p.add_argument("--seed", type=int, default=0)
    p = add(coarse, "transfer", cmd_coarse_transfer, "reuse a partition on an equivalent graph")
    p.set_defaults(command_path="coarse transfer")
    p.add_argument("--graph", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--L", type=int)

    p = add(sub, "hyperfinite", cmd_hyperfinite, "partition with few cut edges")
    p.add_argument("--graph", required=True)
    p.add_argument("--eps", type=_rational, required=True)
    p.add_argument("--method", choices=("exact", "blocks", "carve"), default="exact")
    p.add_argument("--b", type=int)
    p.add_argument("--kcap", type=int)

    for name, func in (("witness", cmd_witness), ("almost-a", cmd_almost_a)):
        p = add(sub, name, func, f"{name} certificates")
        if name == "witness":
            p.add_argument("--graph", required=True)
            p.add_argument("--radius", type=int)
            p.add_argument("--group")
        else:
            p.add_argument("--manifest", required=True)
            p.add_argument("--group", required=True)
        p.add_argument("--box", type=int)
        p.add_argument("--eps", type=_rational)

    p = add(sub, "lift", cmd_lift, "lift a partition block to a group Folner set")
    p.add_argument("--graph", required=True)
    p.add_argument("--group", required=True)
    p.add_argument("--partition")
    p.add_argument("--b", type=int)
    p.add_argument("--R", type=int)
    p.add_argument("--eps", type=_rational)

    p = add(sub, "glue", cmd_glue, "glue expanders onto box graphs")
    p.add_argument("--box", required=True, help="manifest of box graphs")
    p.add_argument("--expander", required=True, help="manifest of expanders")
    p.add_argument("--lenient", action="store_true", help="skip infeasible positions instead of failing")

    cost = sub.add_parser("cost", help="cost bounds").add_subparsers(dest="cost_command", required=True)
    p = add(cost, "thin", cmd_cost_thin, "distortion-bounded edge deletion")
    p.set_defaults(command_path="cost thin")
    p.add_argument("--graph")
    p.add_argument("--manifest")
    p.add_argument("--L", type=int, required=True)
    p.add_argument("--method", choices=("greedy", "torus"), default="greedy")
    p.add_argument("--mode", choices=EDGE_MODES, default="multi")
    p = add(cost, "reduce", cmd_cost_reduce, "base-copy reduction of a subgroup pair")
    p.set_defaults(command_path="cost reduce")
    p.add_argument("--pair", required=True)
    p.add_argument("--level", type=int)
    p.add_argument("--budget", type=int, default=64)
    p = add(cost, "mult", cmd_cost_mult, "multiplicativity identity per index")
    p.set_defaults(command_path="cost mult")
    p.add_argument("--pair", required=True)
    p.add_argument("--mode", choices=EDGE_MODES, default="multi")
    p = add(cost, "interval", cmd_cost_interval, "cost interval of a sequence")
    p.set_defaults(command_path="cost interval")
    p.add_argument("--manifest", required=True)
    p.add_argument("--large-girth", action="store_true")
    p.add_argument("--mode", choices=EDGE_MODES, default="multi")

    p = sub.add_parser("verify", help="re-verify a certificate file")
    p.add_argument("certificate")
    p.set_defaults(func=cmd_verify, command_path="verify")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except InfeasibleError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 2
    except GsqError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError, ValueError) as exc:
        print(f"error: input: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

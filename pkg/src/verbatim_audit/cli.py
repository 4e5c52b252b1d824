"""Command-line entry point: simulate | attack | label | report | transfer.

Configuration is an INI tree (key=value sections); every key is listed in
--help and unknown keys are rejected.  Flags override file values.  Exit
codes: 0 run complete, 2 failure budget exceeded / backend unreachable,
3 invalid configuration.
"""

from __future__ import annotations

import argparse
import configparser
import json
import os
import sys
from pathlib import Path

from verbatim_audit.errors import (
    AuditError,
    ConfigError,
    FailureBudgetExceeded,
    TransportError,
)
from verbatim_audit.groundtruth import GtConfig
from verbatim_audit.pipeline import (
    AttackRunConfig,
    PostfilterConfig,
    RunInputs,
    label_candidates,
    load_report,
    run_attack,
    transfer_run,
)
from verbatim_audit.scoring import ScoreThresholds

EXIT_OK = 0
EXIT_RUN_FAILED = 2
EXIT_BAD_CONFIG = 3

ENV_BACKEND_URL = "VA_BACKEND_URL"

# section.key -> (type, default, help). The single source of truth for the
# config tree; --help renders it and unknown keys are rejected against it.
CONFIG_KEYS: dict[str, tuple[type, object, str]] = {
    "run.out_dir": (str, "run", "output directory for reports and score/label files"),
    "run.seed": (int, 0, "run seed; drives every derived noise/generation seed"),
    "run.workers": (int, 1, "bounded worker pool size within each stage"),
    "run.failure_budget": (float, 0.01, "tolerated fraction of per-caption failures"),
    "candidates.captions": (str, "", "caption JSONL file (id, text, optional image path)"),
    "candidates.embeddings": (str, "", "EMB1 embedding file for retrieval and duplication"),
    "candidates.corpus_dir": (str, "", "root for reference images (default: captions file directory)"),
    "candidates.pool_size": (int, 0, "restrict candidates to the N most duplicated (0 = all)"),
    "backend.mode": (str, "sim", "sim (local simulated corpus) or remote (wire protocol)"),
    "backend.sim_dir": (str, "", "simulation directory written by `va simulate`"),
    "backend.url": (str, "", f"remote backend URL (default ${ENV_BACKEND_URL})"),
    "backend.timeout_s": (float, 30.0, "per-request timeout for remote backends"),
    "backend.max_retries": (int, 2, "transport-error retries (never on protocol errors)"),
    "attack.mode": (str, "blackbox", "whitebox (score only) or blackbox (score + edge stage)"),
    "attack.n_pre": (int, 30_000, "prefilter size passed from whitebox to blackbox stage"),
    "attack.label": (bool, True, "run ground-truth labeling on the final ranking"),
    "thresholds.tau_dcs": (float, 1.0, "whitebox score classification threshold"),
    "thresholds.tau_ecs": (int, 1, "edge-consistency classification threshold"),
    "thresholds.gamma_frac": (float, 0.75, "edge vote quorum as a fraction of j"),
    "thresholds.j": (int, 4, "seeds per caption for the blackbox stage"),
    "thresholds.t_edge": (float, 0.25, "gradient magnitude threshold for edge maps"),
    "thresholds.sigma1": (float, 0.0, "whitebox noise level (0 = backend-reported maximum)"),
    "groundtruth.delta_v": (float, 0.12, "verbatim distance threshold"),
    "groundtruth.delta_v_masked": (float, 0.0, "masked-distance threshold (0 = same as delta_v)"),
    "groundtruth.j": (int, 4, "full-synthesis seeds per caption for labeling"),
    "groundtruth.k": (int, 10, "nearest neighbors consulted per generation"),
    "groundtruth.theta_var": (float, 0.05, "per-pixel luma std threshold for stable regions"),
    "groundtruth.white_frac_max": (float, 0.6, "candidate screen: max near-white fraction"),
    "groundtruth.min_edge_density": (float, 0.01, "candidate screen: min edge density"),
    "groundtruth.group_threshold": (float, 0.90, "cosine threshold for duplicate grouping"),
    "postfilter.enabled": (bool, False, "run the repetition post-filter"),
    "postfilter.n_samples": (int, 32, "full generations per caption (paper scale: 500)"),
    "postfilter.pair_delta": (float, 0.12, "pairwise RMSE edge threshold"),
    "postfilter.component_min_frac": (float, 0.1, "flag when largest cluster reaches this fraction"),
    "postfilter.use_masks": (bool, False, "filter on mask-aware distances where masks exist"),
    "simulate.corpus_size": (int, 5000, "simulated corpus size"),
    "simulate.exact_fraction": (float, 0.01, "fraction of captions planted as exact verbatims"),
    "simulate.template_fraction": (float, 0.006, "fraction planted as template verbatims"),
    "simulate.retrieval_fraction": (float, 0.0, "fraction planted as retrieval verbatims"),
    "simulate.resolution": (int, 64, "image side in pixels"),
    "simulate.noise_seed": (int, 0, "seed for all simulated content"),
    "simulate.one_step_blur_sigma": (float, 7.0, "blur level of one-step non-verbatim output"),
    "simulate.dedup_exact": (bool, False, "model variant whose training set dropped exact plants"),
}


def _coerce(key: str, raw: str):
    typ, _, _ = CONFIG_KEYS[key]
    if typ is bool:
        lowered = raw.strip().lower()
        if lowered in ("1", "true", "yes", "on"):
            return True
        if lowered in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc


def load_config(path: str | None, overrides: list[str]) -> dict:
    values = {key: default for key, (_, default, _) in CONFIG_KEYS.items()}
    if path:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for section in parser.sections():
            for key, raw in parser.items(section):
                full = f"{section}.{key}"
                if full not in CONFIG_KEYS:
                    raise ConfigError(f"unknown config key {full!r}")
                values[full] = _coerce(full, raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        full, raw = item.split("=", 1)
        full = full.strip()
        if full not in CONFIG_KEYS:
            raise ConfigError(f"unknown config key {full!r}")
        values[full] = _coerce(full, raw)
    return values


def _config_epilog() -> str:
    lines = ["configuration keys (INI sections; override with --set section.key=value):"]
    for key, (typ, default, help_text) in CONFIG_KEYS.items():
        lines.append(f"  {key:36s} {typ.__name__:5s} default={default!r}  {help_text}")
    return "\n".join(lines)


def build_attack_config(values: dict, out_dir: str | None = None) -> AttackRunConfig:
    try:
        return _build_attack_config(values, out_dir)
    except ValueError as exc:  # dataclass invariant violations
        raise ConfigError(str(exc)) from exc


def _build_attack_config(values: dict, out_dir: str | None = None) -> AttackRunConfig:
    sigma1 = values["thresholds.sigma1"]
    delta_masked = values["groundtruth.delta_v_masked"]
    return AttackRunConfig(
        captions_path=values["candidates.captions"],
        embeddings_path=values["candidates.embeddings"] or None,
        pool_size=values["candidates.pool_size"] or None,
        mode=values["attack.mode"],
        n_pre=values["attack.n_pre"],
        thresholds=ScoreThresholds(
            tau_dcs=values["thresholds.tau_dcs"],
            tau_ecs=values["thresholds.tau_ecs"],
            gamma_frac=values["thresholds.gamma_frac"],
            j=values["thresholds.j"],
            t_edge=values["thresholds.t_edge"],
        ),
        gt=GtConfig(
            delta_v=values["groundtruth.delta_v"],
            delta_v_masked=delta_masked or None,
            j=values["groundtruth.j"],
            k=values["groundtruth.k"],
            theta_var=values["groundtruth.theta_var"],
            white_frac_max=values["groundtruth.white_frac_max"],
            min_edge_density=values["groundtruth.min_edge_density"],
            t_edge=values["thresholds.t_edge"],
        ),
        postfilter=PostfilterConfig(
            enabled=values["postfilter.enabled"],
            n_samples=values["postfilter.n_samples"],
            pair_delta=values["postfilter.pair_delta"],
            component_min_frac=values["postfilter.component_min_frac"],
            use_masks=values["postfilter.use_masks"],
        ),
        sigma1=sigma1 or None,
        group_threshold=values["groundtruth.group_threshold"],
        out_dir=out_dir or values["run.out_dir"],
        run_seed=values["run.seed"],
        workers=values["run.workers"],
        failure_budget=values["run.failure_budget"],
        label_enabled=values["attack.label"],
    )


def build_inputs(values: dict) -> RunInputs:
    from verbatim_audit.retrieval import read_captions

    captions_path = values["candidates.captions"]
    if not captions_path:
        raise ConfigError("candidates.captions is required")
    if not Path(captions_path).exists():
        raise ConfigError(f"captions file not found: {captions_path}")
    captions = read_captions(captions_path)

    backend, embedder = _build_backend(values)

    index = None
    embeddings_path = values["candidates.embeddings"]
    if embeddings_path:
        from verbatim_audit.retrieval import load_index

        if not Path(embeddings_path).exists():
            raise ConfigError(f"embedding file not found: {embeddings_path}")
        index = load_index(embeddings_path)

    store = None
    corpus_dir = values["candidates.corpus_dir"] or str(Path(captions_path).parent)
    if any(r.image for r in captions):
        from verbatim_audit.genbackend.simulation import DirectoryCorpusStore

        store = DirectoryCorpusStore.open(corpus_dir, captions)

    return RunInputs(backend=backend, captions=captions, index=index, embedder=embedder, store=store)


def _build_backend(values: dict):
    mode = values["backend.mode"]
    if mode == "sim":
        from verbatim_audit.genbackend.simulation import SimulationWorld

        sim_dir = values["backend.sim_dir"]
        if not sim_dir:
            raise ConfigError("backend.mode=sim requires backend.sim_dir")
        if not (Path(sim_dir) / "simconfig.json").exists():
            raise ConfigError(f"no simconfig.json in {sim_dir}; run `va simulate` first")
        world = SimulationWorld.from_dir(sim_dir)
        return world.backend(), world.embedder()
    if mode == "remote":
        from verbatim_audit.genbackend.client import RemoteBackend
        from verbatim_audit.genbackend.simulation import SimEmbedder

        url = values["backend.url"] or os.environ.get(ENV_BACKEND_URL, "")
        if not url:
            raise ConfigError(f"backend.mode=remote requires backend.url or ${ENV_BACKEND_URL}")
        backend = RemoteBackend(
            url, timeout_s=values["backend.timeout_s"], max_retries=values["backend.max_retries"]
        )
        embedder = SimEmbedder(backend.capabilities.max_resolution)
        return backend, embedder
    raise ConfigError(f"unknown backend.mode {mode!r}")


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_simulate(args, values: dict) -> int:
    from verbatim_audit.genbackend.simulation import SimulationConfig, SimulationWorld

    cfg = SimulationConfig(
        corpus_size=args.size or values["simulate.corpus_size"],
        exact_fraction=values["simulate.exact_fraction"],
        template_fraction=values["simulate.template_fraction"],
        retrieval_fraction=values["simulate.retrieval_fraction"],
        resolution=values["simulate.resolution"],
        noise_seed=args.seed if args.seed is not None else values["simulate.noise_seed"],
        one_step_blur_sigma=values["simulate.one_step_blur_sigma"],
        dedup_exact=values["simulate.dedup_exact"],
    )
    world = SimulationWorld(cfg)
    world.check_one_step_blur(t_edge=values["thresholds.t_edge"])
    out = Path(args.out)
    world.write(out)
    manifest = world.plant_manifest()
    print(
        f"wrote {cfg.corpus_size} captions to {out} "
        f"({len(manifest['exact'])} exact, {len(manifest['template'])} template, "
        f"{len(manifest['retrieval'])} retrieval plants)"
    )
    return EXIT_OK


def cmd_attack(args, values: dict) -> int:
    if args.mode:
        values["attack.mode"] = args.mode
    if args.j:
        values["thresholds.j"] = args.j
    cfg = build_attack_config(values, out_dir=args.out)
    inputs = build_inputs(values)
    report = run_attack(cfg, inputs)
    path = report.write(cfg.out_dir)
    labeled = report.stages.get("labeling", {})
    print(f"report written to {path}")
    if labeled:
        print(f"labeled {labeled['labeled']} captions, {labeled['verbatims']} verbatims")
    return EXIT_OK


def _load_prompts(args, values: dict):
    from verbatim_audit.retrieval import read_captions

    if args.from_run:
        body = load_report(args.from_run)
        ranking = body["rankings"]["main"][: args.top] if args.top else body["rankings"]["main"]
        wanted = set(ranking)
        captions = read_captions(values["candidates.captions"])
        by_id = {r.id: r for r in captions}
        missing = wanted - set(by_id)
        if missing:
            raise ConfigError(f"{len(missing)} ranked captions missing from captions file")
        return [by_id[cid] for cid in ranking]
    if args.prompts:
        if not Path(args.prompts).exists():
            raise ConfigError(f"prompt file not found: {args.prompts}")
        return read_captions(args.prompts)
    raise ConfigError("need --prompts FILE or --from-run RUN_DIR")


def cmd_label(args, values: dict) -> int:
    from verbatim_audit.genbackend.ledger import CallLedger, LedgeredBackend
    from verbatim_audit.groundtruth import write_labels
    from verbatim_audit.imaging import save_mask
    from verbatim_audit.retrieval import group_duplicates

    cfg = build_attack_config(values, out_dir=args.out)
    inputs = build_inputs(values)
    prompts = _load_prompts(args, values) if (args.prompts or args.from_run) else inputs.captions

    dup_members: dict[int, tuple[int, ...]] = {}
    if inputs.index is not None:
        texts = {r.id: r.text for r in inputs.captions}
        groups = group_duplicates(inputs.index, cfg.group_threshold, texts)
        dup_members = {m: g.member_ids for g in groups for m in g.member_ids}

    backend = LedgeredBackend(inputs.backend, CallLedger(), stage="labeling")
    labels, masks = label_candidates(backend, prompts, inputs, cfg, dup_members)

    from verbatim_audit.pipeline import mask_files_by_witness

    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.jsonl", list(labels.values()))
    if masks:
        (out / "masks").mkdir(exist_ok=True)
        for mask_id, mask in sorted(mask_files_by_witness(labels, masks).items()):
            save_mask(mask, out / "masks" / f"{mask_id:06d}.png")
    verbatims = sum(1 for l in labels.values() if l.is_verbatim)
    print(f"labeled {len(labels)} captions -> {out / 'labels.jsonl'} ({verbatims} verbatims)")
    return EXIT_OK


def cmd_transfer(args, values: dict) -> int:
    if args.backend_url:
        values["backend.mode"] = "remote"
        values["backend.url"] = args.backend_url
    if args.sim_dir:
        values["backend.mode"] = "sim"
        values["backend.sim_dir"] = args.sim_dir
    cfg = build_attack_config(values, out_dir=args.out)
    inputs = build_inputs(values)
    prompts = _load_prompts(args, values)
    summary, labels = transfer_run(cfg, prompts, inputs)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from verbatim_audit.groundtruth import write_labels

    write_labels(out / "transfer_labels.jsonl", list(labels.values()))
    (out / "transfer.json").write_text(json.dumps({"summary": summary}, indent=2) + "\n")
    print(_format_counts_table({"transfer target": summary}))
    return EXIT_OK


def _format_counts_table(rows: dict[str, dict]) -> str:
    lines = [f"{'run':32s} {'retrieved':>9s} {'template':>8s} {'exact':>5s} {'non':>6s}"]
    for name, counts in rows.items():
        lines.append(
            f"{name:32s} {counts.get('retrieval', 0):9d} {counts.get('template', 0):8d} "
            f"{counts.get('exact', 0):5d} {counts.get('non_verbatim', 0):6d}"
        )
    return "\n".join(lines)


def cmd_report(args, values: dict) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from verbatim_audit.groundtruth import read_labels

    run_dirs = [Path(d) for d in args.run_dirs]
    bodies = {d.name or str(d): load_report(d) for d in run_dirs}
    out = Path(args.out) if args.out else run_dirs[0]
    out.mkdir(parents=True, exist_ok=True)

    fig, ax = plt.subplots(figsize=(7, 5))
    for name, body in bodies.items():
        for curve_name in ("main", "postfiltered"):
            curve = body["curves"].get(curve_name)
            if not curve:
                continue
            xs = [row[1] for row in curve]  # verbatims found
            ys = [row[2] for row in curve]
            style = "-" if curve_name == "main" else "--"
            ax.plot(xs, ys, style, label=f"{name}:{curve_name}")
    ax.set_xlabel("verbatims found")
    ax.set_ylabel("precision")
    ax.set_ylim(0.0, 1.05)
    ax.legend(loc="lower left", fontsize=8)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(out / "precision.png", dpi=120)
    fig.savefig(out / "precision.svg")
    plt.close(fig)

    first = next(iter(bodies.values()))
    if first.get("duplication"):
        fig, axes = plt.subplots(1, 2, figsize=(10, 4))
        axes[0].hist(first["duplication"]["group_sizes"], bins=30)
        axes[0].set_xlabel("duplicate group size")
        axes[0].set_ylabel("groups")
        axes[1].hist(first["duplication"]["multimodal_rates"], bins=20, range=(0, 1))
        axes[1].set_xlabel("share of group with identical prompt")
        axes[1].set_ylabel("groups")
        fig.tight_layout()
        fig.savefig(out / "duplication.png", dpi=120)
        fig.savefig(out / "duplication.svg")
        plt.close(fig)

    rows = {}
    for name, body in bodies.items():
        labels_file = Path([d for d in run_dirs if (d.name or str(d)) == name][0]) / "labels.jsonl"
        counts = {"exact": 0, "template": 0, "retrieval": 0, "non_verbatim": 0}
        if labels_file.exists():
            for label in read_labels(labels_file):
                counts[label.kind] += 1
        rows[name] = counts
    table = _format_counts_table(rows)
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    print(f"plots written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="va",
        description="extraction audit for conditional image generators",
        epilog=_config_epilog(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a config key (repeatable)")

    p = sub.add_parser("simulate", help="write a synthetic corpus with planted verbatims")
    common(p)
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--size", type=int, help="corpus size (overrides simulate.corpus_size)")
    p.add_argument("--seed", type=int, help="noise seed (overrides simulate.noise_seed)")

    p = sub.add_parser("attack", help="run the staged extraction attack")
    common(p)
    p.add_argument("--mode", choices=["whitebox", "blackbox"], help="override attack.mode")
    p.add_argument("--j", type=int, help="override thresholds.j")
    p.add_argument("--out", help="override run.out_dir")

    p = sub.add_parser("label", help="run ground-truth labeling only")
    common(p)
    p.add_argument("--prompts", help="caption JSONL to label (default: all candidates)")
    p.add_argument("--from-run", help="take the main ranking of a previous run directory")
    p.add_argument("--top", type=int, help="with --from-run: only the top N")
    p.add_argument("--out", help="override run.out_dir")

    p = sub.add_parser("report", help="render plots and a summary table from run reports")
    p.add_argument("run_dirs", nargs="+", help="one or more run directories")
    p.add_argument("--out", help="where to write plots (default: first run dir)")
    p.set_defaults(config=None)

    p = sub.add_parser("transfer", help="label a prompt list against another backend")
    common(p)
    p.add_argument("--prompts", help="caption JSONL with prompts to replay")
    p.add_argument("--from-run", help="take the main ranking of a previous run directory")
    p.add_argument("--top", type=int, help="with --from-run: only the top N")
    p.add_argument("--backend-url", help="target backend URL (switches backend.mode=remote)")
    p.add_argument("--sim-dir", help="target simulation directory (switches backend.mode=sim)")
    p.add_argument("--out", help="override run.out_dir")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            return cmd_report(args, {})
        values = load_config(args.config, args.set)
        if args.command == "simulate":
            return cmd_simulate(args, values)
        if args.command == "attack":
            return cmd_attack(args, values)
        if args.command == "label":
            return cmd_label(args, values)
        if args.command == "transfer":
            return cmd_transfer(args, values)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_BAD_CONFIG
    except (FailureBudgetExceeded, TransportError) as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED
    except AuditError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUN_FAILED


if __name__ == "__main__":
    sys.exit(main())

"""Command-line toolchain for the pipeline.

Every subcommand accepts `--config FILE` (a JSON dict of defaults whose
keys mirror the long flag names); explicit flags override the file. Exit
codes: 0 success, 1 validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dataset as dataset_mod
from . import geometry, harness, policy, retiming, unified_space
from .embodiments import load_embodiment_config
from .errors import CrossembError
from .kinematics import IkParams, forward_kinematics, ik_solve, retarget_action
from .geometry import Pose

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True)


def _load_defaults(args: argparse.Namespace) -> argparse.Namespace:
    path = getattr(args, "config", None)
    if not path:
        return args
    defaults = json.loads(Path(path).read_text())
    for key, value in defaults.items():
        attr = key.replace("-", "_")
        if getattr(args, attr, None) in (None, False):
            setattr(args, attr, value)
    return args


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=float)


def _chain(config, name: str):
    try:
        return {"left_arm": config.left_arm, "right_arm": config.right_arm,
                "neck": config.neck}[name]
    except KeyError:
        raise CrossembError(f"unknown chain {name!r}; use left_arm, right_arm, or neck")


def _trajectory_to_json(traj: retiming.Trajectory) -> dict:
    doc = {
        "embodiment_tag": traj.embodiment_tag,
        "nominal_rate": traj.nominal_rate,
        "frames": [
            {"t": float(t), "state": s.tolist()}
            for t, s in zip(traj.times, traj.states)
        ],
    }
    if traj.head_positions is not None:
        doc["head_positions"] = traj.head_positions.tolist()
    return doc


def _trajectory_from_json(doc: dict) -> retiming.Trajectory:
    frames = doc["frames"]
    return retiming.Trajectory(
        times=np.array([f["t"] for f in frames]),
        states=np.array([f["state"] for f in frames]),
        embodiment_tag=doc.get("embodiment_tag", "unknown"),
        nominal_rate=float(doc.get("nominal_rate", 30.0)),
        head_positions=np.array(doc["head_positions"]) if "head_positions" in doc else None,
    )


def _cmd_ingest(args) -> int:
    options = dataset_mod.IngestOptions(
        alpha=args.alpha,
        out_rate=args.rate,
        feature_dim=args.feature_dim,
    )
    config = load_embodiment_config(args.embodiment_config) if args.embodiment_config else None
    episodes = []
    for raw_dir in args.raw:
        raw = dataset_mod.load_raw_capture(raw_dir)
        episodes.append(dataset_mod.ingest(raw, config=config, options=options))
    dataset_mod.write_dataset(episodes, args.out)
    print(f"ingested {len(episodes)} episode(s) into {args.out}")
    return EXIT_OK


def _cmd_retime(args) -> int:
    traj = _trajectory_from_json(json.loads(Path(args.input).read_text()))
    out = retiming.retime(traj, args.alpha, args.rate)
    text = _dumps(_trajectory_to_json(out))
    if args.output:
        Path(args.output).write_text(text)
    else:
        print(text)
    return EXIT_OK


def _cmd_stats(args) -> int:
    manifest, episodes = dataset_mod.read_dataset(args.dataset)
    root = Path(args.dataset)
    (root / "stats").mkdir(exist_ok=True)
    files = {}
    for kind in ("state", "action"):
        stats = dataset_mod.stats_from_episodes(
            episodes, mode=args.mode, epsilon=args.epsilon, kind=kind
        )
        rel = f"stats/{kind}.json"
        (root / rel).write_text(_dumps(stats.to_json_dict()))
        files[kind] = rel
    dataset_mod.write_dataset(episodes, args.dataset, stats_files=files)
    print(f"wrote stats for {len(episodes)} episode(s): {files}")
    return EXIT_OK


def _cmd_train(args) -> int:
    manifest, episodes = dataset_mod.read_dataset(args.dataset)
    pairs = dataset_mod.episodes_to_pairs_by_tag(episodes, args.chunk_length, args.stride)
    ratio = dataset_mod.default_ratio(pairs)
    sampler = dataset_mod.MixedSampler(pairs, ratio, seed=args.seed)
    state_stats = dataset_mod.stats_from_episodes(
        episodes, mode=args.mode, epsilon=args.epsilon, kind="state"
    )
    action_stats = dataset_mod.stats_from_episodes(
        episodes, mode=args.mode, epsilon=args.epsilon, kind="action"
    )
    config = policy.PolicyConfig(
        feature_dim=manifest["feature_dim"],
        chunk_length=args.chunk_length,
        hidden_layers=tuple(int(h) for h in args.hidden.split(",")),
        learning_rate=args.lr,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    model = policy.init_model(config, state_stats, action_stats)
    model, report = policy.train(model, sampler.stream(), args.steps)
    policy.save_checkpoint(model, args.out)
    print(f"trained {args.steps} step(s); final loss {report.total[-1]:.6f}; saved {args.out}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    model = policy.load_checkpoint(args.checkpoint)
    state = _parse_floats(args.state)
    feature = _parse_floats(args.feature)
    chunk = policy.predict(model, state, feature, tag=args.tag)
    print(_dumps({"action_chunk": chunk.tolist()}))
    return EXIT_OK


def _cmd_retarget(args) -> int:
    config = load_embodiment_config(args.embodiment_config)
    action = _parse_floats(args.action)
    task_home = _parse_floats(args.q_prev) if args.q_prev else None
    n_l, n_r = config.left_arm.n_joints, config.right_arm.n_joints
    if task_home is None:
        from .kinematics import RobotCommand

        cmd = RobotCommand(
            left_arm_q=config.left_arm.mid_range(),
            right_arm_q=config.right_arm.mid_range(),
            neck_q=np.zeros(2),
            left_hand=np.full(6, 0.5),
            right_hand=np.full(6, 0.5),
        )
    else:
        from .kinematics import RobotCommand

        cmd = RobotCommand(
            left_arm_q=task_home[:n_l],
            right_arm_q=task_home[n_l : n_l + n_r],
            neck_q=task_home[n_l + n_r : n_l + n_r + 2],
            left_hand=task_home[n_l + n_r + 2 : n_l + n_r + 8],
            right_hand=task_home[n_l + n_r + 8 : n_l + n_r + 14],
        )
    out, diag = retarget_action(action, config, cmd)
    print(
        _dumps(
            {
                "left_arm_q": out.left_arm_q.tolist(),
                "right_arm_q": out.right_arm_q.tolist(),
                "neck_q": out.neck_q.tolist(),
                "left_hand": out.left_hand.tolist(),
                "right_hand": out.right_hand.tolist(),
                "diagnostics": {
                    "left": {"status": diag.left.status, "pos_err": diag.left.pos_err,
                             "rot_err": diag.left.rot_err},
                    "right": {"status": diag.right.status, "pos_err": diag.right.pos_err,
                              "rot_err": diag.right.rot_err},
                    "clamp_events": list(diag.clamp_events),
                },
            }
        )
    )
    return EXIT_OK


def _cmd_fk(args) -> int:
    config = load_embodiment_config(args.embodiment_config)
    chain = _chain(config, args.chain)
    q = _parse_floats(args.q)
    if args.degrees:
        q = np.deg2rad(q)
    pose = forward_kinematics(chain, q)
    print(
        _dumps(
            {
                "translation": pose.translation.tolist(),
                "rotation_matrix": pose.rotation.tolist(),
                "rotation_quaternion": geometry.quat_from_matrix(pose.rotation).tolist(),
            }
        )
    )
    return EXIT_OK


def _cmd_ik(args) -> int:
    config = load_embodiment_config(args.embodiment_config)
    chain = _chain(config, args.chain)
    target = Pose(
        geometry.quat_to_matrix(_parse_floats(args.target_quat))
        if args.target_quat
        else np.eye(3),
        _parse_floats(args.target_pos),
    )
    q_init = _parse_floats(args.q_init) if args.q_init else chain.mid_range()
    q, status = ik_solve(chain, target, q_init, IkParams())
    achieved = forward_kinematics(chain, q)
    print(
        _dumps(
            {
                "q": q.tolist(),
                "status": status,
                "achieved_translation": achieved.translation.tolist(),
                "position_error": float(
                    np.linalg.norm(achieved.translation - target.translation)
                ),
            }
        )
    )
    return EXIT_OK


def _cmd_rollout(args) -> int:
    from .embodiments import BUILTIN_CONFIGS
    from .tasks import make_reach_task

    config = load_embodiment_config(args.embodiment_config)
    model = policy.load_checkpoint(args.checkpoint)
    settings = harness.ExperimentSettings()
    task = make_reach_task(config, feature_dim=model.config.feature_dim)
    goal = (
        _parse_floats(args.goal)
        if args.goal
        else task.grid.cell_center(args.cell)
    )
    result = harness.rollout(
        harness.PolicyAgent(model),
        config,
        task,
        goal,
        max_steps=args.max_steps,
        seed=args.seed,
    )
    print(
        _dumps(
            {
                "success": result.success,
                "steps_executed": result.steps_executed,
                "final_goal_error_m": result.final_goal_error,
                "mean_tracking_error_m": float(result.tracking_error.mean())
                if result.tracking_error.size
                else 0.0,
                "clamp_events": result.clamp_events,
            }
        )
    )
    return EXIT_OK


def _cmd_experiment(args) -> int:
    if args.kind == "cotraining":
        report = harness.cotraining_experiment(
            robot_counts=tuple(int(v) for v in args.robot_counts.split(",")),
            human_demos=args.human_demos,
            seeds=tuple(range(args.seeds)),
            out_dir=args.out,
        )
    else:
        report = harness.ablation_suite(
            seeds=tuple(range(args.seeds)),
            human_demos=args.human_demos,
            out_dir=args.out,
        )
    print(f"experiment {args.kind}: {len(report['rows'])} rows written to {args.out}")
    return EXIT_OK


def _cmd_validate(args) -> int:
    problems = []
    try:
        manifest, episodes = dataset_mod.read_dataset(args.dataset)
    except CrossembError as exc:
        print(f"validation failed: {exc}")
        return EXIT_FAILURE
    feature_dim = manifest["feature_dim"]
    for ep in episodes:
        if ep.feature_dim != feature_dim:
            problems.append(f"{ep.id}: feature dim {ep.feature_dim} != {feature_dim}")
        if len(ep) >= 2 and np.any(np.diff(ep.times) <= 0):
            problems.append(f"{ep.id}: timestamps not strictly increasing")
        meta = ep.metadata
        if ep.embodiment_tag == "human" and not meta.get("retimed", False):
            problems.append(f"{ep.id}: human episode not retimed")
        if ep.embodiment_tag != "human" and meta.get("alpha_applied", 1.0) != 1.0:
            problems.append(f"{ep.id}: robot episode has alpha != 1")
        for i, state in enumerate(ep.states):
            try:
                unified_space.validate_state_vector(state, check_reach=args.check_reach)
            except CrossembError as exc:
                problems.append(f"{ep.id} frame {i}: {exc}")
                break
    stats_files = manifest.get("stats_files") or {}
    for kind, rel in stats_files.items():
        doc = json.loads((Path(args.dataset) / rel).read_text())
        stats = unified_space.NormalizationStats.from_json_dict(doc)
        for tag, entry in stats.entries.items():
            if np.any(entry.std < stats.epsilon - 1e-12):
                problems.append(f"stats {kind}/{tag}: std below epsilon")
    if problems:
        for p in problems:
            print(f"FAIL {p}")
        return EXIT_FAILURE
    print(f"ok: {len(episodes)} episode(s) valid")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossemb",
        description="Cross-embodiment demonstration pipeline toolchain",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="convert raw capture directories into a dataset")
    p.add_argument("--config")
    p.add_argument("--raw", nargs="+", required=True, help="raw episode directories")
    p.add_argument("--out", required=True)
    p.add_argument("--embodiment-config", dest="embodiment_config")
    p.add_argument("--alpha", type=float, default=dataset_mod.DEFAULT_ALPHA)
    p.add_argument("--rate", type=float, default=dataset_mod.DEFAULT_OUT_RATE)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=16)
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("retime", help="retime a trajectory JSON file")
    p.add_argument("--config")
    p.add_argument("--input", required=True)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--rate", type=float, default=30.0)
    p.add_argument("--output")
    p.set_defaults(func=_cmd_retime)

    p = sub.add_parser("stats", help="compute normalization statistics for a dataset")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mode", choices=[unified_space.MODE_SHARED,
                                      unified_space.MODE_PER_EMBODIMENT],
                   default=unified_space.MODE_SHARED)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(func=_cmd_stats)

    p = sub.add_parser("train", help="train a policy on a dataset")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--chunk-length", dest="chunk_length", type=int, default=30)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--hidden", default="256,256")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=[unified_space.MODE_SHARED,
                                      unified_space.MODE_PER_EMBODIMENT],
                   default=unified_space.MODE_SHARED)
    p.add_argument("--epsilon", type=float, default=1e-6)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("predict", help="predict an action chunk from a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--state", required=True, help="54 comma-separated values")
    p.add_argument("--feature", required=True, help="F comma-separated values")
    p.add_argument("--tag")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("retarget", help="retarget a unified action to a robot command")
    p.add_argument("--config")
    p.add_argument("--embodiment-config", dest="embodiment_config", required=True)
    p.add_argument("--action", required=True, help="54 comma-separated values")
    p.add_argument("--q-prev", dest="q_prev", help="warm-start command values")
    p.set_defaults(func=_cmd_retarget)

    p = sub.add_parser("fk", help="forward kinematics of a chain")
    p.add_argument("--config")
    p.add_argument("--embodiment-config", dest="embodiment_config", required=True)
    p.add_argument("--chain", default="right_arm")
    p.add_argument("--q", required=True, help="joint values, comma separated (radians)")
    p.add_argument("--degrees", action="store_true")
    p.set_defaults(func=_cmd_fk)

    p = sub.add_parser("ik", help="inverse kinematics for a chain")
    p.add_argument("--config")
    p.add_argument("--embodiment-config", dest="embodiment_config", required=True)
    p.add_argument("--chain", default="right_arm")
    p.add_argument("--target-pos", dest="target_pos", required=True)
    p.add_argument("--target-quat", dest="target_quat", help="w,x,y,z")
    p.add_argument("--q-init", dest="q_init")
    p.set_defaults(func=_cmd_ik)

    p = sub.add_parser("rollout", help="closed-loop rollout of a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--embodiment-config", dest="embodiment_config", default="humanoid_b")
    p.add_argument("--goal", help="x,y,z")
    p.add_argument("--cell", type=int, default=4)
    p.add_argument("--max-steps", dest="max_steps", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_rollout)

    p = sub.add_parser("experiment", help="run the co-training or ablation experiment")
    p.add_argument("--config")
    p.add_argument("kind", choices=["cotraining", "ablation"])
    p.add_argument("--out", required=True)
    p.add_argument("--robot-counts", dest="robot_counts", default="4,8,16,32")
    p.add_argument("--human-demos", dest="human_demos", type=int, default=72)
    p.add_argument("--seeds", type=int, default=5)
    p.set_defaults(func=_cmd_experiment)

    p = sub.add_parser("validate", help="run the invariant suite over a dataset")
    p.add_argument("--config")
    p.add_argument("--dataset", required=True)
    p.add_argument("--check-reach", dest="check_reach", action="store_true")
    p.set_defaults(func=_cmd_validate)

    return parser


def cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors and 0 for --help
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        args = _load_defaults(args)
        return args.func(args)
    except CrossembError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main() -> None:
    sys.exit(cli())

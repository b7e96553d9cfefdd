"""Acceptance gate. Each test covers one criterion and reports a verdict line
in the terminal summary."""

import filecmp
import itertools
import math
import random
import time

import pytest

from cosplan import environments as env
from cosplan.backends import OracleBackend, RandomBackend, RemoteBackend, RemoteConfig, ReplayTransport
from cosplan.cli import main as cli_main
from cosplan.environments.maze import DIRECTIONS
from cosplan.environments import ActionRecord, BlocksLayout, BlocksState, MazeLayout, MazeState, ShuffleState
from cosplan.harness import ablate, evaluate
from cosplan.prompts import MethodConfig
from cosplan.scene_graph import from_state, update
from cosplan.sgi import run_sgi
from cosplan.task_forge import BLOCK_COLORS, NONE_OF_THE_ABOVE, ForgeConfig, generate_dataset, read_dataset

from conftest import FIXTURES
from oracles import (
    blocks_bfs,
    blocks_states,
    canonical_goals,
    cycles,
    maze_all_pairs,
    min_swaps_bruteforce,
)

DOMAINS = ("maze", "blocks", "shuffle")


def _accuracy(records):
    return sum(r.correct for r in records) / len(records)


def _binomial_3sigma(p, n):
    return 3 * math.sqrt(p * (1 - p) / n)


# 1 -----------------------------------------------------------------------------------


def test_c1_oracle_pipeline_soundness(criterion):
    with criterion(1, "oracle SGI is 100% on step completion and error detection, < 2 min") as notes:
        oracle = OracleBackend()
        t0 = time.perf_counter()
        for domain in DOMAINS:
            data = generate_dataset(domain, 500, 2024)
            step = evaluate(data, "step", oracle, MethodConfig("sgi"))
            assert len(step) == 500
            assert _accuracy(step) == 1.0, domain
            if domain == "shuffle":
                continue
            err = evaluate(data, "error", oracle, MethodConfig("sgi"))
            assert len(err) == 500 and _accuracy(err) == 1.0, domain
            clean = generate_dataset(domain, 500, 2025, ForgeConfig(error_free=True))
            err_free = evaluate(clean, "error", oracle, MethodConfig("sgi"))
            assert _accuracy(err_free) == 1.0, domain
            by_id = {i.id: i for i in clean}
            assert all(by_id[r.instance_id].error_mcq.options[r.chosen] == NONE_OF_THE_ABOVE for r in err_free)
        elapsed = time.perf_counter() - t0
        notes.append(f"{elapsed:.1f}s")
        assert elapsed < 120.0


# 2 -----------------------------------------------------------------------------------


def test_c2_random_baselines(criterion):
    with criterion(2, "random backend: step 20% within 3 sigma; error within 1.5 pt of mean 1/(L+1)") as notes:
        data = generate_dataset("maze", 5000, 77)
        backend = RandomBackend(seed=5)
        step = _accuracy(evaluate(data, "step", backend, MethodConfig("vanilla")))
        bound = _binomial_3sigma(0.2, 5000)
        notes.append(f"step {100 * step:.2f}% (20 +/- {100 * bound:.2f})")
        assert abs(step - 0.2) <= bound

        err_records = evaluate(data, "error", backend, MethodConfig("vanilla"))
        analytic = sum(1 / (len(i.context) + 1) for i in data if i.error_mcq) / len(err_records)
        err = _accuracy(err_records)
        notes.append(f"error {100 * err:.2f}% vs analytic {100 * analytic:.2f}%")
        assert abs(err - analytic) <= 0.015


# 3 -----------------------------------------------------------------------------------


def _winning_options(inst):
    true_state = env.clear_violations(env.simulate(inst.initial, inst.context).final)
    out = []
    for label, actions in inst.step_mcq.options.items():
        traj = env.simulate(true_state, actions)
        if traj.clean and env.is_goal(traj.final, inst.goal):
            out.append(label)
    return out


def test_c3_safeguard_property(criterion):
    with criterion(3, "exactly one violation-free goal-reaching option; one no-correction distractor") as notes:
        failures = []
        for domain in DOMAINS:
            for inst in generate_dataset(domain, 1000, 31337):
                wins = _winning_options(inst)
                if wins != [inst.step_mcq.correct_label]:
                    failures.append((inst.id, "winning", wins))
                n_nc = len(inst.step_mcq.label_for_tag("no_correction_distractor"))
                # shuffle contexts hold no error, so there is nothing to leave uncorrected
                expected = 0 if domain == "shuffle" else 1
                if n_nc != expected:
                    failures.append((inst.id, "no_correction", n_nc))
        notes.append(f"{len(failures)} failures over 3000 instances")
        assert failures == []


# 4 -----------------------------------------------------------------------------------


def _maze_sweep():
    checked = 0
    for rows in range(1, 5):
        for cols in range(1, 5):
            cells = [(r, c) for r in range(rows) for c in range(cols)]
            for k in range(3):
                for obstacles in itertools.combinations(cells, k):
                    free, idx, d = maze_all_pairs(rows, cols, obstacles)
                    for s in free:
                        for g in free:
                            lay = MazeLayout(rows, cols, obstacles, s, g)
                            state, goal = MazeState(lay, s), MazeState(lay, g)
                            want = d[idx[s]][idx[g]]
                            assert env.distance_to_goal(state, goal) == want
                            if want == float("inf"):
                                with pytest.raises(env.UnsolvableError):
                                    env.solve(state, goal)
                            else:
                                plan = env.solve(state, goal)
                                assert len(plan) == want
                                traj = env.simulate(state, plan)
                                assert traj.clean and env.is_goal(traj.final, goal)
                            checked += 1
    return checked


def _blocks_sweep():
    checked = 0
    for n in range(1, 6):
        layout = BlocksLayout(n, BLOCK_COLORS[:n])
        states = blocks_states(n)
        for goal_cols in canonical_goals(n):
            dist = blocks_bfs(goal_cols)
            assert len(dist) == len(states)
            # columns left empty by the goal are interchangeable, so one start per orbit suffices
            empty = [c for c, s in enumerate(goal_cols) if not s]
            seen = set()
            goal = BlocksState(layout, goal_cols)
            for cols in states:
                key = list(cols)
                for c, s in zip(empty, sorted(cols[c] for c in empty)):
                    key[c] = s
                key = tuple(key)
                if key in seen:
                    continue
                seen.add(key)
                state = BlocksState(layout, key)
                plan = env.solve(state, goal)
                assert len(plan) == dist[key], (key, goal_cols)
                traj = env.simulate(state, plan)
                assert traj.clean and env.is_goal(traj.final, goal)
                checked += 1
    return checked


def _shuffle_sweep():
    checked = 0
    grids = [(1, 1), (1, 2), (2, 1), (1, 3), (3, 1), (2, 2), (1, 4), (1, 5), (2, 3), (3, 2), (1, 6)]
    for grid in grids:
        size = grid[0] * grid[1]
        goal = ShuffleState(grid, tuple(range(size)))
        for perm in itertools.permutations(range(size)):
            state = ShuffleState(grid, perm)
            plan = env.solve(state, goal)
            assert len(plan) == size - cycles(perm) == min_swaps_bruteforce(perm)
            traj = env.simulate(state, plan)
            assert traj.clean and env.is_goal(traj.final, goal)
            checked += 1
    return checked


def test_c4_solver_optimality(criterion):
    with criterion(4, "solver minima equal exhaustive enumeration (maze <= 4x4, blocks <= 5, tiles <= 6)") as notes:
        m = _maze_sweep()
        b = _blocks_sweep()
        s = _shuffle_sweep()
        notes.append(f"{m} maze pairs, {b} blocks pairs, {s} permutations")


# 5 -----------------------------------------------------------------------------------


def _random_action(state, rng):
    if isinstance(state, MazeState):
        lay = state.layout
        src = state.agent if rng.random() < 0.7 else (rng.randint(-1, lay.rows), rng.randint(-1, lay.cols))
        dst = (src[0] + rng.randint(-1, 1), src[1] + rng.randint(-1, 1))
        if rng.random() < 0.5:
            dr, dc = rng.choice(DIRECTIONS)
            dst = (src[0] + dr, src[1] + dc)
        return ActionRecord.maze(src, dst)
    if isinstance(state, BlocksState):
        n = state.layout.num_blocks
        legal = env.legal_actions(state)
        if legal and rng.random() < 0.6:
            return rng.choice(legal)
        level = rng.choice([None, None, rng.randint(1, n + 2)])
        return ActionRecord.block(rng.randint(0, n + 2), rng.randint(0, 6), rng.randint(0, 6), level)
    rows, cols = state.grid
    return ActionRecord.swap((rng.randint(-1, rows), rng.randint(0, cols - 1)),
                             (rng.randint(0, rows - 1), rng.randint(-1, cols)))


def test_c5_scene_graph_commutation(criterion):
    with criterion(5, "from_state . apply == update . from_state on 10,000 pairs") as notes:
        rng = random.Random(99)
        pool = []
        for domain in DOMAINS:
            for inst in generate_dataset(domain, 60, 8):
                traj = env.simulate(inst.initial, inst.context + inst.step_mcq.options[inst.step_mcq.correct_label])
                pool.extend(env.clear_violations(s) for s in traj.states)
        mismatches = faults = 0
        for _ in range(10_000):
            state = rng.choice(pool)
            action = _random_action(state, rng)
            outcome = env.apply(state, action)
            faults += not outcome.ok
            via_env = from_state(outcome.state).without_history()
            via_graph = update(from_state(state), action)
            if via_env != via_graph.without_history() or via_graph.action_history[-1]["validity"] != outcome.ok:
                mismatches += 1
        notes.append(f"{mismatches} mismatches, {faults} illegal actions exercised")
        assert mismatches == 0
        assert faults > 1000


# 6 -----------------------------------------------------------------------------------


def _replay(name, walkthrough):
    doc, inst = walkthrough(name)
    transport = ReplayTransport.from_file(FIXTURES / f"walkthrough_{name}.json")
    backend = RemoteBackend(RemoteConfig(endpoint="http://replay.invalid/v1/chat/completions", max_retries=0),
                            transport=transport)
    result = run_sgi(inst, backend, "step")
    assert len(transport.requests) == len(transport.replies)
    return doc, result


def test_c6_walkthrough_replay(criterion, walkthrough):
    with criterion(6, "walkthrough replay: blocks A=100 > B=92 picks A; maze A has 7 steps and scores 100") as notes:
        doc, res = _replay("blocks", walkthrough)
        assert res.scores == {"A": 100.0, "B": 92.0}
        assert res.label == "A"
        doc, res = _replay("maze", walkthrough)
        path_length = sum(1 for t in res.trace if t.phase == "option:A")
        assert path_length == 7
        assert res.scores["A"] == 100.0
        assert res.label == "A"
        notes.append(f"maze scores {res.scores}")


# 7 -----------------------------------------------------------------------------------


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    if mismatch or errors:
        return False
    return all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_c7_determinism(criterion, tmp_path):
    with criterion(7, "identical generate runs are byte-identical; oracle eval records identical"):
        for domain in DOMAINS:
            a, b = tmp_path / f"{domain}_a", tmp_path / f"{domain}_b"
            for out in (a, b):
                assert cli_main(["generate", "--domain", domain, "--count", "40", "--seed", "13", "--out", str(out)]) == 0
            assert _same_tree(a, b), domain
            _, data = read_dataset(a)
            first = evaluate(data, "step", OracleBackend(), MethodConfig("sgi"), parallel=4)
            second = evaluate(data, "step", OracleBackend(), MethodConfig("sgi"), parallel=1)
            assert first == second


# 8 -----------------------------------------------------------------------------------


def test_c8_ablation_sanity(criterion):
    with criterion(8, "random accuracy tracks 1/k; oracle flat at 100% over k_reveal and obstacle_count") as notes:
        count = 1500
        bundles = ablate("maze", "n_options", list(range(2, 11)), "step", RandomBackend(seed=3), count=count,
                         seed=4, cfg=MethodConfig("vanilla"))
        assert [b.params["n_options"] for b in bundles] == list(range(2, 11))
        for b in bundles:
            k = b.params["n_options"]
            assert abs(b.top1 - 1 / k) <= _binomial_3sigma(1 / k, count), (k, b.top1)
        notes.append(" ".join(f"k{b.params['n_options']}={100 * b.top1:.1f}" for b in bundles))

        oracle = OracleBackend()
        for domain in ("maze", "blocks"):
            flat = ablate(domain, "k_reveal", [1, 2, 3, 4], "step", oracle, count=150, seed=6)
            assert [b.top1 for b in flat] == [1.0] * 4
        flat = ablate("maze", "obstacle_count", [0, 1, 2, 3, 4, 5], "step", oracle, count=150, seed=6)
        assert [b.top1 for b in flat] == [1.0] * 6

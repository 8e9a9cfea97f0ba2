"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v`` (the lines are printed
even under output capture) or ``python3 tests/test_acceptance.py``.
"""

import json
import random
import time

import pytest

from conftest import cause, effect, scenario_records
from oracles import cause_ok, effect_ok, maximal_assignments, random_small_case
from triad_cep import codec
from triad_cep.cli import main
from triad_cep.correlate import CorrelationConfig, correlate
from triad_cep.model import AGGREGATION_MODEL, CauseKind, Column, RuleId, Severity
from triad_cep.pcap import parse_capture
from triad_cep.pipeline import analyze
from triad_cep.scenario import (
    RULE_FOR_ANOMALY,
    AnomalyKind,
    AnomalySpec,
    InvalidSpec,
    Profile,
    ScenarioSpec,
    generate,
)

import test_pcap


@pytest.fixture
def verdict(capsys):
    def say(n, ok, elapsed, limit, detail):
        ok = ok and elapsed < limit
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail} ({elapsed:.2f}s, limit {limit}s)")
        assert ok, detail
    return say


def test_1_nine_cell_coverage(verdict):
    t0 = time.perf_counter()
    cells = {(lvl, col) for lvl in (1, 2, 3) for col in Column}
    types = list(AGGREGATION_MODEL.values())
    ok = set(AGGREGATION_MODEL) == cells and len(types) == len(set(types)) == 9
    ok = ok and all(isinstance(t, type) for t in types)
    verdict(1, ok, time.perf_counter() - t0, 1, f"{len(set(types))} distinct types over {len(cells)} cells")


def _random_spec(seed: int) -> ScenarioSpec:
    rng = random.Random(seed)
    if rng.random() < 0.5:
        hosts = rng.randint(3, 10)
        spec = ScenarioSpec(seed, Profile.REMOTE_MAINTENANCE, hosts, sessions=1 if hosts > 7 else rng.randint(1, 2))
        kinds = [AnomalyKind.INCONSISTENT_TICKET, AnomalyKind.MISCONFIGURATION, AnomalyKind.HIGH_ERROR_HOST]
    else:
        hosts = rng.randint(6, 10)
        spec = ScenarioSpec(seed, Profile.PLC_FIELDBUS, hosts, sessions=rng.randint(1, 6))
        kinds = [AnomalyKind.SPOOFED_WRITE, AnomalyKind.LOW_DEGREE_ICS, AnomalyKind.UNIQUE_SETTING]
    if rng.random() < 0.5:
        injected = (AnomalySpec(rng.choice(kinds), rng.randrange(hosts)),)
        candidate = ScenarioSpec(spec.seed, spec.profile, spec.host_count, spec.sessions, injected)
        try:
            generate(candidate)
            spec = candidate
        except InvalidSpec:
            pass
    return spec


def test_2_conservation_suite(verdict):
    t0 = time.perf_counter()
    bad = []
    sizes = []
    for seed in range(1, 101):
        spec = _random_spec(seed)
        causes, packets, effects = scenario_records(generate(spec))
        an = analyze(causes, packets, effects)
        sums = (
            len(packets),
            sum(len(t.traffic) for t in an.correlation.triads),
            sum(f.packet_count for f in an.flows),
            sum(e.packet_count for e in an.graph.edges.values()),
        )
        sizes.append(len(packets))
        if len(set(sums)) != 1 or spec.host_count > 10 or len(packets) > 200:
            bad.append((seed, sums))
    detail = f"100 corpora, {min(sizes)}-{max(sizes)} packets each, {len(bad)} violations {bad[:3]}"
    verdict(2, not bad, time.perf_counter() - t0, 30, detail)


def test_3_correlation_oracle(verdict):
    t0 = time.perf_counter()
    cfg = CorrelationConfig()
    w, s = cfg.window_us, cfg.max_clock_skew_us
    rng = random.Random(20240601)
    violations = 0
    bound = 0
    for _ in range(200):
        bursts, packets, causes, effects = random_small_case(rng)
        res = correlate(causes, packets, effects, cfg)
        got_c = {c.id: None for c in causes}
        got_e = {e.id: None for e in effects}
        for t in res.triads:
            if t.cause:
                got_c[t.cause.id] = t.traffic[0].id
            if t.effect:
                got_e[t.effect.id] = t.traffic[0].id
        bound += sum(v is not None for v in got_c.values()) + sum(v is not None for v in got_e.values())
        if got_c not in maximal_assignments(causes, bursts, lambda r, b: cause_ok(r, b, w, s)):
            violations += 1
        elif got_e not in maximal_assignments(effects, bursts, lambda r, b: effect_ok(r, b, w, s)):
            violations += 1
    verdict(3, violations == 0, time.perf_counter() - t0, 60,
            f"200 random cases, {bound} bindings checked, {violations} violations")


SINGLES = [
    (Profile.REMOTE_MAINTENANCE, AnomalyKind.INCONSISTENT_TICKET, 3),
    (Profile.REMOTE_MAINTENANCE, AnomalyKind.MISCONFIGURATION, 7),
    (Profile.REMOTE_MAINTENANCE, AnomalyKind.HIGH_ERROR_HOST, 5),
    (Profile.PLC_FIELDBUS, AnomalyKind.SPOOFED_WRITE, 6),
    (Profile.PLC_FIELDBUS, AnomalyKind.LOW_DEGREE_ICS, 2),
    (Profile.PLC_FIELDBUS, AnomalyKind.UNIQUE_SETTING, 9),
]


def test_4_rule_detection(verdict):
    t0 = time.perf_counter()
    failures = []
    runs = 0
    for profile, kind, target in SINGLES:
        spec = ScenarioSpec(17, profile, 10, sessions=3, injected=(AnomalySpec(kind, target),))
        an = analyze(*scenario_records(generate(spec)))
        runs += 1
        rules = [f.rule_id for f in an.findings]
        if rules != [RULE_FOR_ANOMALY[kind]]:
            failures.append((kind.value, [r.value for r in rules]))
    for profile in Profile:
        for seed in (17, 18, 19):
            an = analyze(*scenario_records(generate(ScenarioSpec(seed, profile, 10, sessions=3))))
            runs += 1
            if an.findings:
                failures.append((f"clean {profile.value} seed {seed}", [f.rule_id.value for f in an.findings]))
    assert {RULE_FOR_ANOMALY[k] for _, k, _ in SINGLES} == set(RuleId)
    verdict(4, not failures and runs == 12, time.perf_counter() - t0, 10,
            f"{runs} scenarios (6 single injections, 6 clean), failures: {failures}")


def test_5_modbus_golden(verdict):
    t0 = time.perf_counter()
    res = parse_capture(test_pcap.hand_capture())
    m = res.packets[0].modbus if len(res.packets) == 1 else None
    ok = m is not None and (m.transaction_id, m.function_code, m.register_address, m.values) == (1, 6, 16, (512,))
    verdict(5, ok, time.perf_counter() - t0, 1, f"decoded {m}")


def test_6_determinism(verdict, tmp_path):
    t0 = time.perf_counter()
    corpora = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["gen", "--profile", "maintenance", "--hosts", "8", "--seed", "77", "--sessions", "2",
                     "--inject", "Misconfiguration@4", "--out-dir", str(out)])
        assert code == 0
        corpora.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    gen_same = corpora[0] == corpora[1]
    d = tmp_path / "a"
    outputs = []
    for i in range(2):
        rep, dot = tmp_path / f"r{i}.json", tmp_path / f"g{i}.dot"
        main(["run", "--cause", str(d / "causes.jsonl"), "--effect", str(d / "effects.jsonl"),
              "--pcap", str(d / "traffic.pcap"), "--hosts", str(d / "hosts.jsonl"),
              "--out", str(rep), "--dot", str(dot)])
        outputs.append((rep.read_bytes(), dot.read_bytes()))
    run_same = outputs[0] == outputs[1] and json.loads(outputs[0][0])["findings"]
    verdict(6, bool(gen_same and run_same), time.perf_counter() - t0, 5,
            f"gen corpora identical={gen_same}, run report+DOT identical={bool(run_same)}")


def _node_text(n: int) -> tuple:
    causes, effects = [], []
    for i in range(n):
        # half the records originate at the host, half describe it as an effect
        if i % 2:
            causes.append(cause(i * 1000, origin="H", subject="peer", kind=CauseKind.TICKET_ISSUED,
                                payload={"ticket": f"T-{i}", "note": "x" * 64}, cid=f"c{i:05d}"))
        else:
            effects.append(effect(i * 1000, host="H", severity=Severity.ERROR if i % 3 else Severity.INFO,
                                  payload={"message": f"line {i} " + "y" * 64}, eid=f"e{i:05d}"))
    an = analyze(causes, [], effects)
    node = an.graph.nodes["H"]
    counters = list(node.cause_summary.values()) + list(node.effect_summary.values())
    return codec.dumps(node), counters


def test_7_compression_contract(verdict):
    t0 = time.perf_counter()
    small, small_counts = _node_text(10)
    big, big_counts = _node_text(10_000)
    width = sum(abs(len(str(a)) - len(str(b))) for a, b in zip(small_counts, big_counts))
    diff = abs(len(big) - len(small))
    leak = "x" * 64 in big or "y" * 64 in big or "T-1" in big
    verdict(7, diff <= width and not leak, time.perf_counter() - t0, 10,
            f"NodeSummary {len(small)}B at 10 records vs {len(big)}B at 10000, diff {diff}B, "
            f"counter width allowance {width}B")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))

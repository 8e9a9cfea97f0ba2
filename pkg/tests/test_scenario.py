import json

import pytest

from conftest import scenario_records
from triad_cep.model import CauseKind, Completeness, EffectKind, RuleId
from triad_cep.scenario import (
    AnomalyKind,
    AnomalySpec,
    InvalidSpec,
    Profile,
    ScenarioSpec,
    SplitMix64,
    generate,
    parse_injection,
)

SINGLES = [
    (Profile.REMOTE_MAINTENANCE, AnomalyKind.INCONSISTENT_TICKET, 4),
    (Profile.REMOTE_MAINTENANCE, AnomalyKind.MISCONFIGURATION, 5),
    (Profile.REMOTE_MAINTENANCE, AnomalyKind.HIGH_ERROR_HOST, 6),
    (Profile.PLC_FIELDBUS, AnomalyKind.SPOOFED_WRITE, 5),
    (Profile.PLC_FIELDBUS, AnomalyKind.LOW_DEGREE_ICS, 1),
    (Profile.PLC_FIELDBUS, AnomalyKind.UNIQUE_SETTING, 8),
]


def test_splitmix_reference_vector():
    rng = SplitMix64(0)
    assert [rng.next_u64() for _ in range(3)] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_between_stays_in_range():
    rng = SplitMix64(99)
    draws = [rng.between(50, 500) for _ in range(2000)]
    assert min(draws) >= 50 and max(draws) <= 500


@pytest.mark.parametrize("profile", list(Profile))
def test_same_seed_same_bytes(profile, tmp_path):
    spec = ScenarioSpec(42, profile, 10, sessions=2)
    a, b = generate(spec), generate(spec)
    assert a.capture == b.capture and a.cause_lines == b.cause_lines and a.effect_lines == b.effect_lines
    pa, pb = a.write(tmp_path / "a"), b.write(tmp_path / "b")
    for name in pa:
        assert open(pa[name], "rb").read() == open(pb[name], "rb").read()
    assert generate(ScenarioSpec(43, profile, 10, sessions=2)).capture != a.capture


@pytest.mark.parametrize("profile", list(Profile))
def test_zero_sessions_is_empty(profile):
    sc = generate(ScenarioSpec(1, profile, 8, sessions=0))
    assert sc.cause_lines == [] and sc.effect_lines == []
    _, packets, _ = scenario_records(sc)
    assert packets == []
    assert set(sc.manifest["expected_findings"].values()) == {0}


def test_single_plc_write_sequence_is_ordered():
    sc = generate(ScenarioSpec(5, Profile.PLC_FIELDBUS, 6, sessions=1))
    causes, packets, effects = scenario_records(sc)
    plc = "plc-00"
    (c,) = [c for c in causes if c.subject.host_id == plc]
    (e,) = [e for e in effects if e.host.host_id == plc]
    writes = [p for p in packets if p.dst.host_id == plc and p.modbus and p.modbus.is_write_request]
    assert c.kind is CauseKind.PARAMETERIZATION and e.kind is EffectKind.REGISTER_SETTING
    assert len(writes) >= 1
    assert c.timestamp < writes[0].timestamp <= writes[-1].timestamp < e.timestamp
    assert 50_000 <= writes[0].timestamp - c.timestamp <= 500_000
    assert writes[0].modbus.register_address == int(e.payload["register"])


@pytest.mark.parametrize(
    "spec",
    [
        ScenarioSpec(1, Profile.PLC_FIELDBUS, 5),
        ScenarioSpec(1, Profile.REMOTE_MAINTENANCE, 2),
        ScenarioSpec(1, Profile.REMOTE_MAINTENANCE, 8, injected=(AnomalySpec(AnomalyKind.SPOOFED_WRITE, 3),)),
        ScenarioSpec(1, Profile.REMOTE_MAINTENANCE, 8, injected=(AnomalySpec(AnomalyKind.INCONSISTENT_TICKET, 0),)),
        ScenarioSpec(1, Profile.REMOTE_MAINTENANCE, 8, injected=(AnomalySpec(AnomalyKind.MISCONFIGURATION, 99),)),
        ScenarioSpec(1, Profile.REMOTE_MAINTENANCE, 6, injected=(AnomalySpec(AnomalyKind.HIGH_ERROR_HOST, 3),)),
        ScenarioSpec(1, Profile.REMOTE_MAINTENANCE, 8, sessions=0,
                     injected=(AnomalySpec(AnomalyKind.MISCONFIGURATION, 3),)),
        ScenarioSpec(1, Profile.PLC_FIELDBUS, 8, injected=(AnomalySpec(AnomalyKind.UNIQUE_SETTING, 5),) * 2),
    ],
)
def test_invalid_specs(spec):
    with pytest.raises(InvalidSpec):
        generate(spec)


def test_parse_injection():
    hosts = generate(ScenarioSpec(1, Profile.PLC_FIELDBUS, 8, sessions=0)).hosts
    assert parse_injection("SpoofedWrite@plc-01", hosts) == AnomalySpec(AnomalyKind.SPOOFED_WRITE, 4)
    assert parse_injection("LowDegreeIcs@0", hosts).target == 0
    for bad in ("Nope@1", "SpoofedWrite", "SpoofedWrite@nohost"):
        with pytest.raises(InvalidSpec):
            parse_injection(bad, hosts)


@pytest.mark.parametrize("seed", [1, 2, 3])
@pytest.mark.parametrize("profile", list(Profile))
def test_clean_scenario_soundness(seed, profile, analyzed):
    sc, an = analyzed(ScenarioSpec(seed, profile, 10, sessions=3))
    corr = an.correlation
    assert corr.residue_causes == [] and corr.residue_effects == []
    assert an.findings == []
    skew = 100_000
    for t in corr.triads:
        first = t.traffic[0].timestamp
        assert t.cause is None or t.cause.timestamp <= first + skew
        assert t.effect is None or t.effect.timestamp >= first - skew
        assert t.completeness is Completeness.of(t.cause is not None, t.effect is not None)
    assert sorted(an.graph.nodes) == sc.manifest["topology"]["nodes"]


@pytest.mark.parametrize("profile,kind,target", SINGLES)
def test_single_anomaly_isolation(profile, kind, target, analyzed):
    spec = ScenarioSpec(9, profile, 10, sessions=3, injected=(AnomalySpec(kind, target),))
    sc, an = analyzed(spec)
    (inj,) = sc.manifest["injected"]
    assert sc.manifest["expected_findings"][inj["rule"]] == 1
    (f,) = an.findings
    assert f.rule_id is RuleId(inj["rule"])
    named = set(inj["cause_ids"]) | set(inj["effect_ids"]) | {f"cap0-{i:06d}" for i in inj["packet_indices"]}
    evidence = {i[len("flow:"):] if i.startswith("flow:") else i for i in f.evidence}
    assert evidence <= named


def test_combined_findings_are_union_of_singles(analyzed):
    kinds = [(k, t) for p, k, t in SINGLES if p is Profile.PLC_FIELDBUS]
    singles = set()
    for k, t in kinds:
        _, an = analyzed(ScenarioSpec(4, Profile.PLC_FIELDBUS, 10, sessions=3, injected=(AnomalySpec(k, t),)))
        singles |= {(f.rule_id, f.subject) for f in an.findings}
    _, combo = analyzed(ScenarioSpec(4, Profile.PLC_FIELDBUS, 10, sessions=3,
                                     injected=tuple(AnomalySpec(k, t) for k, t in kinds)))
    assert {(f.rule_id, f.subject) for f in combo.findings} == singles


def test_manifest_counts_match_records():
    sc = generate(ScenarioSpec(8, Profile.REMOTE_MAINTENANCE, 9, sessions=2))
    causes, packets, effects = scenario_records(sc)
    assert sc.manifest["counts"] == {"causes": len(causes), "effects": len(effects), "packets": len(packets)}
    json.dumps(sc.manifest)

import pytest

from copkit.scenario import MobilityConfig, ScenarioError, evaluate_kpi, generate_scenario
from copkit.scenario_file import dumps, loads, read_scenario, write_scenario


def test_round_trip_is_exact(canonical, tmp_path):
    path = tmp_path / "s.txt"
    write_scenario(canonical, path)
    back = read_scenario(path)
    assert back == canonical
    cfg = MobilityConfig((2.0, -4.0, 6.0), (1.0, 0.0, 3.0))
    assert evaluate_kpi(back, cfg) == evaluate_kpi(canonical, cfg)


def test_text_is_stable():
    assert dumps(generate_scenario(5)) == dumps(generate_scenario(5))
    assert dumps(loads(dumps(generate_scenario(5)))) == dumps(generate_scenario(5))


def test_missing_magic_line():
    text = dumps(generate_scenario(1)).split("\n", 1)[1]
    with pytest.raises(ScenarioError):
        loads(text)


def test_bad_number_names_the_line():
    lines = dumps(generate_scenario(1)).splitlines()
    i = next(n for n, l in enumerate(lines) if l.startswith("tx_power_dbm"))
    lines[i] = "tx_power_dbm = loud"
    with pytest.raises(ScenarioError, match="line"):
        loads("\n".join(lines))


def test_truncated_user_record():
    text = dumps(generate_scenario(1)).rstrip("\n")
    text = text.rsplit(",", 1)[0]
    with pytest.raises(ScenarioError):
        loads(text)


def test_wrong_target_count_rejected():
    lines = dumps(generate_scenario(1)).splitlines()
    i = lines.index("[sectors]") + 2  # first sector record, a target
    fields = lines[i].split(",")
    fields[4] = "0"
    lines[i] = ",".join(fields)
    with pytest.raises(ScenarioError):
        loads("\n".join(lines))

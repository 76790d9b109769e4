import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from blab.cli import ConfigError, build_scenario, load_document, main, preset_names
from blab.cycle_model import CycleParams, ref1, ref_sf
from blab.reports import (
    EXIT_CERT_FAILED, EXIT_INPUT_ERROR, EXIT_OK, ActionResult, STATUS_CERT_FAILED, STATUS_ERROR, combined_exit_code,
    csv_table, dumps, format_float,
)


def write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read(out, name):
    return json.loads((out / name).read_text())


def test_presets_are_bundled():
    assert preset_names() == ["ref-df", "ref-sf", "ref1-type1", "ref1-typeII", "ref2-rational"]


def test_reference_preset_end_to_end(tmp_path):
    out = tmp_path / "r1"
    assert main(["--config", "ref1-type1", "--out", str(out)]) == EXIT_OK
    for f in ("regime.json", "covering.json", "blender_certificate.json", "diameters.csv", "sweep.csv",
              "sweep.json", "index.json"):
        assert (out / f).is_file(), f
    assert read(out, "blender_certificate.json")["passed"]
    assert read(out, "regime.json")["regime"]["certified"]
    assert read(out, "index.json")["exit_code"] == 0


def test_rational_preset(tmp_path):
    out = tmp_path / "r2"
    assert main(["--config", "ref2-rational", "--out", str(out)]) == EXIT_OK
    reg = read(out, "regime.json")["regime"]
    assert reg["rare1"]["passed"] is False and reg["rare1"]["nearest"]["s"] == 0
    assert reg["label"] == "hyperbolic-trivial"


def test_missing_field_exit_one(tmp_path, capsys):
    d = ref1().to_dict()
    del d["gamma"]
    code = main(["classify", "--config", write(tmp_path, d), "--out", str(tmp_path / "o")])
    assert code == EXIT_INPUT_ERROR
    assert "gamma" in capsys.readouterr().err


def test_empty_actions_exit_one(tmp_path, capsys):
    cfg = write(tmp_path, {"params": ref1().to_dict(), "actions": []})
    assert main(["--config", cfg]) == EXIT_INPUT_ERROR
    assert "no actions requested" in capsys.readouterr().err


def test_bad_json_position(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text('{"params": {\n  "gamma": 3.0,,\n}}')
    assert main(["--config", str(path)]) == EXIT_INPUT_ERROR
    assert "line 2" in capsys.readouterr().err


def test_unknown_option_and_field(tmp_path):
    with pytest.raises(ConfigError, match="unknown"):
        build_scenario({"params": ref1().to_dict(), "actions": ["classify"], "options": {"bogus": 1}})
    with pytest.raises(ConfigError, match="unknown scenario field"):
        build_scenario({"params": ref1().to_dict(), "actions": ["classify"], "extra": 1})


def test_focus_case_rejects_covering():
    with pytest.raises(ConfigError, match="saddle"):
        build_scenario({"params": ref_sf().to_dict(), "actions": ["covering"]})


def test_report_all_for_focus_case():
    sc = build_scenario({"params": ref_sf().to_dict(), "actions": ["report-all"]})
    assert sc.actions == ["classify", "search"]


def test_certification_failure_exit_two(tmp_path):
    cfg = write(tmp_path, {"params": ref1().to_dict(), "actions": ["covering"]})
    out = tmp_path / "o"
    assert main(["--config", cfg, "--out", str(out), "--k-max", "20"]) == EXIT_CERT_FAILED
    assert read(out, "index.json")["actions"][0]["status"] == STATUS_CERT_FAILED


def test_two_actions_and_index(tmp_path):
    cfg = write(tmp_path, {"params": ref1().to_dict(), "actions": ["classify", "sweep-mu"],
                           "options": {"resolution": 21}})
    out = tmp_path / "o"
    assert main(["--config", cfg, "--out", str(out), "--seed", "4"]) == EXIT_OK
    idx = read(out, "index.json")
    assert [a["action"] for a in idx["actions"]] == ["classify", "sweep-mu"]
    assert idx["seed"] == 4
    assert sorted(p.name for p in out.iterdir()) == ["index.json", "regime.json", "sweep.csv", "sweep.json"]


def test_byte_identical_reruns(tmp_path):
    cfg = write(tmp_path, {"params": ref1().to_dict(), "actions": ["classify", "covering", "verify-blender"],
                           "options": {"trials": 2, "depth": 12}})
    outs = [tmp_path / "a", tmp_path / "b"]
    for o in outs:
        assert main(["--config", cfg, "--out", str(o)]) == EXIT_OK
    names = sorted(p.name for p in outs[0].iterdir())
    assert names == sorted(p.name for p in outs[1].iterdir())
    for n in names:
        assert (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes(), n


def test_search_presets(tmp_path):
    out = tmp_path / "sf"
    assert main(["search", "--config", "ref-sf", "--out", str(out)]) == EXIT_OK
    assert read(out, "search.json")["focus"]["indices"]
    out = tmp_path / "t2"
    assert main(["search", "--config", "ref1-typeII", "--out", str(out)]) == EXIT_OK
    s = read(out, "search.json")
    assert s["secondary_mu"] and s["theta_prime"]["leading"] == pytest.approx(0.06309, abs=1e-5)


def test_exit_code_precedence():
    ok, cert, err = ActionResult("a"), ActionResult("b", STATUS_CERT_FAILED), ActionResult("c", STATUS_ERROR)
    assert combined_exit_code([ok]) == 0
    assert combined_exit_code([ok, cert]) == 2
    assert combined_exit_code([cert, err]) == 1


def test_canonical_json():
    text = dumps({"b": [1.0, math.nan], "a": {"z": 0.1, "y": -0.0}})
    assert text.endswith("\n")
    assert text.index('"a"') < text.index('"b"')
    assert "null" in text and "0.10000000000000001" in text
    assert json.loads(text)["b"] == [1.0, None]


def test_csv_table():
    assert csv_table(["x", "s"], [[0.1, "a,b"], [None, True]]) == 'x,s\n0.10000000000000001,"a,b"\n,true\n'


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False, allow_infinity=False))
def test_float_round_trip(x):
    assert float(format_float(x)) == x


def test_config_round_trip_through_preset_loader(tmp_path):
    p = ref1(mu=1 / 3)
    doc, _ = load_document(write(tmp_path, {"params": json.loads(p.to_json())}))
    assert CycleParams.from_dict(doc["params"]).to_dict() == p.to_dict()

import json

import pytest

from rfcfuzz import cli
from rfcfuzz.grammar import load_grammar
from rfcfuzz.type_extraction import load_types

from conftest import CORPUS, GRAMMARS


@pytest.fixture(scope="module")
def dccp_models(tmp_path_factory):
    out = tmp_path_factory.mktemp("models")
    assert cli.main(["train", "--corpus-dir", str(CORPUS), "--exclude", "dccp",
                     "--out-dir", str(out)]) == 0
    return out


def test_ingest_and_types(tmp_path, capsys):
    rfc = str(CORPUS / "rfc" / "tcp.txt")
    assert cli.main(["ingest", "--rfc", rfc, "--protocol", "tcp", "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "tcp.document.jsonl").exists()
    assert cli.main(["extract-types", "--rfc", rfc, "--out-dir", str(tmp_path)]) == 0
    names = [t.name for t in load_types(tmp_path / "tcp.types")]
    assert names[:2] == ["Source Port", "Destination Port"]
    assert json.loads((tmp_path / "extract-types.config.json").read_text())["seed"] == 0


def test_extract_dccp(dccp_models, tmp_path):
    rc = cli.main(["extract", "--rfc", str(CORPUS / "rfc" / "dccp.txt"), "--protocol", "dccp",
                   "--model-dir", str(dccp_models), "--out-dir", str(tmp_path)])
    assert rc == 0
    g = load_grammar(tmp_path / "dccp.grammar.json")
    pairs = {(p.kind.value, p.field) for p in g.properties}
    assert ("HeaderLength", "Data Offset") in pairs


def test_types_file_override(dccp_models, tmp_path):
    types = tmp_path / "dccp.types"
    types.write_text("Source Port\t16\t0\nDestination Port\t16\t1\nData Offset\t8\t2\n"
                     "Checksum\t16\t3\nType\t8\t4\n")
    rc = cli.main(["extract", "--rfc", str(CORPUS / "rfc" / "dccp.txt"), "--protocol", "dccp",
                   "--model-dir", str(dccp_models), "--types-file", str(types),
                   "--out-dir", str(tmp_path)])
    assert rc == 0
    g = load_grammar(tmp_path / "dccp.grammar.json")
    assert [(f.name, f.size_bits) for f in g.fields] == [
        ("Source Port", 16), ("Destination Port", 16), ("Data Offset", 8), ("Checksum", 16),
        ("Type", 8)]


def test_missing_model_exit_code(tmp_path, capsys):
    missing = tmp_path / "no-models"
    rc = cli.main(["extract", "--rfc", str(CORPUS / "rfc" / "dccp.txt"),
                   "--model-dir", str(missing), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert str(missing) in capsys.readouterr().err
    missing.mkdir()
    rc = cli.main(["extract", "--rfc", str(CORPUS / "rfc" / "dccp.txt"),
                   "--model-dir", str(missing), "--out-dir", str(tmp_path)])
    assert rc == 2
    assert "property_model.json" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    conf = tmp_path / "run.json"
    conf.write_text(json.dumps({"protocol": "tcp", "configuration": "Random",
                                "strategies": 7, "seed": 3}))
    out = tmp_path / "out"
    assert cli.main(["fuzz", "--config", str(conf), "--strategies", "5",
                     "--out-dir", str(out)]) == 0
    summary = json.loads((out / "fuzz_tcp_Random.summary.json").read_text())
    assert summary["total_strategies"] == 5
    logged = json.loads((out / "fuzz.config.json").read_text())
    assert logged["seed"] == 3 and logged["strategies"] == 5


def test_bad_config_file(tmp_path):
    conf = tmp_path / "bad.json"
    conf.write_text(json.dumps({"no_such_key": 1}))
    assert cli.main(["fuzz", "--config", str(conf), "--out-dir", str(tmp_path)]) == 2
    conf.write_text("{oops")
    assert cli.main(["fuzz", "--config", str(conf), "--out-dir", str(tmp_path)]) == 2


def test_fuzz_random_summary_and_rerun(tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert cli.main(["fuzz", "--protocol", "tcp", "--configuration", "Random",
                         "--strategies", "1000", "--out-dir", str(out)]) == 0
        outs.append(out)
    summary = json.loads((outs[0] / "fuzz_tcp_Random.summary.json").read_text())
    assert summary["total_strategies"] == 1000
    for f in ("summary.json", "runs.jsonl", "strategies.jsonl"):
        assert (outs[0] / f"fuzz_tcp_Random.{f}").read_bytes() == \
            (outs[1] / f"fuzz_tcp_Random.{f}").read_bytes()


def test_fuzz_ungeneratable(tmp_path, capsys):
    d = json.loads((GRAMMARS / "tcp_nlp.json").read_text())
    d["properties"] = [p for p in d["properties"] if p["kind"] != "PacketType"]
    path = tmp_path / "g.json"
    path.write_text(json.dumps(d))
    rc = cli.main(["fuzz", "--protocol", "tcp", "--configuration", "NLPBased",
                   "--grammar", str(path), "--out-dir", str(tmp_path)])
    assert rc == 1
    assert "PacketType" in capsys.readouterr().err


def test_eval_needs_two_documents(tmp_path):
    assert cli.main(["eval-nlp", "--protocols", "tcp", "--out-dir", str(tmp_path)]) == 2


def test_report(tmp_path, capsys):
    for conf, g in (("Random", None), ("Manual", "tcp_manual.json")):
        args = ["fuzz", "--protocol", "tcp", "--configuration", conf, "--strategies", "40",
                "--out-dir", str(tmp_path)]
        if g:
            args += ["--grammar", str(GRAMMARS / g)]
        assert cli.main(args) == 0
    capsys.readouterr()
    assert cli.main(["report", "--out-dir", str(tmp_path)]) == 0
    text = (tmp_path / "report.txt").read_text()
    assert "Coverage" in text and "Attack discovery" in text
    assert text.index("Random") < text.index("Manual")
    assert cli.main(["report", "--out-dir", str(tmp_path / "empty")]) == 2

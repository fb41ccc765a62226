import json
from pathlib import Path

import pytest

from csk import tokenlab
from csk.cli import dispatch

FIXTURES = Path(__file__).parent / "fixtures"
ANN_A = str(FIXTURES / "annA.txt")
ANN_B = str(FIXTURES / "annB.txt")


@pytest.fixture(autouse=True)
def in_tmp(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def runs(path="csk_runs.jsonl"):
    return [json.loads(line) for line in Path(path).read_text().splitlines()]


def gateway_args(srv, *extra):
    return ["--base-url", srv.base_url, "--model", "fake", *extra]


def test_no_command_and_unknown_command(capsys):
    assert dispatch([]) == 1
    assert dispatch(["frobnicate"]) == 1
    assert dispatch(["parse"]) == 1  # missing required args
    assert "error" in capsys.readouterr().err


def test_help(capsys):
    assert dispatch(["--help"]) == 0
    assert dispatch(["agreement", "--help"]) == 0
    assert "--optimal" in capsys.readouterr().out


def test_missing_input_is_io_error():
    assert dispatch(["parse", "--in", "nope.txt", "--out", "x.json"]) == 2


def test_parse(tmp_path, capsys):
    bad = tmp_path / "bad.txt"
    bad.write_text("Fine <E>here</E>. <C>X causes Y.", encoding="utf-8")
    assert dispatch(["parse", "--in", str(bad), "--out", "p.json"]) == 0
    data = json.loads(Path("p.json").read_text())
    assert len(data["sentences"]) == 2
    assert data["sentences"][1]["diagnostics"][0]["code"] == "UnclosedTag"
    assert "UnclosedTag" in capsys.readouterr().err
    assert dispatch(["parse", "--in", str(bad), "--mode", "strict", "--out", "q.json"]) == 1
    rec = runs()[0]
    assert rec["command"] == "parse"
    assert rec["report"]["diagnostics"] == 1
    assert list(rec["inputs"].values())[0]


def test_parse_corpus_out_and_tokens():
    assert dispatch(["parse", "--in", ANN_A, "--out", "p.json", "--corpus-out", "c.jsonl"]) == 0
    assert dispatch(["tokens", "--in", "c.jsonl", "--out", "t.conll", "--causal-only"]) == 0
    with open("t.conll", encoding="utf-8") as fh:
        seqs = tokenlab.read_conll(fh)
    assert len(seqs) == 11
    assert seqs[0].tokens[:2] == ("Gestational", "diabetes")


def test_split_replay():
    args = ["split", "--in", ANN_A, "--seed", "7", "--test-fraction", "0.25", "--out", "s.json"]
    assert dispatch(args) == 0
    first = Path("s.json").read_bytes()
    assert dispatch(args) == 0
    assert Path("s.json").read_bytes() == first
    m = json.loads(first)
    assert len(m["partitions"]["test"]) == 3 and len(m["partitions"]["train"]) == 9
    assert dispatch(["split", "--in", ANN_A, "--k", "4", "--out", "k.json"]) == 0
    assert dispatch(["split", "--in", ANN_A, "--out", "z.json"]) == 1
    assert dispatch(["split", "--in", ANN_A, "--k", "40", "--out", "z.json"]) == 1


def test_agreement_reproduces_fixture(capsys):
    assert dispatch(["agreement", "--a", ANN_A, "--b", ANN_B, "--out", "agr.json", "--csv", "m.csv"]) == 0
    out = capsys.readouterr().out
    assert "Matched pairs: 21" in out
    rep = json.loads(Path("agr.json").read_text())
    assert rep["exact_matches"] == 15
    assert rep["overall_jaccard_similarity"] == pytest.approx(221 / 252, abs=1e-9)
    assert Path("m.csv").read_text().count("\n") == 26
    assert dispatch(["agreement", "--a", ANN_A, "--b", ANN_B, "--out", "opt.json", "--optimal"]) == 0
    assert json.loads(Path("opt.json").read_text())["notes"]


def test_inputs_not_mutated():
    before = Path(ANN_A).read_bytes(), Path(ANN_B).read_bytes()
    dispatch(["agreement", "--a", ANN_A, "--b", ANN_B, "--out", "agr.json"])
    assert (Path(ANN_A).read_bytes(), Path(ANN_B).read_bytes()) == before


def test_make_prompts_and_export():
    assert dispatch(["make-prompts", "--pool", ANN_A, "--targets", ANN_A, "--shots", "10",
                     "--seed", "3", "--out", "prompts.jsonl", "--dump-dir", "dump"]) == 0
    items = [json.loads(x) for x in Path("prompts.jsonl").read_text().splitlines()]
    assert len(items) == 12
    assert all(it["prompt"].count("Example ") == 10 for it in items)
    assert len(list(Path("dump").glob("*.txt"))) == 12
    assert dispatch(["make-prompts", "--pool", ANN_A, "--targets", ANN_A, "--shots", "11", "--out", "p2.jsonl"]) == 1

    assert dispatch(["export-instruct", "--in", ANN_A, "--out", "train.txt", "--causal-only"]) == 0
    lines = Path("train.txt").read_text().splitlines()
    assert len(lines) == 11 and lines[0].startswith("###Instruction: ")
    assert lines[0].endswith("###Output: ['Gestational diabetes-cause', 'the risk of preeclampsia-effect']")
    assert dispatch(["export-instruct", "--in", ANN_A, "--out", "test.txt", "--test"]) == 0
    assert Path("test.txt").read_text().splitlines()[0].endswith("###Output: ")


def test_run_llm_and_eval_phrases(fake_server, capsys):
    b_lines = Path(ANN_B).read_text(encoding="utf-8").splitlines()
    from csk.markup import strip_tags
    fake_server.answers = {strip_tags(x): x for x in b_lines}
    dispatch(["make-prompts", "--pool", ANN_A, "--targets", ANN_A, "--shots", "4", "--out", "prompts.jsonl"])
    assert dispatch(["run-llm", "--prompts", "prompts.jsonl", "--out", "resp.jsonl",
                     *gateway_args(fake_server, "--cache", "cache.jsonl")]) == 0
    resp = [json.loads(x) for x in Path("resp.jsonl").read_text().splitlines()]
    assert all(r["error"] is None for r in resp)
    assert resp[0]["response"] == b_lines[0]

    n = len(fake_server.requests)
    assert dispatch(["run-llm", "--prompts", "prompts.jsonl", "--out", "resp2.jsonl",
                     *gateway_args(fake_server, "--cache", "cache.jsonl")]) == 0
    assert len(fake_server.requests) == n

    capsys.readouterr()
    assert dispatch(["eval-phrases", "--gold", ANN_A, "--pred", "resp.jsonl", "--out", "ev.json", "--name", "4-shot"]) == 0
    out = capsys.readouterr().out
    assert "4-shot" in out and "Macro average" in out
    rep = json.loads(Path("ev.json").read_text())
    assert rep["pairs"] == 21
    assert rep["jaccard_similarity"] == pytest.approx(221 / 252, abs=1e-9)

    assert dispatch(["eval-tokens", "--gold", ANN_A, "--pred", "resp.jsonl", "--out", "tok.json", "--repair"]) == 0
    tok = json.loads(Path("tok.json").read_text())
    assert tok["repair"] == {"inserted_o": 0, "dropped_pred": 0, "substitutions": 0}
    assert 0 < tok["macro"]["f1"] < 1

    record = runs()[-1]
    assert json.dumps(record).count("sk-test") == 0


def test_run_llm_failure_exit_code(fake_server, monkeypatch):
    dispatch(["make-prompts", "--pool", ANN_A, "--targets", ANN_A, "--out", "prompts.jsonl"])
    monkeypatch.setenv("CSK_API_KEY", "wrong")
    assert dispatch(["run-llm", "--prompts", "prompts.jsonl", "--out", "r.jsonl", *gateway_args(fake_server)]) == 2
    assert all(json.loads(x)["error"].startswith("AuthError") for x in Path("r.jsonl").read_text().splitlines())
    assert dispatch(["run-llm", "--prompts", "prompts.jsonl", "--out", "r.jsonl"]) == 1


def test_eval_phrases_tagged_file_and_remote_embedder(fake_server):
    assert dispatch(["eval-phrases", "--gold", ANN_A, "--pred", ANN_B, "--out", "ev.json"]) == 0
    assert json.loads(Path("ev.json").read_text())["pairs"] == 21
    assert dispatch(["eval-phrases", "--gold", ANN_A, "--pred", ANN_B, "--out", "ev2.json", "--embedder", "remote",
                     *gateway_args(fake_server)]) == 0
    rep = json.loads(Path("ev2.json").read_text())
    assert rep["embedder"] == "remote"
    assert fake_server.requests[-1]["path"] == "/v1/embeddings"


def test_eval_tokens_conll(tmp_path):
    dispatch(["tokens", "--in", ANN_A, "--out", "gold.conll"])
    dispatch(["tokens", "--in", ANN_B, "--out", "pred.conll"])
    assert dispatch(["eval-tokens", "--gold", "gold.conll", "--pred", "gold.conll", "--out", "same.json"]) == 0
    assert json.loads(Path("same.json").read_text())["macro"]["f1"] == 1.0
    assert dispatch(["eval-tokens", "--gold", "gold.conll", "--pred", "pred.conll", "--out", "ab.json"]) == 0
    short = tmp_path / "short.conll"
    short.write_text("a\tC\n", encoding="utf-8")
    assert dispatch(["eval-tokens", "--gold", "gold.conll", "--pred", str(short), "--out", "x.json"]) == 1


def test_report_md_and_csv(capsys):
    dispatch(["agreement", "--a", ANN_A, "--b", ANN_B, "--out", "agr.json"])
    run_id = runs()[-1]["run_id"]
    capsys.readouterr()
    assert dispatch(["report", "--run-id", run_id]) == 0
    md = capsys.readouterr().out
    assert md.startswith(f"# Run {run_id}")
    assert "| cause |" in md
    assert dispatch(["report", "--format", "csv", "--out", "r.csv"]) == 0
    assert Path("r.csv").read_text().startswith("key,value\n")
    assert dispatch(["report", "--run-id", "nope"]) == 1


def test_reports_are_byte_identical_on_rerun():
    for out in ("a1.json", "a2.json"):
        dispatch(["agreement", "--a", ANN_A, "--b", ANN_B, "--out", out])
    assert Path("a1.json").read_bytes() == Path("a2.json").read_bytes()


def test_config_precedence(tmp_path):
    cfg = tmp_path / "csk.ini"
    cfg.write_text("[csk]\nruns-log = from_config.jsonl\n\n[split]\nseed = 7\nk = 3\n", encoding="utf-8")
    assert dispatch(["--config", str(cfg), "split", "--in", ANN_A, "--out", "s.json"]) == 0
    rec = runs("from_config.jsonl")[-1]
    assert rec["config"]["seed"] == 7 and rec["config"]["k"] == 3
    assert dispatch(["--config", str(cfg), "split", "--in", ANN_A, "--out", "s.json", "--seed", "9"]) == 0
    assert runs("from_config.jsonl")[-1]["config"]["seed"] == 9
    assert dispatch(["--config", "missing.ini", "split", "--in", ANN_A, "--out", "s.json", "--k", "2"]) == 2

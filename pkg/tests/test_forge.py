import json

import httpx
import pytest

from vqla_rft.dataset import QuestionType, RecordKind, Stage, iter_jsonl, validate_record
from vqla_rft.errors import HttpError, MalformedResponse, MissingSlot, Timeout, UnsupportedQuestionType
from vqla_rft.forge import (
    FrameAnnotation,
    GenerationEndpointConfig,
    IdAllocator,
    LabelledBox,
    Provenance,
    SubAnswerSet,
    assemble_cot,
    build_prompt_pack,
    compile_qa_pairs,
    fetch_sub_answers,
    forge_records,
    parse_template,
)
from vqla_rft.geometry import BoundingBox

NO_SLEEP = lambda s: None


def annotation(qtype="InstrumentLocation", boxes=()):
    return FrameAnnotation("seq_2/frame001", "Where is the bipolar-forceps located?", QuestionType(qtype),
                           "left-top", BoundingBox(10, 10, 100, 100), tuple(boxes), "bipolar-forceps")


def answers_for(pack):
    return SubAnswerSet({s: f"answer {s}" for s in pack.slots})


def endpoint(url, **kw):
    kw.setdefault("backoff_base", 0.0)
    return GenerationEndpointConfig(url, "stub-model", **kw)


def test_pack_slots_by_question_type():
    loc = build_prompt_pack(annotation())
    assert loc.stages == (Stage.PLANNING, Stage.PRINCIPLE, Stage.VISUAL_ANALYSIS, Stage.COMPARISON,
                          Stage.CONCLUSION)
    state = build_prompt_pack(annotation("InstrumentState"))
    assert len(state.stages) == 6 and Stage.CONTACT_ANALYSIS in state.stages
    assert "bipolar-forceps" in loc.by_stage(Stage.PRINCIPLE)[0].prompt
    assert "{" not in "".join(q.prompt for q in state.sub_questions)


def test_pack_counts_and_errors():
    pack = build_prompt_pack(annotation(), counts={"VisualAnalysis": 1})
    assert [q.slot for q in pack.by_stage(Stage.VISUAL_ANALYSIS)] == ["VisualAnalysis.1"]
    with pytest.raises(ValueError):
        build_prompt_pack(annotation(), counts={"VisualAnalysis": 9})
    with pytest.raises(UnsupportedQuestionType):
        build_prompt_pack(annotation(), "VisualSub")
    with pytest.raises(UnsupportedQuestionType):
        build_prompt_pack(annotation(), "Weather")
    with pytest.raises(UnsupportedQuestionType):
        FrameAnnotation.from_json({"image_id": "a", "question": "q", "question_type": "Nope", "answer": "x"})


def test_template_parser():
    t = parse_template("# system\nBe brief.\n\n# Planning\nStep one?\nStep two?\n# Conclusion\nSo?\n")
    assert t.system == "Be brief."
    assert t.sections == {Stage.PLANNING: ("Step one?", "Step two?"), Stage.CONCLUSION: ("So?",)}


def test_assemble_cot():
    pack = build_prompt_pack(annotation())
    chain = assemble_cot(answers_for(pack), pack)
    assert len(chain.stages) == 5 and chain.labels[-1] is Stage.CONCLUSION
    assert chain == assemble_cot(answers_for(pack), pack)
    assert json.dumps(chain.to_json()) == json.dumps(assemble_cot(answers_for(pack), pack).to_json())
    partial = {k: v for k, v in answers_for(pack).answers.items() if not k.startswith("Comparison")}
    with pytest.raises(MissingSlot):
        assemble_cot(SubAnswerSet(partial), pack)


def test_compile_qa_pairs_counts():
    boxes = [LabelledBox("bipolar-forceps", BoundingBox(10, 10, 100, 100)),
             LabelledBox("prograsp-forceps", BoundingBox(500, 500, 700, 650))]
    pack = build_prompt_pack(annotation(boxes=boxes))
    records = compile_qa_pairs(answers_for(pack), pack)
    kinds = [r.kind for r in records]
    assert kinds.count(RecordKind.VISUAL_QA) == 3 and kinds.count(RecordKind.GROUNDING_QA) == 2
    for r in records:
        assert validate_record(r.to_json()) == r
    assert compile_qa_pairs(answers_for(pack), pack, boxes=[]) == records[:3]
    assert records[3].id == "seq_2/frame001#GroundingQA#0"


def test_id_allocator_counts_per_image_and_kind():
    ids = IdAllocator()
    assert [ids("a", RecordKind.COT), ids("a", RecordKind.COT), ids("b", RecordKind.COT),
            ids("a", RecordKind.VISUAL_QA)] == ["a#CoT#0", "a#CoT#1", "b#CoT#0", "a#VisualQA#0"]


def test_manual_edit_marks_provenance():
    s = SubAnswerSet({"Planning.1": "x"})
    e = s.edited("Planning.1", "y")
    assert (s.provenance, e.provenance) == (Provenance.GENERATED, Provenance.MANUALLY_EDITED)
    assert e.answers["Planning.1"] == "y"


def test_fetch_against_stub(stub_server, tmp_path):
    pack = build_prompt_pack(annotation())
    audit = tmp_path / "audit.jsonl"
    got = fetch_sub_answers(pack, endpoint(stub_server.url), audit, sleep=NO_SLEEP)
    assert set(got.answers) == set(pack.slots) and len(got.answers) == 7
    body = stub_server.requests[0]
    assert body["model"] == "stub-model" and body["temperature"] == 0.0
    assert [m["role"] for m in body["messages"]] == ["system", "user"]
    log = [json.loads(line) for line in audit.read_text().splitlines()]
    assert len(log) == 7 and all(e["attempt"] == 1 and e["response"]["status"] == 200 for e in log)


def test_retry_after_429(stub_server, tmp_path):
    stub_server.fail_first = 2
    pack = build_prompt_pack(annotation(), counts={s: 1 for s in Stage})
    audit = tmp_path / "audit.jsonl"
    sleeps = []
    got = fetch_sub_answers(pack, endpoint(stub_server.url, backoff_base=0.25), audit, sleep=sleeps.append)
    assert len(got.answers) == 5
    log = [json.loads(line) for line in audit.read_text().splitlines()]
    per_slot = {}
    for e in log:
        per_slot.setdefault(e["slot"], []).append((e["attempt"], e["response"]["status"]))
    assert all(v == [(1, 429), (2, 429), (3, 200)] for v in per_slot.values())
    assert sleeps == [0.25, 0.5] * 5


def test_retry_exhausted(stub_server, tmp_path):
    stub_server.fail_first = 3
    stub_server.fail_status = 503
    pack = build_prompt_pack(annotation(), counts={s: 1 for s in Stage})
    with pytest.raises(HttpError) as info:
        fetch_sub_answers(pack, endpoint(stub_server.url), tmp_path / "a.jsonl", sleep=NO_SLEEP)
    assert info.value.status == 503
    assert len((tmp_path / "a.jsonl").read_text().splitlines()) == 3


def test_malformed_response(stub_server):
    stub_server.malformed = True
    pack = build_prompt_pack(annotation())
    with pytest.raises(MalformedResponse):
        fetch_sub_answers(pack, endpoint(stub_server.url), sleep=NO_SLEEP)


def test_timeout_maps_to_timeout():
    def slow(request):
        raise httpx.ReadTimeout("slow", request=request)

    client = httpx.Client(transport=httpx.MockTransport(slow))
    pack = build_prompt_pack(annotation())
    with pytest.raises(Timeout):
        fetch_sub_answers(pack, endpoint("http://stub"), client=client, sleep=NO_SLEEP)


def test_api_key_sent_but_never_logged(stub_server, tmp_path, monkeypatch):
    monkeypatch.setenv("VQLA_FORGE_API_KEY", "sk-secret-123")
    audit = tmp_path / "audit.jsonl"
    pack = build_prompt_pack(annotation(), counts={s: 1 for s in Stage})
    fetch_sub_answers(pack, endpoint(stub_server.url), audit, sleep=NO_SLEEP)
    assert stub_server.headers[0]["Authorization"] == "Bearer sk-secret-123"
    assert "sk-secret-123" not in audit.read_text()


def test_pipeline_order_is_deterministic(stub_server, fixtures, tmp_path):
    anns = [FrameAnnotation.from_json(raw) for _, raw in iter_jsonl(fixtures / "annotations.jsonl")]
    a = forge_records(anns, endpoint(stub_server.url), tmp_path / "a.jsonl", max_inflight=4, sleep=NO_SLEEP)
    b = forge_records(anns, endpoint(stub_server.url), tmp_path / "b.jsonl", max_inflight=1, sleep=NO_SLEEP)
    assert a == b
    assert [r.id for r in a if r.kind is RecordKind.COT] == [
        "seq_2/frame010#CoT#0", "seq_2/frame010#CoT#1", "seq_3/frame004#CoT#0",
        "seq_3/frame011#CoT#0", "seq_4/frame002#CoT#0"]

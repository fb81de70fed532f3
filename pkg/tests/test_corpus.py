import datetime as dt
import json

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ideoaxis import corpus
from ideoaxis.corpus import House, RosterEntry, SpeakerRoster, SpeechRecord, TopicSpec

D0, D1 = dt.date(2023, 1, 1), dt.date(2023, 5, 31)
NUCLEAR_QUERIES = ("原子", "原発", "廃炉", "再稼働", "ベースロード")


def raw_speech(sid, speaker="山田　太郎", group="自由民主党・無所属の会", text="原発の再稼働に賛成です。",
               date="2023-03-01"):
    return {"speechID": sid, "speaker": speaker, "speakerGroup": group, "speech": text, "date": date,
            "nameOfHouse": "衆議院"}


class FakeAPI:
    """In-memory minutes API: filters speeches by substring and paginates like the real service."""

    def __init__(self, speeches, fail_first=0, status=500):
        self.speeches = speeches
        self.fail_first = fail_first
        self.status = status
        self.calls = []

    def __call__(self, request: httpx.Request) -> httpx.Response:
        self.calls.append(dict(request.url.params))
        if self.fail_first > 0:
            self.fail_first -= 1
            return httpx.Response(self.status, text="boom")
        p = request.url.params
        hits = [s for s in self.speeches if p["any"] in s["speech"]]
        start, size = int(p["startRecord"]), int(p["maximumRecords"])
        if not hits:
            return httpx.Response(200, json={"numberOfRecords": 0})
        page = hits[start - 1:start - 1 + size]
        nxt = start + size if start - 1 + size < len(hits) else None
        return httpx.Response(200, json={"numberOfRecords": len(hits), "nextRecordPosition": nxt,
                                         "speechRecord": page})


def client_for(api, page_size=100, **kw):
    return corpus.DietClient(page_size=page_size, min_interval=0, transport=httpx.MockTransport(api),
                             sleep=lambda s: None, **kw)


def roster(*names_parties, inactive=()):
    entries = [RosterEntry(n, p) for n, p in names_parties]
    entries += [RosterEntry(n, p, active=False) for n, p in inactive]
    return SpeakerRoster(entries)


def test_retries_after_two_server_errors():
    api = FakeAPI([raw_speech("1")], fail_first=2)
    with client_for(api) as c:
        recs = list(c.fetch_speeches("原発", D0, D1))
        assert c.retries == 2
    assert [r.speech_id for r in recs] == ["1"]
    assert len(api.calls) == 3


def test_gives_up_after_max_retries():
    api = FakeAPI([], fail_first=100)
    with client_for(api, max_retries=3) as c:
        with pytest.raises(corpus.NetworkError):
            list(c.fetch_speeches("原発", D0, D1))
    assert len(api.calls) == 4


def test_client_error_is_not_retried():
    api = FakeAPI([], fail_first=1, status=404)
    with client_for(api) as c:
        with pytest.raises(corpus.HTTPStatusError) as e:
            list(c.fetch_speeches("原発", D0, D1))
        assert e.value.status == 404 and c.retries == 0


def test_empty_result_is_empty_stream():
    with client_for(FakeAPI([raw_speech("1")])) as c:
        assert list(c.fetch_speeches("該当なし", D0, D1)) == []


def test_pagination_and_request_parameters():
    speeches = [raw_speech(str(i)) for i in range(23)]
    api = FakeAPI(speeches)
    with client_for(api, page_size=10) as c:
        recs = list(c.fetch_speeches("原発", D0, D1))
    assert [r.speech_id for r in recs] == [str(i) for i in range(23)]
    assert [int(p["startRecord"]) for p in api.calls] == [1, 11, 21]
    first = api.calls[0]
    assert first["recordPacking"] == "json" and first["maximumRecords"] == "10"
    assert first["from"] == "2023-01-01" and first["until"] == "2023-05-31" and first["nameOfHouse"] == "衆議院"
    assert all(r.matched_queries == {"原発"} for r in recs)
    assert recs[0].speaker_name == "山田太郎" and recs[0].party == "LDP"


def test_page_size_ceiling():
    with pytest.raises(ValueError):
        corpus.DietClient(page_size=101)


def test_rate_limiter_spaces_requests():
    now = [0.0]
    slept = []

    def sleep(s):
        slept.append(s)
        now[0] += s

    lim = corpus.RateLimiter(1.0, clock=lambda: now[0], sleep=sleep)
    for _ in range(3):
        lim.wait()
    assert slept == [1.0, 1.0]


def test_malformed_record_raises_parse_error():
    bad = raw_speech("1")
    del bad["date"]
    with client_for(FakeAPI([bad])) as c:
        with pytest.raises(corpus.ParseError):
            list(c.fetch_speeches("原発", D0, D1))


def test_dedup_merges_queries():
    api = FakeAPI([raw_speech("1", text="原発の再稼働に賛成です。")])
    spec = TopicSpec("nuclear", ("原発", "再稼働"), D0, D1)
    with client_for(api) as c:
        recs = corpus.build_topic_corpus(spec, roster(("山田太郎", "LDP")), c)
    assert len(recs) == 1 and recs[0].matched_queries == {"原発", "再稼働"}


def test_roster_filter_and_aliases():
    speeches = [raw_speech("1"), raw_speech("2", speaker="委員長"), raw_speech("3", speaker="佐藤　花子"),
                raw_speech("4", speaker="やまだ太郎")]
    r = SpeakerRoster([RosterEntry("山田太郎", "LDP", aliases=("やまだ太郎",)),
                       RosterEntry("佐藤花子", "CDP", active=False)])
    with client_for(FakeAPI(speeches)) as c:
        recs = corpus.build_topic_corpus(TopicSpec("t", ("原発",), D0, D1), r, c)
    assert [x.speech_id for x in recs] == ["1", "4"]
    assert {x.speaker_name for x in recs} == {"山田太郎"}
    # roster party wins over the API's caucus label
    assert all(x.party == "LDP" for x in recs)


def test_empty_roster_rejected():
    with pytest.raises(ValueError):
        corpus.build_topic_corpus(TopicSpec("t", ("原発",), D0, D1), SpeakerRoster([]), client_for(FakeAPI([])))


def test_nuclear_queries_every_record_matches():
    texts = ["原子力規制委員会の審査について。", "原発の安全性を問う。", "廃炉の費用について。", "再稼働は認められない。",
             "ベースロード電源の確保が必要だ。", "本日の議題は予算です。"]
    speeches = [raw_speech(str(i), text=t) for i, t in enumerate(texts)]
    spec = TopicSpec("nuclear", NUCLEAR_QUERIES, D0, D1)
    with client_for(FakeAPI(speeches)) as c:
        recs = corpus.build_topic_corpus(spec, roster(("山田太郎", "LDP")), c)
    assert len(recs) == 5
    for r in recs:
        assert r.matched_queries and any(q in r.text for q in NUCLEAR_QUERIES)


def test_dedup_idempotent_on_own_output():
    speeches = [raw_speech(str(i), text=t, date=f"2023-0{1 + i % 3}-01")
                for i, t in enumerate(["原発と廃炉。", "原発。", "廃炉。", "再稼働。"])]
    spec = TopicSpec("n", ("原発", "廃炉"), D0, D1)
    ros = roster(("山田太郎", "LDP"))
    with client_for(FakeAPI(speeches)) as c:
        first = corpus.build_topic_corpus(spec, ros, c)
    replay = [raw_speech(r.speech_id, text=r.text, date=r.date.isoformat()) for r in first]
    with client_for(FakeAPI(replay)) as c:
        second = corpus.build_topic_corpus(spec, ros, c)
    assert corpus.dump_corpus(first) == corpus.dump_corpus(second)


def test_roster_rejects_unknown_party_and_duplicates():
    with pytest.raises(ValueError):
        SpeakerRoster([RosterEntry("a", "XYZ")])
    with pytest.raises(ValueError):
        SpeakerRoster([RosterEntry("山田 太郎", "LDP"), RosterEntry("山田太郎", "LDP")])


def test_roster_csv(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("speaker_name,party,house,active,aliases\n山田太郎,LDP,LOWER,true,やまだ|ヤマダ\n"
                 "佐藤花子,CDP,LOWER,false,\n", encoding="utf-8")
    r = SpeakerRoster.from_csv(p)
    assert r.resolve("ヤマダ").speaker_name == "山田太郎"
    assert r.resolve("佐藤花子") is None


def test_normalize_name():
    assert corpus.normalize_name(" 山田　 太郎 ") == "山田太郎"
    assert corpus.normalize_name("John   Smith") == "John Smith"


def records(n, text="原発について。"):
    return [SpeechRecord(f"id{i}", "山田太郎", "LDP", House.LOWER, dt.date(2023, 1, 1 + i), text + str(i),
                         frozenset({"原発"})) for i in range(n)]


def test_store_empty_round_trip(tmp_path):
    p = tmp_path / "c.jsonl"
    corpus.store_corpus([], p)
    assert p.exists() and corpus.load_corpus(p) == []


def test_store_multibyte_round_trip(tmp_path):
    recs = records(3, text="自衛隊の憲法明記に「賛成」です🙂")
    p = tmp_path / "c.jsonl"
    corpus.store_corpus(recs, p)
    assert corpus.load_corpus(p) == recs
    corpus.store_corpus(recs, tmp_path / "d.jsonl")
    assert p.read_bytes() == (tmp_path / "d.jsonl").read_bytes()


def test_unknown_schema_version(tmp_path):
    row = records(1)[0].to_json()
    row["schema_version"] = 99
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps(row) + "\n", encoding="utf-8")
    with pytest.raises(corpus.SchemaVersionError):
        corpus.load_corpus(p)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.text(min_size=1).filter(lambda s: s.strip() == s and "\r" not in s), min_size=0, max_size=5))
def test_store_round_trip_property(tmp_path_factory, texts):
    recs = [SpeechRecord(f"id{i}", "名前", "JCP", House.UPPER, dt.date(2022, 2, 2), t, frozenset({"q"}))
            for i, t in enumerate(texts)]
    p = tmp_path_factory.mktemp("store") / "c.jsonl"
    corpus.store_corpus(recs, p)
    assert corpus.load_corpus(p) == recs


def test_topic_spec_validation():
    with pytest.raises(ValueError):
        TopicSpec("t", (), D0, D1)
    with pytest.raises(ValueError):
        TopicSpec("t", ("a",), D1, D0)


def test_recorded_transport_replays_fixture(tmp_path):
    params = {"any": "原発", "from": "2023-01-01", "until": "2023-05-31", "nameOfHouse": "衆議院",
              "recordPacking": "json", "startRecord": "1", "maximumRecords": "100"}
    corpus.write_fixture_response(tmp_path, "/api/speech", params,
                                  {"numberOfRecords": 1, "nextRecordPosition": None,
                                   "speechRecord": [raw_speech("9")]})
    with corpus.DietClient(min_interval=0, transport=corpus.RecordedTransport(tmp_path)) as c:
        recs = list(c.fetch_speeches("原発", D0, D1))
        assert [r.speech_id for r in recs] == ["9"]
        # an unrecorded request fails instead of reaching the network
        with pytest.raises(corpus.NetworkError):
            c.max_retries = 0
            list(c.fetch_speeches("廃炉", D0, D1))

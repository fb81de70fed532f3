"""Regenerate fixtures/synthetic: an offline stand-in for a two-topic pipeline run.

Writes a roster, recorded minutes-API responses (small pages, so pagination is
exercised), seed bundles for the nuclear topic, and config.toml. Speeches are
built from sentence templates; each speaker's share of pro-policy opinion
sentences follows a latent stance set per party plus individual jitter, so the
expected party ordering is known by construction.

Usage: python3 scripts/make_synthetic_fixture.py [--out fixtures/synthetic] [--seed 11]
"""

import argparse
import datetime as dt
import random
import shutil
from pathlib import Path

from ideoaxis import corpus, seedgen

PAGE_SIZE = 10
SPEAKERS_PER_PARTY = 6
PARTY_GROUP = {
    "LDP": "自由民主党・無所属の会", "NDP": "国民民主党・無所属クラブ", "CDP": "立憲民主党・無所属",
    "JCP": "日本共産党", "Komeito": "公明党", "JRP": "日本維新の会",
}
# latent share of pro-policy opinions, per topic and party
STANCE = {
    "defence": {"JCP": 0.08, "CDP": 0.22, "Komeito": 0.58, "NDP": 0.68, "JRP": 0.76, "LDP": 0.9},
    "nuclear": {"JCP": 0.08, "CDP": 0.2, "Komeito": 0.5, "JRP": 0.55, "NDP": 0.6, "LDP": 0.9},
}
TOPICS = {
    "defence": {"query_words": ["自衛隊", "憲法"],
                "phrases": ["自衛隊の憲法明記", "憲法への自衛隊の明記", "自衛隊の位置付けの明確化", "憲法改正による自衛隊の明記"]},
    "nuclear": {"query_words": ["原発", "再稼働"],
                "phrases": ["原発の再稼働", "停止中の原発の再稼働", "原発の運転期間の延長", "再稼働に向けた原発の審査"]},
}
PRO = [
    "{x}を進めるべきだと強く思います。",
    "{x}は必要不可欠であると私は確信しております。",
    "我が党は{x}を推進すべきだという立場であります。",
    "{x}こそが国民の命と暮らしを守る道だと考えます。",
    "{x}を前に進めることが重要だと思います。",
]
CON = [
    "私は{x}に反対です。",
    "{x}は断じて認められないと考えます。",
    "{x}には到底賛成できません。",
    "{x}は撤回すべきだと申し上げたい。",
    "{x}は間違っていると言わざるを得ません。",
]
OTHER_SENTENCES = {
    "DESCRIPTION": ["本日は{x}について質問させていただきます。", "先ほど{x}についての説明がありました。",
                    "委員会では{x}をめぐって議論が続いてまいりました。"],
    "FACT": ["{x}の関連経費は前年度比で{p}%増加しました。", "{x}に関する規定は第{c}条に置かれております。",
             "{y}年の調査では、回答者の{p}%が{x}を支持しています。"],
    "QUESTION": ["{x}について、大臣の見解をお伺いできますか。", "{x}の根拠は何ですか。",
                 "{x}はいつまでに実施されるのでしょうか。"],
    "OTHER": ["ありがとうございます。", "以上で終わります。"],
}
FAMILY = ["青木", "石井", "上田", "大野", "岡田", "金子", "川口", "北村", "久保", "小西", "斉藤", "坂本",
          "島田", "杉山", "関口", "高田", "竹内", "千葉", "土屋", "中島", "西川", "野口", "橋本", "原田",
          "平野", "福田", "藤井", "古川", "前田", "松本", "三浦", "村上", "森本", "安田", "山口", "吉川"]
GIVEN = ["一郎", "恵子", "健太", "直美", "誠", "陽子"]


def names() -> dict[str, list[str]]:
    out, i = {}, 0
    for party in PARTY_GROUP:
        out[party] = [FAMILY[i + j] + GIVEN[j] for j in range(SPEAKERS_PER_PARTY)]
        i += SPEAKERS_PER_PARTY
    return out


def fill(t: str, rng: random.Random, x: str) -> str:
    return t.format(x=x, p=rng.randint(3, 80), c=rng.randint(1, 99), y=rng.randint(2015, 2022))


def speech(rng: random.Random, topic: str, share: float, n_opinions: int) -> str:
    phrases = TOPICS[topic]["phrases"]
    parts = [fill(rng.choice(OTHER_SENTENCES["DESCRIPTION"]), rng, rng.choice(phrases))]
    for _ in range(n_opinions):
        pool = PRO if rng.random() < share else CON
        parts.append(fill(rng.choice(pool), rng, rng.choice(phrases)))
        if rng.random() < 0.5:
            kind = rng.choice(["FACT", "QUESTION"])
            parts.append(fill(rng.choice(OTHER_SENTENCES[kind]), rng, rng.choice(phrases)))
    parts.append(fill(rng.choice(OTHER_SENTENCES["QUESTION"]), rng, rng.choice(phrases)))
    parts.append(rng.choice(OTHER_SENTENCES["OTHER"]))
    return "".join(parts)


def api_name(name: str) -> str:
    # the API prints names with an ideographic space between family and given name
    return name[:2] + "　" + name[2:]


def build_speeches(rng: random.Random, topic: str, roster: dict[str, list[str]], start_id: int,
                   anchors: dict[str, float]) -> list[dict]:
    records, sid = [], start_id
    year = 2023
    for party, members in roster.items():
        for j, name in enumerate(members):
            share = anchors.get(name, min(0.98, max(0.02, STANCE[topic][party] + rng.uniform(-0.1, 0.1))))
            n_speeches = 1 if j == SPEAKERS_PER_PARTY - 1 else 3  # last member falls under min_sentences
            for _ in range(n_speeches):
                n_op = 2 if n_speeches == 1 else rng.randint(3, 5)
                date = dt.date(year, 1, 1) + dt.timedelta(days=rng.randint(0, 360))
                records.append({
                    "speechID": f"1212{sid:08d}", "speechOrder": rng.randint(1, 200),
                    "speaker": api_name(name), "speakerGroup": PARTY_GROUP[party],
                    "speech": speech(rng, topic, share, n_op), "date": date.isoformat(),
                    "nameOfHouse": "衆議院", "nameOfMeeting": "憲法審査会" if topic == "defence" else "経済産業委員会",
                })
                sid += 1
    # the chair also speaks; not on the roster, so ingest drops it
    records.append({"speechID": f"1212{sid:08d}", "speechOrder": 1, "speaker": "委員長",
                    "speakerGroup": "", "speech": f"これより{TOPICS[topic]['query_words'][0]}に関する件について議事を進めます。",
                    "date": f"{year}-02-01", "nameOfHouse": "衆議院", "nameOfMeeting": "委員会"})
    return records


def write_api(api_dir: Path, topic: str, records: list[dict], date_from: dt.date, date_to: dt.date) -> int:
    n_files = 0
    for q in TOPICS[topic]["query_words"]:
        hits = sorted((r for r in records if q in r["speech"]), key=lambda r: r["speechID"])
        start = 1
        while True:
            page = hits[start - 1:start - 1 + PAGE_SIZE]
            nxt = start + PAGE_SIZE if start - 1 + PAGE_SIZE < len(hits) else None
            body = {"numberOfRecords": len(hits), "numberOfReturn": len(page), "startRecord": start,
                    "nextRecordPosition": nxt, "speechRecord": page}
            params = {"any": q, "from": date_from.isoformat(), "until": date_to.isoformat(),
                      "nameOfHouse": "衆議院", "recordPacking": "json", "startRecord": str(start),
                      "maximumRecords": str(PAGE_SIZE)}
            corpus.write_fixture_response(api_dir, "/api/speech", params, body)
            n_files += 1
            if nxt is None:
                break
            start = nxt
    return n_files


def seed_texts(rng: random.Random, topic: str, pool: list[str]) -> list[str]:
    phrases = TOPICS[topic]["phrases"]
    return ["".join(fill(t, rng, rng.choice(phrases)) for t in rng.sample(pool, 3)) for _ in range(5)]


CONFIG = """\
# Offline two-topic run over recorded API responses (regenerate with scripts/make_synthetic_fixture.py)
output_dir = "out"
roster = "roster.csv"
min_sentences = 5
groups = 3

[api]
fixture_dir = "api"
page_size = {page_size}

[provider]
kind = "hashing"
dimension = 512

[classifier]
train_data = "../../src/ideoaxis/data/labeled_sentences.tsv"
seed = 0

[topic_model]
k = 2
terms = 5

[[topics]]
id = "defence"
query_words = ["自衛隊", "憲法"]
date_from = 2023-01-01
date_to = 2023-12-31
expert = "../../src/ideoaxis/data/expert/mielka_defence.csv"
checks_file = "../../src/ideoaxis/data/expert/checks_defence.txt"
axis = {{ method = "pair", pro = "{pro}", con = "{con}" }}

[[topics]]
id = "nuclear"
query_words = ["原発", "再稼働"]
date_from = 2023-01-01
date_to = 2023-12-31
expert = "../../src/ideoaxis/data/expert/mielka_nuclear.csv"
checks_file = "../../src/ideoaxis/data/expert/checks_nuclear.txt"
axis = {{ method = "seeds", pro = "seeds/nuclear_pro.json", con = "seeds/nuclear_con.json" }}
"""


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parents[1] / "fixtures" / "synthetic")
    ap.add_argument("--seed", type=int, default=11)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    out: Path = args.out
    for sub in ("api", "seeds"):
        shutil.rmtree(out / sub, ignore_errors=True)
    out.mkdir(parents=True, exist_ok=True)

    roster = names()
    pro_anchor, con_anchor = roster["LDP"][0], roster["JCP"][0]
    with open(out / "roster.csv", "w", encoding="utf-8") as f:
        f.write("speaker_name,party,house,active,aliases\n")
        for party, members in roster.items():
            for name in members:
                f.write(f"{name},{party},LOWER,true,\n")
        f.write("引退太郎,LDP,LOWER,false,\n")

    date_from, date_to = dt.date(2023, 1, 1), dt.date(2023, 12, 31)
    n_files = 0
    for k, topic in enumerate(TOPICS):
        anchors = {pro_anchor: 1.0, con_anchor: 0.0} if topic == "defence" else {}
        recs = build_speeches(rng, topic, roster, 1 + 10_000 * k, anchors)
        n_files += write_api(out / "api", topic, recs, date_from, date_to)

    fixed = dt.datetime(2024, 1, 1, tzinfo=dt.timezone.utc)
    for side, pool in ((seedgen.Side.PRO, PRO), (seedgen.Side.CON, CON)):
        client = seedgen.FixtureChatClient(seed_texts(rng, "nuclear", pool), model_id="fixture-chat")
        bundle = seedgen.generate_seeds(seedgen.default_prompt("nuclear", side), 5, client, topic_id="nuclear",
                                        side=side, now=lambda: fixed)
        seedgen.write_seeds(bundle, out / "seeds" / f"nuclear_{side.value.lower()}.json")

    (out / "config.toml").write_text(CONFIG.format(page_size=PAGE_SIZE, pro=pro_anchor, con=con_anchor),
                                     encoding="utf-8")
    (out / ".gitignore").write_text("out/\n.embedding_cache/\n", encoding="utf-8")
    print(f"wrote {n_files} recorded API pages, roster, seeds and config to {out}")


if __name__ == "__main__":
    main()

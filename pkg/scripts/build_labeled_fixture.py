"""Regenerate src/ideoaxis/data/labeled_sentences.tsv.

Sentences are authored templates filled with policy phrases, then sampled
without replacement with a fixed seed. Labeling guide (ours, not an official
annotation scheme):

  OPINION      speaker states a stance, evaluation, or demand
  FACT         checkable statement: dates, amounts, counts, legal provisions
  QUESTION     asks for information or a position
  DESCRIPTION  narrates procedure or context without taking a stance
  OTHER        greetings, chair's procedural calls, acknowledgements

Usage: python scripts/build_labeled_fixture.py [--per-class 60] [--seed 7]
"""

import argparse
import random
from pathlib import Path

PHRASES = [
    "原発の再稼働", "自衛隊の憲法明記", "防衛費の増額", "集団的自衛権の行使", "廃炉作業", "エネルギー政策",
    "安全保障政策", "米軍基地の移設", "原子力規制の在り方", "核のごみの処分", "電力の安定供給",
    "敵基地攻撃能力の保有", "日米同盟の強化", "再生可能エネルギーの導入", "原発事故の避難計画",
    "防衛装備品の輸出", "ベースロード電源の確保", "運転期間の延長",
]
NAMES = ["山田太郎", "佐藤花子", "鈴木一郎", "高橋次郎", "田中美咲", "伊藤健", "渡辺誠", "中村由紀",
         "小林直樹", "加藤恵"]

TEMPLATES = {
    "OPINION": [
        "私は{x}に反対です。",
        "{x}は断じて認められないと考えます。",
        "{x}を進めるべきだと強く思います。",
        "{x}は必要不可欠であると私は確信しております。",
        "政府は{x}を直ちに見直すべきです。",
        "{x}には到底賛成できません。",
        "我が党は{x}を推進すべきだという立場であります。",
        "{x}こそが国民の命と暮らしを守る道だと考えます。",
        "{x}は撤回すべきだと申し上げたい。",
        "{x}を前に進めることが重要だと思います。",
        "{x}は間違っていると言わざるを得ません。",
        "{x}については慎重であるべきだと考えております。",
    ],
    "FACT": [
        "{x}の予算は{y}年度に{n}億円計上されています。",
        "{x}については、{y}年に閣議決定されました。",
        "{x}に関する法律は{y}年に施行されました。",
        "{x}の関連経費は前年度比で{p}%増加しました。",
        "{y}年の調査では、回答者の{p}%が{x}を支持しています。",
        "{x}は{y}年{m}月に国会で可決されました。",
        "{x}に関する規定は第{c}条に置かれております。",
        "{x}の対象となる施設は全国で{k}か所あります。",
    ],
    "QUESTION": [
        "{x}について、大臣の見解をお伺いできますか。",
        "{x}はいつまでに実施されるのでしょうか。",
        "なぜ{x}を急ぐ必要があるのですか。",
        "{x}の根拠は何ですか。",
        "政府は{x}についてどのように説明するおつもりですか。",
        "{x}の費用は誰が負担するのでしょうか。",
        "{x}について、総理はどうお考えですか。",
        "{x}の見通しはどうなっているのでしょうか。",
        "{x}は何条に基づくのですか。",
    ],
    "DESCRIPTION": [
        "本日は{x}について質問させていただきます。",
        "先ほど{x}についての説明がありました。",
        "委員会では{x}をめぐって議論が続いてまいりました。",
        "{x}について、これまでの経緯を簡単に振り返ります。",
        "次に、{x}の問題に移ります。",
        "地元では{x}について様々な声が上がっております。",
        "{x}については、昨日の本会議でも取り上げられました。",
        "{x}に関しては、参考人からも意見陳述がございました。",
    ],
    "OTHER": [
        "ありがとうございます。",
        "以上で終わります。",
        "委員長、よろしくお願いします。",
        "おはようございます。",
        "時間が参りましたので、これで終わります。",
        "ただいま御紹介にあずかりました{name}です。",
        "速記を止めてください。",
        "静粛に願います。",
        "暫時休憩いたします。",
        "{name}君。",
        "御起立願います。",
        "これにて散会いたします。",
        "次回は追って公報をもってお知らせいたします。",
        "{name}君に発言を許します。",
        "速記を起こしてください。",
        "午後一時まで休憩いたします。",
        "どうもありがとうございました。",
        "{name}委員、どうぞ。",
        "{name}大臣、お願いします。",
        "引き続きよろしくお願いいたします。",
        "{name}さん、ありがとうございました。",
        "これより会議を開きます。",
        "質疑を終局いたします。",
        "御異議ございませんか。",
        "御異議なしと認めます。",
    ],
}

# sentences quoted verbatim as gold examples elsewhere in the package
PINNED = [("私は反対です。", "OPINION"), ("これは何条に基づくのですか。", "QUESTION")]


def fill(template: str, rng: random.Random) -> str:
    return template.format(
        x=rng.choice(PHRASES), y=rng.randint(2012, 2023), n=rng.randint(10, 9000), p=rng.randint(3, 80),
        m=rng.randint(1, 12), c=rng.randint(1, 120), k=rng.randint(2, 60), name=rng.choice(NAMES),
    )


def build(per_class: int, seed: int) -> list[tuple[str, str]]:
    rng = random.Random(seed)
    items = list(PINNED)
    seen = {t for t, _ in items}
    for label, templates in TEMPLATES.items():
        have = sum(1 for _, lab in items if lab == label)
        tries = 0
        while have < per_class and tries < 100_000:
            tries += 1
            s = fill(rng.choice(templates), rng)
            if s in seen:
                continue
            seen.add(s)
            items.append((s, label))
            have += 1
    rng.shuffle(items)
    return items


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--per-class", type=int, default=60)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/ideoaxis/data/labeled_sentences.tsv"))
    args = ap.parse_args()
    items = build(args.per_class, args.seed)
    with open(args.out, "w", encoding="utf-8") as f:
        f.write("text\tlabel\n")
        for t, lab in items:
            f.write(f"{t}\t{lab}\n")
    print(f"wrote {len(items)} items to {args.out}")


if __name__ == "__main__":
    main()

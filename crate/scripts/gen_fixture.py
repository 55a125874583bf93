"""Writes the bundled synthetic fixture: 50 POIs, 200 click records, 100 sessions,
plus small downstream-task datasets under fixtures/tasks/."""
import json
import random
from pathlib import Path

OUT = Path(__file__).resolve().parent.parent / "fixtures"
rng = random.Random(7)

CENTERS = [
    (31.3166, 120.7190, "Suzhou Industrial Park"),
    (31.2990, 120.5853, "Gusu District"),
    (31.2712, 120.6377, "Wuzhong District"),
    (31.3780, 120.6010, "Xiangcheng District"),
    (31.2989, 120.5458, "Huqiu District"),
]
STREETS = ["Songxiang", "Xinghu Street", "Renmin Road", "Ganjiang Road", "Suzhou Avenue", "Shishan Road", "Jinji Lake Road", "Baodai Road"]
TYPES = ["Company", "Restaurant", "Hotel", "Bank", "School", "Hospital", "Supermarket", "Cafe", "Pharmacy", "Bookstore"]
BRANDS = ["Yizi", "Jinhe", "Lanting", "Huamei", "Ruixiang", "Taihu", "Pingjiang", "Shuangta", "Canglang", "Fengqiao",
          "Baiyun", "Zhongxin", "Xiyuan", "Dongfang", "Qingshan", "Minghu", "Guanqian", "Shantang", "Liuyuan", "Wangshi"]
SUFFIX = {"Company": "Co.", "Restaurant": "Restaurant", "Hotel": "Hotel", "Bank": "Bank Branch", "School": "School",
          "Hospital": "Hospital", "Supermarket": "Supermarket", "Cafe": "Cafe", "Pharmacy": "Pharmacy", "Bookstore": "Books"}


def misspell(word):
    i = rng.randrange(1, len(word))
    options = [c for c in "aeiouzhx" if c != word[i]]
    return word[:i] + rng.choice(options) + word[i + 1:]


pois = []
for i in range(50):
    lat0, lng0, district = CENTERS[i % len(CENTERS)]
    # Pairs of POIs share a building, so level-15 cells hold several POIs.
    jitter = 0.0004 if i % 3 else 0.004
    lat = round(lat0 + rng.uniform(-jitter, jitter), 6)
    lng = round(lng0 + rng.uniform(-jitter, jitter), 6)
    poi_type = TYPES[i % len(TYPES)]
    brand = BRANDS[i % len(BRANDS)]
    street = rng.choice(STREETS)
    name = f"{brand} ({district.split()[0]}) {SUFFIX[poi_type]}"
    address = f"No.{rng.randint(1, 300)}, {street}, {district}, Suzhou, Jiangsu Province"
    pois.append({"poi_id": f"P{i:03d}", "name": name, "address": address, "type": poi_type, "lat": lat, "lng": lng})

clicks = []
for p in pois:
    brand = p["name"].split()[0]
    street = p["address"].split(", ")[1]
    queries = [
        p["name"],
        f"{brand} {p['type'].lower()}",
        f"{misspell(brand)} {p['type'].lower()}",
        f"{p['type'].lower()} near {street}",
    ]
    for q in queries:
        clicks.append({"query": q, "poi_id": p["poi_id"], "count": rng.randint(1, 40)})

sessions = []
ids = [p["poi_id"] for p in pois]
for _ in range(100):
    start = rng.randrange(len(ids))
    length = rng.randint(2, 5)
    seq = [ids[(start + rng.choice([0, 5, 10, 15, 1])) % len(ids)] for _ in range(length)]
    sessions.append({"poi_ids": seq})

OUT.mkdir(exist_ok=True)
for name, rows in [("pois.jsonl", pois), ("clicks.jsonl", clicks), ("sessions.jsonl", sessions)]:
    with open(OUT / name, "w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")

# Task datasets draw from their own generator so the graph inputs above are
# unaffected by changes here.
trng = random.Random(11)


def poi_text(p):
    return f"{p['name']} [SEP] {p['address']} [SEP] {p['type']}"


classify = [{"text": c["query"], "label": TYPES.index(pois[int(c["poi_id"][1:])]["type"])} for c in clicks]

match = []
for i, p in enumerate(pois):
    brand = p["name"].split()[0]
    street = p["address"].split(", ")[1]
    same_type = [q for q in pois if q["type"] == p["type"] and q is not p]
    other = pois[(i + trng.randrange(1, len(pois))) % len(pois)]
    match.append({"text": f"{p['name']} [SEP] {poi_text(p)}", "label": "exact"})
    match.append({"text": f"{brand} {p['type'].lower()} [SEP] {poi_text(p)}", "label": "high"})
    match.append({"text": f"{p['type'].lower()} near {street} [SEP] {poi_text(trng.choice(same_type))}", "label": "weak"})
    match.append({"text": f"{brand} {p['type'].lower()} [SEP] {poi_text(other)}", "label": "irrelevant"})

tag = []
for p in pois:
    _, street, district, city, province = p["address"].split(", ")
    parts = [(street, "road"), (district, "district"), (city, "city"), (province, "province")]
    trng.shuffle(parts)
    words, tags = [], []
    for text, kind in parts[: trng.randint(2, 4)]:
        for j, w in enumerate(text.split()):
            words.append(w)
            tags.append(("B-" if j == 0 else "I-") + kind)
    tag.append({"text": " ".join(words), "label": tags})

geocode = [{"text": poi_text(p), "lat": p["lat"], "lng": p["lng"]} for p in pois]

recommend = [{"history": s["poi_ids"][:-1], "gold": s["poi_ids"][-1]} for s in sessions]

(OUT / "tasks").mkdir(exist_ok=True)
for name, rows in [("classify.jsonl", classify), ("match.jsonl", match), ("tag.jsonl", tag), ("geocode.jsonl", geocode), ("recommend.jsonl", recommend)]:
    with open(OUT / "tasks" / name, "w") as f:
        for r in rows:
            f.write(json.dumps(r, ensure_ascii=False) + "\n")
print(len(pois), len(clicks), len(sessions), {n: len(r) for n, r in [("classify", classify), ("match", match), ("tag", tag), ("geocode", geocode), ("recommend", recommend)]})

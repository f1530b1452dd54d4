#!/usr/bin/env python3
"""Writes a deterministic synthetic capture log.

The log mixes every situation the aggregation has to get right: first-party,
third-party and mixed sites, sites with only clean traffic, timed-out and
re-visited sites, captures outside any visit, identifiers shared between
recipients, and http/https/mixed transports.

    make_synthetic_log.py --seed 1 --sites 44 --out log.jsonl
"""

import argparse
import base64
import json
import random

CORE = [
    "Resolution", "OS", "OS Version", "User-Agent", "Browser Name",
    "Browser Version", "WebGL Renderer", "WebGL Vendor", "WebGL Version",
    "GPU", "GPU Vendor", "Installed Plugins", "Language", "Geolocation",
    "City", "IP Addresses", "Charset",
]
NON_CORE = ["Canvas", "Fonts", "Do Not Track", "Touch Support"]

# Recipient hosts. Several share a registrable domain; some sit under
# multi-label public suffixes or are IP literals.
TRACKERS = [
    "collect.fpmetrics.net", "api.fpmetrics.net", "px.adgrid.io",
    "t.sniffly.co.uk", "beacon.sniffly.co.uk", "edge.tagcloud.com.au",
    "ingest.deviceprint.org", "203.0.113.7", "Stats.ClickBeam.COM.",
    "x.y.telemetry.github.io", "pix.cdnfp.de",
]
SUFFIXES = ["com", "net", "co.uk", "org", "de", "com.au", "io"]
WORDS = ["news", "shop", "bank", "recipes", "travel", "games", "forum", "video"]
STATUSES = ["loaded", "timed_out", "browser_crashed", "navigation_error"]


class Log:
    def __init__(self):
        self.lines = []
        self.seq = 0
        self.ts = 1_700_000_000_000

    def tick(self, rng):
        self.ts += rng.randint(1, 900)
        return self.ts

    def add(self, record):
        self.lines.append(json.dumps(record, ensure_ascii=False, separators=(",", ":")))


def put_bytes(rec, key, value):
    try:
        rec[key] = value.decode("utf-8")
    except UnicodeDecodeError:
        rec[key + "_b64"] = base64.b64encode(value).decode("ascii")


def make_hits(rng, attrs, part):
    hits = []
    for a in attrs:
        hits.append({
            "attr": a, "core": a in CORE, "kind": rng.choice(["profile", "label", "pattern"]),
            "part": part, "layer": rng.randint(0, 2), "offset": rng.randint(0, 200),
            "text": "v-" + a.lower().replace(" ", "_"),
        })
        if rng.random() < 0.2:
            # Same attribute in a second layer; must count once per event.
            dup = dict(hits[-1])
            dup["layer"] += 1
            hits.append(dup)
    return hits


def capture(log, rng, visit, origin, host, event, ids):
    log.seq += 1
    method = rng.choice(["GET", "GET", "POST", "HEAD"])
    scheme = rng.choice(["http", "https"])
    attrs = rng.sample(CORE, rng.randint(2, 7)) + rng.sample(NON_CORE, rng.randint(0, 2))
    if not event:
        attrs = rng.sample(NON_CORE, rng.randint(0, 1))
    query = ("q=" + "".join(rng.choice("abcdef0123") for _ in range(rng.randint(0, 40)))).encode()
    body = b""
    if method == "POST":
        body = bytes(rng.randint(0x20, 0x7e) for _ in range(rng.randint(0, 120)))
        if rng.random() < 0.15:
            body += b"\xff\xfe\x00raw"
    part = "body" if body else "query"
    rec = {
        "type": "capture", "seq": log.seq, "visit": visit, "ts": log.tick(rng),
        "page_origin": origin, "host": host,
        "port": 443 if scheme == "https" else 80,
        "path": "/c/" + str(rng.randint(0, 99)), "method": method, "scheme": scheme,
        "referer": "", "content_type": "application/json" if body else "",
        "payload_size": len(query) + len(body),
        "verdict": rng.choice(["forwarded", "forwarded", "blocked"]),
        "delivery": rng.choice(["delivered", "delivered", "failed", "not_attempted"]),
        "event": event,
    }
    put_bytes(rec, "query", query)
    put_bytes(rec, "body", body)
    rec["headers"] = [["X-Client", "synthetic"]] if rng.random() < 0.1 else []
    rec["party"] = None
    rec["hits"] = make_hits(rng, attrs, part)
    rec["fp_ids"] = [{"label": "visitorId", "part": part, "layer": 0, "value": v} for v in ids]
    log.add(rec)


def generate(seed, n_sites):
    rng = random.Random(seed)
    log = Log()
    log.add({"type": "header", "format": "fpwatch-capture-log", "version": 1,
             "catalog_version": "synthetic"})
    shared_ids = ["fpid-" + format(rng.getrandbits(48), "012x") for _ in range(4)]
    sites = []
    for i in range(n_sites):
        sites.append(f"{rng.choice(WORDS)}{i:02d}.{rng.choice(SUFFIXES)}")

    visit_no = 0
    # Some sites are visited twice; the second visit supersedes the first.
    order = sites + rng.sample(sites, max(2, n_sites // 6))
    for n, site in enumerate(order):
        visit_no += 1
        v = visit_no
        log.add({"type": "visit_begin", "visit": v, "site": site, "ts": log.tick(rng)})
        # Kind of traffic this visit produces.
        mode = ["first", "third", "both", "clean", "none"][(hash_site(site) + n) % 5]
        if rng.random() < 0.3:
            mode = rng.choice(["first", "third", "both", "clean", "none"])
        n_caps = 0 if mode == "none" else rng.randint(1, 6)
        for k in range(n_caps):
            if mode == "first" or (mode == "both" and k % 2 == 0):
                host = rng.choice(["www.", "cdn.", "api.", ""]) + site
                if rng.random() < 0.2:
                    host = host.upper()
            else:
                host = rng.choice(TRACKERS)
            event = mode != "clean" and rng.random() < 0.9
            ids = []
            if rng.random() < 0.35:
                ids.append(rng.choice(shared_ids))
            if rng.random() < 0.2:
                ids.append("short" + str(rng.randint(0, 99)))  # below the length floor
            # Most captures carry the visited page as origin; some come from a
            # frame or have none recorded.
            r = rng.random()
            origin = site if r < 0.8 else ("" if r < 0.9 else "frame." + site)
            capture(log, rng, v, origin, host, event, ids)
        if rng.random() < 0.15:
            log.add({"type": "tunnel", "visit": v, "page_origin": site, "host": "ws.chat.example.net",
                     "port": 443, "bytes_up": rng.randint(0, 5000),
                     "bytes_down": rng.randint(0, 5000), "ts": log.tick(rng)})
        status = "timed_out" if rng.random() < 0.15 else rng.choice(STATUSES[:1] * 6 + STATUSES)
        revisited = n >= len(sites)
        # A visit that is never committed leaves its captures orphaned.
        if rng.random() < 0.05:
            continue
        start = log.ts
        log.add({"type": "visit", "visit": v, "site": site,
                 "site_index": sites.index(site) + 1, "status": status,
                 "load_time": round(rng.uniform(0.1, 20.0), 3), "captures": n_caps,
                 "revisited": revisited, "started": start - 5000, "ended": log.tick(rng)})

    # Traffic outside any visit window.
    for _ in range(3):
        capture(log, rng, 0, "", rng.choice(TRACKERS), True, [shared_ids[0]])
    return log.lines


def hash_site(site):
    return sum(site.encode())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=1)
    ap.add_argument("--sites", type=int, default=44)
    ap.add_argument("--out", required=True)
    a = ap.parse_args()
    lines = generate(a.seed, a.sites)
    with open(a.out, "w", encoding="utf-8") as f:
        f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()

#!/usr/bin/env python3
"""Brute-force recomputation of the fpwatch summary from a capture log.

Shares no code with the C++ aggregation: it parses the log, resolves
registrable domains with a naive public suffix matcher and prints the
summary JSON on stdout.

    fpwatch_check.py --log capture.jsonl --psl core/data/public_suffix_list.dat
"""

import argparse
import base64
import ipaddress
import json
import sys

CORE = [
    "Resolution", "OS", "OS Version", "User-Agent", "Browser Name",
    "Browser Version", "WebGL Renderer", "WebGL Vendor", "WebGL Version",
    "GPU", "GPU Vendor", "Installed Plugins", "Language", "Geolocation",
    "City", "IP Addresses", "Charset",
]


def load_rules(path):
    rules = set()
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("//"):
                continue
            rules.add(line.split()[0].lower())
    return rules


def norm(host):
    host = host.strip()
    if len(host) >= 2 and host[0] == "[" and host[-1] == "]":
        host = host[1:-1]
    return host.rstrip(".").lower()


def is_ip(host):
    try:
        ipaddress.ip_address(host)
        return True
    except ValueError:
        return False


def registrable(host, rules):
    h = norm(host)
    if not h or is_ip(h):
        return None
    labels = h.split(".")
    if any(not l for l in labels):
        return None
    n = len(labels)
    # Try every suffix length; keep the longest matching rule. Exceptions win.
    suffix_len = 1
    exception = None
    for k in range(1, n + 1):
        cand = ".".join(labels[n - k:])
        if "!" + cand in rules:
            exception = k
        if cand in rules:
            suffix_len = max(suffix_len, k)
        wild = "*." + ".".join(labels[n - k + 1:]) if k > 1 else None
        if wild and wild in rules:
            suffix_len = max(suffix_len, k)
    if exception is not None:
        suffix_len = exception - 1
    if suffix_len == 0 or suffix_len >= n:
        return None
    return ".".join(labels[n - suffix_len - 1:])


def recipient(host, rules):
    return registrable(host, rules) or norm(host)


def same_party(a, b, rules):
    ra, rb = registrable(a, rules), registrable(b, rules)
    if ra is not None and rb is not None:
        return ra == rb
    return norm(a) == norm(b)


def raw(rec, key):
    if key in rec:
        return rec[key].encode("utf-8")
    if key + "_b64" in rec:
        return base64.b64decode(rec[key + "_b64"])
    return b""


def read_log(path):
    with open(path, "rb") as f:
        data = f.read()
    lines = data.split(b"\n")
    torn = not data.endswith(b"\n")
    if not torn:
        lines = lines[:-1]
    header = json.loads(lines[0])
    if header.get("format") != "fpwatch-capture-log" or header.get("version") != 1:
        sys.exit("not a capture log")
    records = []
    for i, line in enumerate(lines[1:], start=1):
        last = i == len(lines) - 1
        if last and torn:
            break
        if not line.strip():
            continue
        try:
            records.append(json.loads(line))
        except ValueError:
            if last:
                break
            raise
    return records


def ratio(a, b):
    return None if b == 0 else a / b


def summarize(records, rules):
    last_visit = {}
    for r in records:
        if r["type"] == "visit":
            last_visit[r["site"]] = r
    site_of = {v["visit"]: s for s, v in last_visit.items()}

    sites = {}
    for s, v in last_visit.items():
        sites[s] = {"timed_out": v["status"] == "timed_out", "first": False,
                    "third": False, "recipients": set()}

    fps = {}
    freq = {a: 0 for a in CORE}
    id_domains = {}
    events = 0
    event_bytes = 0
    for r in records:
        if r["type"] != "capture" or r["visit"] == 0 or r["visit"] not in site_of:
            continue
        site = site_of[r["visit"]]
        dest = recipient(r["host"], rules)
        for fid in r["fp_ids"]:
            value = raw(fid, "value")
            if len(value) >= 8:
                id_domains.setdefault(value, set()).add(dest)
        if not r["event"]:
            continue
        origin = r["page_origin"] or site
        first = same_party(origin, r["host"], rules)
        entry = sites[site]
        entry["first" if first else "third"] = True
        entry["recipients"].add(dest)
        size = len(raw(r, "query")) + len(raw(r, "body"))
        fp = fps.setdefault(dest, {"bytes": 0, "http": False, "https": False,
                                   "attrs": set(), "third_sites": set()})
        fp["bytes"] += size
        fp[r["scheme"]] = True
        if not first:
            fp["third_sites"].add(site)
        for a in {h["attr"] for h in r["hits"] if h["core"]}:
            freq[a] = freq.get(a, 0) + 1
            fp["attrs"].add(a)
        events += 1
        event_bytes += size

    fingerprinting = [s for s in sites.values() if s["first"] or s["third"]]
    both = sum(1 for s in fingerprinting if s["first"] and s["third"])
    only_first = sum(1 for s in fingerprinting if s["first"] and not s["third"])
    only_third = sum(1 for s in fingerprinting if s["third"] and not s["first"])
    n_fp_sites = len(fingerprinting)
    recips = [len(s["recipients"]) for s in fingerprinting]

    transport = {"http_only": 0, "mixed": 0, "https_only": 0}
    for fp in fps.values():
        if fp["http"] and fp["https"]:
            transport["mixed"] += 1
        elif fp["https"]:
            transport["https_only"] += 1
        else:
            transport["http_only"] += 1

    def key(s):
        return s.encode("utf-8", "surrogateescape") if isinstance(s, str) else s

    shares = []
    for value in sorted(id_domains):
        if len(id_domains[value]) >= 2:
            shares.append({"identifier": value.decode("utf-8", "replace"),
                           "domains": sorted(id_domains[value], key=key)})

    n_fps = len(fps)
    return {
        "format": "fpwatch-summary",
        "schema_version": 1,
        "sites_total": len(sites),
        "sites_timed_out": sum(1 for s in sites.values() if s["timed_out"]),
        "fingerprinting_sites": n_fp_sites,
        "fingerprinting_fraction": ratio(n_fp_sites, len(sites)),
        "party_mode": {
            "exclusively_third": only_third,
            "exclusively_first": only_first,
            "both": both,
            "exclusively_third_fraction": ratio(only_third, n_fp_sites),
            "exclusively_first_fraction": ratio(only_first, n_fp_sites),
            "both_fraction": ratio(both, n_fp_sites),
        },
        "distinct_fingerprinters": n_fps,
        "avg_recipient_domains_per_fingerprinting_site": ratio(sum(recips), n_fp_sites),
        "max_recipient_domains_single_site": max(recips, default=0),
        "events": events,
        "total_event_bytes": event_bytes,
        "avg_bytes_per_fingerprinter": ratio(event_bytes, n_fps),
        "bytes_per_fingerprinter": {d: fps[d]["bytes"] for d in sorted(fps, key=key)},
        "attribute_frequency": {a: freq[a] for a in sorted(freq, key=key)},
        "avg_core_attributes_per_fingerprinter":
            ratio(sum(len(fp["attrs"]) for fp in fps.values()), n_fps),
        "transport": transport,
        "fingerprinter_site_reach": {d: len(fps[d]["third_sites"])
                                     for d in sorted(fps, key=key) if fps[d]["third_sites"]},
        "fp_id_shares": shares,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--log", required=True)
    ap.add_argument("--psl", required=True)
    a = ap.parse_args()
    out = summarize(read_log(a.log), load_rules(a.psl))
    json.dump(out, sys.stdout, indent=2, ensure_ascii=False, sort_keys=True)
    sys.stdout.write("\n")


if __name__ == "__main__":
    main()

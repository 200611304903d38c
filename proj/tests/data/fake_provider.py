#!/usr/bin/env python3
"""Deterministic stand-in for the model provider.

Reads one JSON request per line on stdin and answers one JSON object per
line on stdout. Requests are dispatched by shape: probe, embed (texts),
rerank (candidates), judge (code). With --http PORT it serves the same
handlers on /embed, /rerank and /judge instead."""
import hashlib
import json
import sys

DIM = 8


def embed_one(text):
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return [round((b - 127.5) / 127.5, 6) for b in digest[:DIM]]


def words(s):
    return set(s.lower().split())


def handle(req):
    if not isinstance(req, dict):
        return {"error": "schema: request must be an object"}
    if req.get("probe"):
        return {"dimension": DIM}
    if "texts" in req:
        if not isinstance(req["texts"], list):
            return {"error": "schema: texts must be a list"}
        return {"embeddings": [embed_one(t) for t in req["texts"]]}
    if "code" in req:
        if "query" not in req:
            return {"error": "schema: judge request needs query and code"}
        return {"answer": "yes" if req["query"] in req["code"] else "no"}
    if "query" in req:
        cands = req.get("candidates")
        if not isinstance(cands, list):
            return {"error": "schema: missing candidates"}
        q = words(req["query"])
        order = sorted(cands, key=lambda c: (-len(q & words(c["text"])), c["identifier"]))
        return {"ranking": [c["identifier"] for c in order]}
    return {"error": "schema: unrecognized request"}


def serve_stdio():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except ValueError:
            resp = {"error": "schema: not JSON"}
        else:
            if isinstance(req, dict) and req.get("query") == "__exit__":
                sys.exit(0)
            resp = handle(req)
        sys.stdout.write(json.dumps(resp) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    serve_stdio()

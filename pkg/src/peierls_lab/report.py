"""Uniform check records for the verification reports.

Every verification routine in the package emits a flat list of check
dictionaries.  A check carries the human-readable name of the property
it tested, the anchor label string identifying the statement it
realizes, the measured quantity (a residual against a tolerance, or a
rank against an expected integer), and the verdict.  Reports stay
plain data so they serialize to JSON without ceremony.
"""

from __future__ import annotations

import json


def residual_check(name, anchor, value, tolerance, **extra):
    """Record a scalar residual measured against a tolerance."""
    record = {
        "name": name,
        "anchor": anchor,
        "kind": "residual",
        "value": float(value),
        "tolerance": float(tolerance),
        "passed": bool(float(value) <= float(tolerance)),
    }
    record.update(extra)
    return record


def rank_check(name, anchor, observed, expected, gap=None, **extra):
    """Record an integer rank identity, with its spectral gap if known."""
    record = {
        "name": name,
        "anchor": anchor,
        "kind": "rank",
        "observed": int(observed),
        "expected": int(expected),
        "passed": bool(int(observed) == int(expected)),
    }
    if gap is not None:
        record["gap"] = float(gap)
    record.update(extra)
    return record


def condition_check(name, anchor, passed, **extra):
    """Record a yes/no structural condition (a conjunction of clauses)."""
    record = {
        "name": name,
        "anchor": anchor,
        "kind": "condition",
        "passed": bool(passed),
    }
    record.update(extra)
    return record


def measurement_check(name, anchor, **extra):
    """Record measured quantities that carry no pass/fail claim."""
    record = {
        "name": name,
        "anchor": anchor,
        "kind": "measurement",
        "passed": True,
    }
    record.update(extra)
    return record


def skipped_check(name, anchor, reason):
    """Record a check that was not run, with the reason it was skipped."""
    return {
        "name": name,
        "anchor": anchor,
        "kind": "skipped",
        "reason": reason,
        "passed": True,
        "skipped": True,
    }


def all_passed(checks):
    return all(c["passed"] for c in checks)


def failing(checks):
    return [c for c in checks if not c["passed"]]


def format_check(check):
    """One status line per check, stable across runs."""
    flag = "PASS" if check["passed"] else "FAIL"
    if check["kind"] == "residual":
        body = "residual %.3e (tol %.1e)" % (check["value"], check["tolerance"])
    elif check["kind"] == "rank":
        body = "rank %d (expected %d)" % (check["observed"], check["expected"])
        if "gap" in check:
            gap = check["gap"]
            body += ", gap %s" % ("inf" if gap == float("inf") else "%.1e" % gap)
    elif check["kind"] == "condition":
        body = "satisfied" if check["passed"] else "violated"
        clauses = {
            k: v
            for k, v in check.items()
            if k not in ("name", "anchor", "kind", "passed")
        }
        if clauses:
            body += " " + json.dumps(_json_safe(clauses), sort_keys=True)
    elif check["kind"] == "measurement":
        body = json.dumps(
            _json_safe(
                {
                    k: v
                    for k, v in check.items()
                    if k not in ("name", "anchor", "kind", "passed")
                }
            ),
            sort_keys=True,
        )
    elif check["kind"] == "skipped":
        flag = "SKIP"
        body = check["reason"]
    else:
        body = json.dumps({k: v for k, v in check.items() if k not in ("name", "anchor")})
    return "%s %-52s [%s] %s" % (flag, check["name"], check["anchor"], body)


def _json_safe(value):
    if isinstance(value, float) and value == float("inf"):
        return "inf"
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def checks_to_json(checks):
    """JSON-ready copy of a check list (infinities become strings)."""
    return _json_safe([dict(c) for c in checks])

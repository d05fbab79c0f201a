"""Assemble cohort-level statistical reports and render them as CSV or text.

Within-participant comparisons use post - pre differences (seconds, rounded
to the millisecond before ranking), so negative HL estimates mean faster
post-exam retrievals.  Holm families:

* the all-participant total is the primary test and is not adjusted;
* the Map and No-Map totals form one family;
* within each group, the three phases form one family;
* within each group, the five survey items form one family.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import stats
from .metrics import ParticipantOutcome, improvement_counts

GROUPS = (("All", None), ("Map", "map"), ("No-Map", "no_map"))
PHASES = (
    ("Preparation", "prep_ms"),
    ("Building Search", "building_search_ms"),
    ("Indoor AED Search", "indoor_ms"),
)
SURVEY_ITEMS = ("q1", "q2", "q3", "q4", "q5")
SUS_ITEMS = tuple(f"item{k}" for k in range(1, 11))


class ReportError(ValueError):
    pass


@dataclass(frozen=True)
class ReportConfig:
    ci_method: str = "bootstrap_percentile"
    n_boot: int = 10_000
    seed: int = 0
    level: float = 0.95
    hl_estimator: str = "walsh"
    time_tail: str = "less"
    survey_tail: str = "two_sided"
    wilcoxon_exact_max_n: int = stats.WILCOXON_EXACT_MAX_N


@dataclass
class StatReport:
    """Named tables, each a list of flat row dicts, plus notes."""

    tables: dict[str, list[dict]] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        return report_csv(self)

    def to_text(self) -> str:
        return report_text(self)


# ------------------------------------------------------------ row builders


def _paired_row(pre, post, cfg: ReportConfig, tail: str) -> dict:
    pre = np.asarray(pre, dtype=np.float64)
    post = np.asarray(post, dtype=np.float64)
    diffs = np.round(post - pre, 3)
    row: dict = {"n": int(pre.shape[0])}
    row["pre_median"], row["pre_q1"], row["pre_q3"] = stats.median_iqr(pre)
    row["post_median"], row["post_q1"], row["post_q3"] = stats.median_iqr(post)
    est = stats.hodges_lehmann(
        diffs, ci_method=cfg.ci_method, level=cfg.level, n_boot=cfg.n_boot, seed=cfg.seed,
        estimator=cfg.hl_estimator,
    )
    row.update(hl=est.hl, ci_low=est.ci_low, ci_high=est.ci_high, ci_method=est.method)
    try:
        res = stats.wilcoxon_signed_rank(diffs, tail, cfg.wilcoxon_exact_max_n)
        row.update(statistic=res.statistic, p=res.p, method=res.method, n_effective=res.n_effective)
    except stats.StatsError:
        row.update(statistic=None, p=None, method="all_zero", n_effective=0)
    row.update(tail=tail, p_adj=None, adjusted=False)
    return row


def _adjust(rows: Sequence[dict]) -> None:
    family = [r for r in rows if r.get("p") is not None]
    for r, a in zip(family, stats.holm_adjust([r["p"] for r in family])):
        r["p_adj"] = a
        r["adjusted"] = True


def _reported_p(row: dict):
    return row["p_adj"] if row.get("adjusted") else row.get("p")


def _select(outcomes, group):
    return [o for o in outcomes if group is None or o.group == group]


def time_table(outcomes: Sequence[ParticipantOutcome], cfg: ReportConfig) -> list[dict]:
    """Total and per-phase pre/post times for each group."""
    rows: list[dict] = []
    totals = {}
    for label, g in GROUPS:
        sub = _select(outcomes, g)
        if not sub:
            continue
        r = _paired_row([o.D_T_pre for o in sub], [o.D_T_post for o in sub], cfg, cfg.time_tail)
        r = {"group": label, "scope": "Total", **r}
        totals[label] = r
        rows.append(r)
        phase_rows = []
        if all(o.pre is not None and o.post is not None for o in sub):
            for pname, attr in PHASES:
                pre = [getattr(o.pre, attr) / 1000.0 for o in sub]
                post = [getattr(o.post, attr) / 1000.0 for o in sub]
                pr = {"group": label, "scope": pname, **_paired_row(pre, post, cfg, cfg.time_tail)}
                phase_rows.append(pr)
            _adjust(phase_rows)
        rows.extend(phase_rows)
    _adjust([totals[k] for k in ("Map", "No-Map") if k in totals])
    for r in rows:
        r["stars"] = stats.stars(_reported_p(r))
    return rows


def change_table(outcomes: Sequence[ParticipantOutcome]) -> list[dict]:
    """Median (IQR) relative reductions and improved/worsened counts."""
    rows = []
    for label, g in GROUPS:
        sub = _select(outcomes, g)
        if not sub:
            continue
        med, q1, q3 = stats.median_iqr([o.delta_D_T for o in sub])
        imp, wor = improvement_counts(sub)
        dp = [o.delta_D_P for o in sub if o.delta_D_P is not None]
        dp_stats = stats.median_iqr(dp) if dp else (None, None, None)
        rows.append({
            "group": label, "n": len(sub),
            "delta_D_T_median": med, "delta_D_T_q1": q1, "delta_D_T_q3": q3,
            "improved": imp, "worsened": wor,
            "n_delta_D_P": len(dp),
            "delta_D_P_median": dp_stats[0], "delta_D_P_q1": dp_stats[1], "delta_D_P_q3": dp_stats[2],
        })
    return rows


def pause_table(outcomes: Sequence[ParticipantOutcome], cfg: ReportConfig) -> list[dict]:
    rows = []
    for label, g in GROUPS:
        sub = _select(outcomes, g)
        if not sub:
            continue
        r = _paired_row([o.D_P_pre for o in sub], [o.D_P_post for o in sub], cfg, cfg.time_tail)
        rows.append({"group": label, "scope": "D_P", **r})
    _adjust([r for r in rows if r["group"] != "All"])
    for r in rows:
        r["stars"] = stats.stars(_reported_p(r))
    return rows


def between_groups_table(outcomes: Sequence[ParticipantOutcome]) -> list[dict]:
    a = [o for o in outcomes if o.group == "map"]
    b = [o for o in outcomes if o.group == "no_map"]
    if not a or not b:
        return []
    rows = []
    for name, get in (
        ("delta_D_T", lambda o: o.delta_D_T),
        ("delta_D_P", lambda o: o.delta_D_P),
    ):
        va = [get(o) for o in a if get(o) is not None]
        vb = [get(o) for o in b if get(o) is not None]
        if not va or not vb:
            continue
        res = stats.mann_whitney_u(va, vb, "two_sided")
        rows.append({
            "measure": name, "n_map": len(va), "n_no_map": len(vb),
            "median_map": float(np.median(va)), "median_no_map": float(np.median(vb)),
            "U": res.statistic, "p": res.p, "method": res.method, "stars": stats.stars(res.p),
        })
    return rows


def survey_table(survey_rows: Sequence[dict], cfg: ReportConfig) -> list[dict]:
    """First vs second visit to the same AED, per group and survey item.

    Each (participant, AED) pair with at least two visits contributes one
    paired difference (second - first).
    """
    visits: dict[tuple[str, str], list[dict]] = {}
    group_of: dict[str, str] = {}
    for r in survey_rows:
        visits.setdefault((r["participant_id"], r["aed_id"]), []).append(r)
        group_of[r["participant_id"]] = r["group"]
    pairs = []
    for key in sorted(visits):
        vs = sorted(visits[key], key=lambda r: int(r["visit_t"]))
        if len(vs) >= 2:
            pairs.append((group_of[key[0]], vs[0], vs[1]))
    out = []
    for label, g in GROUPS:
        sub = [(f, s) for grp, f, s in pairs if g is None or grp == g]
        if not sub:
            continue
        fam = []
        for q in SURVEY_ITEMS:
            first = [int(f[q]) for f, _ in sub]
            second = [int(s[q]) for _, s in sub]
            r = {"group": label, "item": q.upper(), **_paired_row(first, second, cfg, cfg.survey_tail)}
            fam.append(r)
        _adjust(fam)
        for r in fam:
            r["stars"] = stats.stars(_reported_p(r))
        out.extend(fam)
    return out


def sus_table(sus_rows: Sequence[dict]) -> list[dict]:
    if not sus_rows:
        return []
    responses = [[int(r[k]) for k in SUS_ITEMS] for r in sus_rows]
    scores, mean, sd = stats.sus_summary(responses)
    return [{"n": len(scores), "mean": mean, "sd": sd, "min": min(scores), "max": max(scores)}]


def build_report(
    outcomes: Sequence[ParticipantOutcome],
    cfg: ReportConfig | None = None,
    survey_rows: Sequence[dict] = (),
    sus_rows: Sequence[dict] = (),
    notes: Sequence[str] = (),
) -> StatReport:
    if not outcomes:
        raise ReportError("no complete trips")
    cfg = cfg or ReportConfig()
    rep = StatReport(notes=list(notes))
    rep.tables["retrieval_times"] = time_table(outcomes, cfg)
    rep.tables["relative_change"] = change_table(outcomes)
    rep.tables["pause_duration"] = pause_table(outcomes, cfg)
    rep.tables["between_groups"] = between_groups_table(outcomes)
    if survey_rows:
        rep.tables["survey"] = survey_table(survey_rows, cfg)
    if sus_rows:
        rep.tables["sus"] = sus_table(sus_rows)
    for rows in rep.tables.values():
        for r in rows:
            if r.get("method") == "all_zero":
                rep.notes.append(f"{r.get('group', '')} {r.get('scope', r.get('item', ''))}: all differences zero, no test")
    return rep


# --------------------------------------------------------------- rendering


def report_csv(rep: StatReport) -> str:
    """Long-format CSV: one block per table, sharing a ``table`` column."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for name, rows in rep.tables.items():
        if not rows:
            continue
        cols = list(rows[0])
        w.writerow(["table", *cols])
        for r in rows:
            w.writerow([name, *(_csv_cell(r.get(c)) for c in cols)])
    for n in rep.notes:
        w.writerow(["note", n])
    return buf.getvalue()


def _csv_cell(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    return v


def _miqr(r, prefix, nd=1) -> str:
    return f"{r[prefix + '_median']:.{nd}f} ({r[prefix + '_q1']:.{nd}f}-{r[prefix + '_q3']:.{nd}f})"


def _pcell(r) -> str:
    p = _reported_p(r)
    if p is None:
        return "n/a"
    txt = "<0.001" if p < 0.001 else f"{p:.3f}"
    return txt + r.get("stars", "")


def _align(header: Sequence[str], body: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(c).ljust(wd) for c, wd in zip(header, widths)).rstrip()]
    lines.append("  ".join("-" * wd for wd in widths))
    for row in body:
        lines.append("  ".join(str(c).ljust(wd) for c, wd in zip(row, widths)).rstrip())
    return "\n".join(lines)


def report_text(rep: StatReport) -> str:
    parts = []
    t = rep.tables
    if t.get("retrieval_times"):
        body = [
            [r["group"], r["scope"], r["n"], _miqr(r, "pre"), _miqr(r, "post"),
             f"{r['hl']:.1f} [{r['ci_low']:.1f}, {r['ci_high']:.1f}]", _pcell(r)]
            for r in t["retrieval_times"]
        ]
        parts.append("Retrieval time, seconds: median (IQR), HL of post - pre [95% CI]\n" + _align(
            ["Group", "Scope", "N", "Pre", "Post", "HL [CI]", "p"], body))
    if t.get("relative_change"):
        body = [
            [r["group"], r["n"], _miqr(r, "delta_D_T", 2), r["improved"], r["worsened"],
             "" if r["delta_D_P_median"] is None else _miqr(r, "delta_D_P", 2)]
            for r in t["relative_change"]
        ]
        parts.append("Relative reduction (pre - post) / pre\n" + _align(
            ["Group", "N", "dD_T median (IQR)", "Improved", "Worsened", "dD_P median (IQR)"], body))
    if t.get("pause_duration"):
        body = [
            [r["group"], r["n"], _miqr(r, "pre"), _miqr(r, "post"),
             f"{r['hl']:.1f} [{r['ci_low']:.1f}, {r['ci_high']:.1f}]", _pcell(r)]
            for r in t["pause_duration"]
        ]
        parts.append("Pause duration D_P, seconds\n" + _align(
            ["Group", "N", "Pre", "Post", "HL [CI]", "p"], body))
    if t.get("between_groups"):
        body = [
            [r["measure"], r["n_map"], r["n_no_map"], f"{r['median_map']:.2f}", f"{r['median_no_map']:.2f}",
             f"{r['U']:.1f}", f"{r['p']:.3f}{r['stars']}"]
            for r in t["between_groups"]
        ]
        parts.append("Map vs No-Map (two-sided Mann-Whitney U)\n" + _align(
            ["Measure", "N map", "N no-map", "Median map", "Median no-map", "U", "p"], body))
    if t.get("survey"):
        body = [
            [r["group"], r["item"], r["n"], _miqr(r, "pre"), _miqr(r, "post"),
             f"{r['hl']:.2f} [{r['ci_low']:.2f}, {r['ci_high']:.2f}]", _pcell(r)]
            for r in t["survey"]
        ]
        parts.append("Survey, first vs second visit\n" + _align(
            ["Group", "Item", "N", "First", "Second", "HL [CI]", "p"], body))
    if t.get("sus"):
        r = t["sus"][0]
        parts.append(f"SUS: {r['mean']:.1f} +/- {r['sd']:.1f} (n={r['n']})")
    footer = ("* p<0.05, ** p<0.01, *** p<0.001; "
              "p values Holm-adjusted within families, except the All-participant Total and D_P rows")
    parts.append(footer)
    if rep.notes:
        parts.append("Notes:\n" + "\n".join(f"- {n}" for n in rep.notes))
    return "\n\n".join(parts) + "\n"

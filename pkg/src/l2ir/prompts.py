"""Prompt construction and report parsing for the two LLM reasoning stages.

Profile prompts ask for a four-section behavior-intent report on a
single account, grounded in labeled reference cases and graph context.
Audit prompts ask for a five-section intent analysis of one suspicious
edge, ending in a structured risk verdict. Rendering is fully
deterministic: identical inputs produce byte-identical prompts, which is
what makes content-addressed response caching safe.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .graph import BehaviorTrace

PROFILE_SECTIONS = (
    "User Profile Summary",
    "Behavior Pattern Analysis",
    "Fraud Signal Analysis",
    "Overall Assessment",
)

AUDIT_SECTIONS = (
    "Connection Overview",
    "Behavior Difference",
    "Connection Intent Analysis",
    "Counter Evidence and Uncertainty",
    "Risk Verdict",
)

VERDICT_LEVELS = ("Low", "Medium", "High")

_PROFILE_ROLE = (
    "[Role] You are a senior fraud-detection analyst specializing in review "
    "behavior and relation camouflage. Your task is to infer the behavior "
    "intent of one target account from its activity, labeled reference cases, "
    "and graph context. Strictly follow all provided constraints and "
    "requirements."
)

_AUDIT_ROLE = (
    "[Role] You are a senior fraud-audit analyst specializing in review "
    "graphs and relation camouflage. Your task is to analyze the intent "
    "behind one suspicious connection between a suspected fraud account and "
    "a suspected benign account, and to judge whether the connection is "
    "supportive or misleading evidence for fraud detection. Strictly follow "
    "all provided constraints and requirements."
)

_POSITIVE_WORDS = frozenset(
    "great good excellent amazing love perfect best awesome nice fantastic "
    "solid reliable happy recommend quality deal".split()
)
_NEGATIVE_WORDS = frozenset(
    "bad poor terrible awful hate broken worst disappointing refund waste "
    "defective slow useless cheap".split()
)

_SECONDS_PER_DAY = 86_400


def sentiment_score(text: str) -> float:
    """Lexicon polarity in [-1, 1]; 0 for empty or neutral text."""
    tokens = re.findall(r"[a-z0-9]+", text.lower())
    if not tokens:
        return 0.0
    pos = sum(1 for t in tokens if t in _POSITIVE_WORDS)
    neg = sum(1 for t in tokens if t in _NEGATIVE_WORDS)
    if pos + neg == 0:
        return 0.0
    return (pos - neg) / (pos + neg)


@dataclass(frozen=True)
class Prompt:
    """One rendered request: fixed system role plus task-specific user text."""

    kind: str  # "profile" or "audit"
    system: str
    user: str

    def full_text(self) -> str:
        return self.system + "\n\n" + self.user


@dataclass(frozen=True)
class NodeSummary:
    """Aggregate activity statistics rendered into prompt blocks."""

    display_id: str
    n_reviews: int
    avg_rating: float
    rating_counts: tuple[int, int, int, int, int]
    rating_std: float
    dominant_rating_share: float
    max_reviews_one_day: int
    sentiment: float

    @classmethod
    def from_trace(cls, display_id: str, trace: BehaviorTrace) -> "NodeSummary":
        ratings = trace.ratings()
        counts = [0, 0, 0, 0, 0]
        for r in ratings:
            counts[r - 1] += 1
        n = len(ratings)
        if n:
            mean = sum(ratings) / n
            std = (sum((r - mean) ** 2 for r in ratings) / n) ** 0.5
            dominant = max(counts) / n
            by_day: dict[int, int] = {}
            for rec in trace.records:
                day = rec.ts // _SECONDS_PER_DAY
                by_day[day] = by_day.get(day, 0) + 1
            max_day = max(by_day.values())
        else:
            mean, std, dominant, max_day = 0.0, 0.0, 0.0, 0
        return cls(
            display_id=display_id,
            n_reviews=n,
            avg_rating=mean,
            rating_counts=tuple(counts),
            rating_std=std,
            dominant_rating_share=dominant,
            max_reviews_one_day=max_day,
            sentiment=sentiment_score(trace.full_text()),
        )


@dataclass(frozen=True)
class RelationContext:
    """Graph-side context for one node: who it touches and how alike they are."""

    neighbor_counts: tuple[tuple[str, int], ...]
    behavior_similarity: float | None
    labeled_fraud: int
    labeled_benign: int
    unlabeled: int

    def neighbor_line(self) -> str:
        total = sum(c for _, c in self.neighbor_counts)
        if total == 0:
            return "no neighbors"
        parts = ", ".join(f"{rel}: {c}" for rel, c in self.neighbor_counts if c)
        return f"{total} neighbors ({parts})"

    def similarity_line(self) -> str:
        if self.behavior_similarity is None:
            return "mean neighbor behavior similarity: n/a"
        return f"mean neighbor behavior similarity {self.behavior_similarity:.2f}"

    def risk_line(self) -> str:
        return (
            f"labeled neighbors: {self.labeled_fraud} fraud, "
            f"{self.labeled_benign} benign, {self.unlabeled} unlabeled"
        )


@dataclass(frozen=True)
class ExemplarCase:
    """One labeled reference account rendered into a profile prompt."""

    summary: NodeSummary
    context: RelationContext
    label: int
    score: float


@dataclass(frozen=True)
class IntentProfile:
    """Raw profile text for one node, plus where it came from."""

    node: int
    text: str
    model: str
    cached: bool = False


@dataclass
class AuditReport:
    """Parsed cross-audit output for one edge."""

    edge: tuple[int, int]
    text: str
    verdict: str = "Medium"
    confidence: float = 0.0
    signals: list[str] = field(default_factory=list)
    degraded: bool = False


class ReportParseError(ValueError):
    """Audit report text violates the required verdict structure."""


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _stars(rating: int) -> str:
    return f"{rating} star" if rating == 1 else f"{rating} stars"


def _trace_rows(trace: BehaviorTrace, with_dates: bool) -> list[str]:
    rows = []
    for rec in trace.records:
        cells = [rec.item]
        if with_dates:
            cells.append(f"day {rec.ts // _SECONDS_PER_DAY}")
        text = rec.text if rec.text else "(no text)"
        cells += [_stars(rec.rating), text, f"helpfulness {_fmt(rec.helpfulness)}"]
        rows.append("  - " + " | ".join(cells))
    return rows


def _summary_line(s: NodeSummary) -> str:
    return (
        f"Node ID: {s.display_id} | Total reviews: {s.n_reviews} | "
        f"Avg. rating: {_fmt(s.avg_rating)}"
    )


def _distribution_line(s: NodeSummary) -> str:
    cells = " ".join(f"{i + 1}*:{c}" for i, c in enumerate(s.rating_counts))
    return f"Rating distribution: {cells}"


def _statistics_line(s: NodeSummary) -> str:
    return (
        f"Target Statistics: rating std {_fmt(s.rating_std)} | "
        f"dominant rating share {_fmt(s.dominant_rating_share)} | "
        f"max reviews in one day {s.max_reviews_one_day} | "
        f"sentiment score {_fmt(s.sentiment)}"
    )


def _exemplar_block(index: int, case: ExemplarCase) -> str:
    label_word = "fraudulent" if case.label == 1 else "benign"
    lines = [
        f"Reference case {index} (ground-truth label: {label_word}, "
        f"similarity {_fmt(case.score)}):",
        "  " + _summary_line(case.summary),
        "  " + _distribution_line(case.summary),
        f"  Sentiment score: {_fmt(case.summary.sentiment)}",
        "  Graph Relation Context: "
        + " | ".join(
            (
                case.context.neighbor_line(),
                case.context.similarity_line(),
                case.context.risk_line(),
            )
        ),
    ]
    return "\n".join(lines)


def build_profile_prompt(
    summary: NodeSummary,
    trace: BehaviorTrace,
    exemplars: list[ExemplarCase],
    context: RelationContext,
) -> Prompt:
    """Render the behavior-intent profiling prompt for one target node."""
    lines: list[str] = [
        "You are given labeled reference cases, the target account's "
        "statistics, its graph relation context, and its chronological "
        "review history from an online review platform.",
        "",
        "[Exemplars]",
    ]
    if exemplars:
        for i, case in enumerate(exemplars, start=1):
            lines.append(_exemplar_block(i, case))
    else:
        lines.append("none")
    lines += [
        "",
        "[Target Node]",
        _summary_line(summary),
        _distribution_line(summary),
        _statistics_line(summary),
        "Graph Relation Context: [Neighbor Metadata | Behavior Similarities | Risk Distribution]",
        f"  Neighbor Metadata: {context.neighbor_line()}",
        f"  Behavior Similarities: {context.similarity_line()}",
        f"  Risk Distribution: {context.risk_line()}",
        "Chronological Behavior Traces: [Product | Star Rating | Text Content | Helpfulness Score]",
    ]
    rows = _trace_rows(trace, with_dates=False)
    lines += rows if rows else ["  none"]
    lines += [
        "",
        "Task:",
        "Analyze the target account's behavior intent. Focus on activity "
        "pattern, rating behavior, review content, helpfulness, and graph "
        "context, and weigh possible fraud signals against benign "
        "explanations.",
        "",
        "Requirements:",
        "1) Information source: use only the information provided above.",
        "2) Reference use: treat reference cases as comparison points only; "
        "their labels describe them, not the target.",
        "3) Context use: treat graph relation context as supporting evidence; "
        "do not infer the target's label from neighbor labels alone.",
        "4) Balanced signals: consider both fraud signals and benign signals.",
        "5) Intent grounding: separate observed behavior from inferred intent.",
        "6) Output format: return exactly four sections titled "
        f"{PROFILE_SECTIONS[0]}, {PROFILE_SECTIONS[1]}, {PROFILE_SECTIONS[2]}, "
        f"and {PROFILE_SECTIONS[3]}, in that order. Do not output a final "
        "class label for the target.",
        "",
        "[Output]",
        "Return the four sections in order: "
        + " -> ".join(PROFILE_SECTIONS)
        + ".",
    ]
    return Prompt(kind="profile", system=_PROFILE_ROLE, user="\n".join(lines))


def assign_roles(
    u: int, v: int, z_u: float, z_v: float
) -> tuple[int, int]:
    """Order an audited pair as (suspected fraud, suspected benign).

    The endpoint with the higher preliminary risk score takes the fraud
    role; an exact tie goes to the larger node id so role assignment is
    total and deterministic.
    """
    if z_u > z_v or (z_u == z_v and u > v):
        return u, v
    return v, u


def build_audit_prompt(
    u: int,
    v: int,
    z_u: float,
    z_v: float,
    magnitude: float,
    trace_u: BehaviorTrace,
    trace_v: BehaviorTrace,
    display_u: str | None = None,
    display_v: str | None = None,
) -> Prompt:
    """Render the connection-intent audit prompt for one suspicious edge.

    Inputs are symmetric: swapping (u, v) yields the identical prompt
    because roles are derived from the risk scores, not argument order.
    """
    fraud_node, benign_node = assign_roles(u, v, z_u, z_v)
    by_node = {
        u: (z_u, trace_u, display_u if display_u is not None else str(u)),
        v: (z_v, trace_v, display_v if display_v is not None else str(v)),
    }
    z_a, trace_a, name_a = by_node[fraud_node]
    z_b, trace_b, name_b = by_node[benign_node]
    lines: list[str] = [
        "You are given one suspicious connection from an online review "
        "platform, the preliminary risk information of its two endpoint "
        "accounts, and both accounts' chronological review histories.",
        "",
        "[Target Connection]",
        "Connection Metadata: [Node IDs & Roles | Risk Scores | Contradictory Magnitude]",
        f"  User A: {name_a} (Suspected Fraud Node) | risk score {z_a:.4f}",
        f"  User B: {name_b} (Suspected Benign Node) | risk score {z_b:.4f}",
        f"  Contradictory Magnitude: {magnitude:.4f}",
        "Chronological Interaction History (User A): "
        "[Product | Date | Star Rating | Text Content | Helpfulness Score]",
    ]
    rows_a = _trace_rows(trace_a, with_dates=True)
    lines += rows_a if rows_a else ["  none"]
    lines.append(
        "Chronological Interaction History (User B): "
        "[Product | Date | Star Rating | Text Content | Helpfulness Score]"
    )
    rows_b = _trace_rows(trace_b, with_dates=True)
    lines += rows_b if rows_b else ["  none"]
    lines += [
        "",
        "Task:",
        "Analyze the intent behind the connection between User A and User B. "
        "Focus on behavior differences, shared products, rating patterns, "
        "review timing, review content, and helpfulness. Judge whether the "
        "connection is supportive or misleading evidence for fraud "
        "detection. Keep the analysis connection-centric; do not restate "
        "full account profiles.",
        "",
        "Requirements:",
        "1) Information source: use only the information provided above.",
        "2) Role use: treat the preliminary roles and risk scores as audit "
        "signals, not ground-truth labels.",
        "3) Balanced judgment: consider both supportive and misleading "
        "readings of the connection.",
        "4) Intent grounding: separate observed behavior from inferred "
        "connection intent.",
        "5) Verdict format: in the Risk Verdict section state the risk level "
        "as Low, Medium, or High, a confidence between 0 and 1, and exactly "
        "three key signals.",
        "6) Output format: return exactly five sections titled "
        f"{AUDIT_SECTIONS[0]}, {AUDIT_SECTIONS[1]}, {AUDIT_SECTIONS[2]}, "
        f"{AUDIT_SECTIONS[3]}, and {AUDIT_SECTIONS[4]}, in that order.",
        "",
        "[Output]",
        "Return the five sections in order: "
        + " -> ".join(AUDIT_SECTIONS)
        + " (risk level + confidence + three key signals).",
    ]
    return Prompt(kind="audit", system=_AUDIT_ROLE, user="\n".join(lines))


_VERDICT_RE = re.compile(r"\b(low|medium|med|high)\b", re.IGNORECASE)
_CONFIDENCE_RE = re.compile(r"confidence[^0-9]{0,20}([0-9]+(?:\.[0-9]+)?)", re.IGNORECASE)
_SIGNAL_RE = re.compile(r"\((\d)\)\s*([^;\n]+)")


def parse_audit_report(
    text: str, edge: tuple[int, int] = (-1, -1), strict: bool = False
) -> AuditReport:
    """Extract (verdict, confidence, signals) from the Risk Verdict section.

    Malformed reports degrade to a neutral placeholder (Medium, 0.0, no
    signals) flagged ``degraded=True`` unless ``strict`` is set, in which
    case a :class:`ReportParseError` is raised with the reason.
    """

    def fail(reason: str) -> AuditReport:
        if strict:
            raise ReportParseError(reason)
        return AuditReport(edge=edge, text=text, degraded=True)

    marker = text.lower().rfind("risk verdict")
    if marker < 0:
        return fail("missing Risk Verdict section")
    section = text[marker + len("risk verdict"):]

    match = _VERDICT_RE.search(section)
    if match is None:
        return fail("no risk level found in Risk Verdict section")
    word = match.group(1).lower()
    verdict = "Medium" if word.startswith("med") else word.capitalize()

    conf_match = _CONFIDENCE_RE.search(section)
    if conf_match is None:
        return fail("no confidence value found in Risk Verdict section")
    confidence = float(conf_match.group(1))
    if not 0.0 <= confidence <= 1.0:
        return fail(f"confidence {confidence} outside [0, 1]")

    signals = [m.group(2).strip().rstrip(".") for m in _SIGNAL_RE.finditer(section)]
    if len(signals) != 3:
        return fail(f"expected exactly 3 key signals, found {len(signals)}")

    return AuditReport(
        edge=edge,
        text=text,
        verdict=verdict,
        confidence=confidence,
        signals=signals,
        degraded=False,
    )

"""Candidate ranking and entry → Wikidata linking.

For each location entry: search Wikidata for the headword (up to five
hits), fetch the Swedish description of every hit, embed the entry's
definition and the descriptions with the same provider, and keep the
candidate whose description is most cosine-similar to the definition.
Ties break toward the lower item number.  A candidate without a
description scores 0 (its text embeds to the zero vector).

Batch linking never aborts on a single bad entry: failures become an
error note on that entry's result and the batch carries on.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Entry
from .embedding import cosine_similarity
from .errors import ProtocolError, ReplayCacheMiss, TransportError
from .wikidata import WikidataCandidate, WikidataClient, qid_number

MAX_CANDIDATES = 5

# Similarity gate disabled by default: cosine never goes below -1.
NO_MIN_SIMILARITY = -1.0


class LinkError(Exception):
    """A remote or embedding failure while linking one entry."""

    def __init__(self, entry_id: str, cause: Exception):
        super().__init__(f"linking entry {entry_id}: {cause}")
        self.entry_id = entry_id
        self.cause = cause


@dataclass
class ScoredCandidate:
    candidate: WikidataCandidate
    similarity: float


@dataclass
class LinkResult:
    """Outcome for one entry: chosen item (or None) plus the full
    scored ranking that produced the choice."""

    entry_id: str
    chosen: str | None
    similarity: float
    considered: list[ScoredCandidate] = field(default_factory=list)
    error: str | None = None


def rank_candidates(
    definition_vector: np.ndarray,
    scored_inputs: Sequence[tuple[WikidataCandidate, np.ndarray]],
) -> list[ScoredCandidate]:
    """Score candidates against the definition vector and sort them by
    similarity, highest first, lower item number winning ties.

    Input order never affects the output order.
    """
    scored = [
        ScoredCandidate(candidate, cosine_similarity(definition_vector, vector))
        for candidate, vector in scored_inputs
    ]
    scored.sort(key=lambda sc: (-sc.similarity, qid_number(sc.candidate.qid)))
    return scored


def link_entry(
    entry: Entry,
    provider,
    client: WikidataClient,
    limit: int = MAX_CANDIDATES,
    min_similarity: float = NO_MIN_SIMILARITY,
) -> LinkResult:
    """Link one entry.  No search hits means an unlinked result; remote
    or embedding failures raise LinkError carrying the entry id."""
    try:
        candidates = client.search_candidates(entry.headword, limit=limit)
        if not candidates:
            return LinkResult(entry.id, None, 0.0, [])
        descriptions = client.fetch_descriptions([c.qid for c in candidates])
        for candidate in candidates:
            candidate.description_sv = descriptions.get(candidate.qid)
        definition_vector = provider.embed(entry.definition)
        description_vectors = provider.embed_batch(
            [candidate.description_sv or "" for candidate in candidates]
        )
    except (TransportError, ProtocolError, ReplayCacheMiss) as err:
        raise LinkError(entry.id, err) from err
    ranking = rank_candidates(
        definition_vector, list(zip(candidates, description_vectors))
    )
    best = ranking[0]
    if best.similarity < min_similarity:
        return LinkResult(entry.id, None, best.similarity, ranking)
    return LinkResult(entry.id, best.candidate.qid, best.similarity, ranking)


def link_batch(
    entries: Sequence[Entry],
    provider,
    client: WikidataClient,
    limit: int = MAX_CANDIDATES,
    min_similarity: float = NO_MIN_SIMILARITY,
    workers: int = 1,
) -> list[LinkResult]:
    """Link entries, results in input order.

    A failing entry yields an unlinked result with an error note; the
    rest of the batch is unaffected.  ``workers`` > 1 links entries on
    a thread pool (the client's own limits still cap request traffic).
    """
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    def link_one(entry: Entry) -> LinkResult:
        try:
            return link_entry(
                entry, provider, client, limit=limit, min_similarity=min_similarity
            )
        except LinkError as err:
            return LinkResult(
                entry.id,
                None,
                0.0,
                [],
                error=f"{type(err.cause).__name__}: {err.cause}",
            )

    if workers == 1 or len(entries) <= 1:
        return [link_one(entry) for entry in entries]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(link_one, entries))
